use std::path::PathBuf;

use clap::Args;
use hyperx::dataset::{load_trials, parse_manifest, DatasetWriter, Stage};
use hyperx::signal::preprocess_trial;
use serde_json::json;

use crate::config::{git_blob_sha1, write_json, RunConfig, SCHEMA_VERSION};
use crate::error::{io_err, CliError, CliResult};
use crate::ConfigArg;

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Raw dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn run(args: PreprocessArgs) -> CliResult<()> {
    let pipeline = RunConfig::load(args.config.config.as_deref())?.pipeline;
    let path = args.data.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    let manifest = parse_manifest(&bytes)?;
    if manifest.stage != Stage::Raw {
        return Err(CliError::Data(format!("{} is already preprocessed", args.data.display())));
    }
    if args.out.exists() && std::fs::canonicalize(&args.out).ok() == std::fs::canonicalize(&args.data).ok() {
        return Err(CliError::Usage("output directory must differ from the input".into()));
    }
    let mut writer = DatasetWriter::create(&args.out, Stage::Preprocessed, args.force)?;
    let mut count = 0;
    // One trial in memory at a time.
    for trial in load_trials(&args.data, &manifest) {
        writer.push(&preprocess_trial(&trial?, &pipeline)?)?;
        count += 1;
    }
    writer.set_splits(manifest.splits.clone());
    let out_manifest = writer.finish()?;
    write_json(
        &args.out.join("run.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "preprocess",
            "pipeline": pipeline,
            "source_manifest_sha1": git_blob_sha1(&bytes),
            "manifest_sha1": git_blob_sha1(&out_manifest),
        }),
    )?;
    println!("preprocessed {count} trials into {}", args.out.display());
    Ok(())
}
