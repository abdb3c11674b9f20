use std::path::PathBuf;

use clap::Args;
use hyperx::dataset::{generate_synthetic, save_dataset, SyntheticSpec};
use serde_json::json;

use crate::config::{git_blob_sha1, write_json, RunConfig, SCHEMA_VERSION};
use crate::error::{io_err, CliResult};
use crate::ConfigArg;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subjects: Option<u32>,
    /// Trials per subject.
    #[arg(long)]
    pub trials: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise standard deviation relative to the unit signal amplitude.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Trial duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn resolve(args: &SynthArgs) -> CliResult<SyntheticSpec> {
    let mut spec = RunConfig::load(args.config.config.as_deref())?.synth;
    if let Some(v) = args.subjects {
        spec.num_subjects = v;
    }
    if let Some(v) = args.trials {
        spec.trials_per_subject = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.noise {
        spec.noise = v;
    }
    if let Some(v) = args.duration {
        spec.duration_s = v;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let spec = resolve(&args)?;
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, &args.out, args.force)?;
    let path = args.out.join("manifest.json");
    let manifest = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    let sha = git_blob_sha1(&manifest);
    write_json(
        &args.out.join("run.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "synth",
            "synth": spec,
            "manifest_sha1": sha,
        }),
    )?;
    println!(
        "wrote {} raw trials ({} subjects × {} trials, {:.0} s each, noise {}) to {}",
        ds.trials.len(),
        spec.num_subjects,
        spec.trials_per_subject,
        spec.duration_s,
        spec.noise,
        args.out.display()
    );
    println!("manifest sha1 {sha}");
    Ok(())
}
