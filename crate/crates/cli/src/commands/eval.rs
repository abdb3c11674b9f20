use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hyperx::dataset::{collate, SplitAssignment};
use hyperx::model::H2Model;
use hyperx::signal::PipelineConfig;
use hyperx::trainer::{evaluate, TrainConfig, EVAL_BATCH};
use serde::Deserialize;
use serde_json::json;

use super::load_data;
use crate::config::{prepare_out_dir, write_bytes, write_json, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Also write the fusion-input embedding of every evaluated segment.
    #[arg(long)]
    pub emit_embeddings: bool,
    #[arg(long)]
    pub force: bool,
}

/// The parts of the checkpoint metadata that evaluation needs.
#[derive(Deserialize)]
struct CheckpointMeta {
    train: TrainConfig,
    pipeline: PipelineConfig,
    split: SplitAssignment,
    manifest_sha1: String,
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    if !args.checkpoint.is_file() {
        return Err(CliError::Data(format!("checkpoint {} not found", args.checkpoint.display())));
    }
    let (model, meta) = H2Model::load(&args.checkpoint)?;
    let meta: CheckpointMeta = serde_json::from_value(meta)
        .map_err(|e| CliError::Data(format!("checkpoint metadata: {e}")))?;
    let data = load_data(&args.data)?;
    if data.manifest_sha1 != meta.manifest_sha1 {
        log::warn!(
            "dataset manifest {} differs from the one used in training ({})",
            data.manifest_sha1,
            meta.manifest_sha1
        );
    }
    let segments = data.segments(&meta.pipeline)?;
    let (train_idx, test_idx) = meta.split.resolve(&segments)?;
    let indices = match args.split {
        SplitChoice::Train => train_idx,
        SplitChoice::Test => test_idx,
        SplitChoice::All => (0..segments.len()).collect(),
    };
    let target = meta.train.target;
    let report = evaluate(&model, &segments, &indices, target)?;
    prepare_out_dir(&args.out, args.force)?;
    let split_name = format!("{:?}", args.split).to_lowercase();
    write_json(
        &args.out.join("eval_report.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "eval",
            "checkpoint": args.checkpoint,
            "split": split_name,
            "target": target,
            "manifest_sha1": data.manifest_sha1,
            "params": model.count_parameters(),
            "metrics": report,
        }),
    )?;
    let k = report.confusion.len();
    let mut csv = String::from("true\\predicted");
    for c in 0..k {
        write!(csv, ",{c}").unwrap();
    }
    csv.push('\n');
    for (t, row) in report.confusion.iter().enumerate() {
        write!(csv, "{t}").unwrap();
        for v in row {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    write_bytes(&args.out.join("confusion.csv"), csv.as_bytes())?;

    if args.emit_embeddings {
        let width = model.config().fusion_input_width();
        let mut csv = String::new();
        for j in 0..width {
            write!(csv, "e{j},").unwrap();
        }
        csv.push_str("label\n");
        for chunk in indices.chunks(EVAL_BATCH) {
            let emb = model.embed(&collate(chunk.iter().map(|&i| &segments[i]))?)?;
            for (row, &i) in emb.data().chunks(width).zip(chunk) {
                for v in row {
                    write!(csv, "{v:e},").unwrap();
                }
                writeln!(csv, "{}", segments[i].label(target)).unwrap();
            }
        }
        write_bytes(&args.out.join("embeddings.csv"), csv.as_bytes())?;
    }

    println!(
        "{split_name} split ({} segments, target {}): macro-F1 {:.4}, accuracy {:.4} ({:.2}%)",
        report.total,
        target.name(),
        report.macro_f1,
        report.accuracy,
        report.accuracy_pct
    );
    for (t, row) in report.confusion.iter().enumerate() {
        println!("  true {t}: {row:?}");
    }
    Ok(())
}
