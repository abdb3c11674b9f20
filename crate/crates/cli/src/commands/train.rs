use std::path::{Path, PathBuf};

use clap::Args;
use hyperx::dataset::{stratified_split, Segment, SplitAssignment, SplitUnit, Target};
use hyperx::model::{encode_checkpoint, EncoderVariant, H2Model, ParamBreakdown};
use hyperx::trainer::{evaluate, history_csv, rng_for, train, MetricsReport, RngStream, StopReason};
use serde::Serialize;
use serde_json::json;

use super::load_data;
use crate::config::{prepare_out_dir, write_bytes, write_json, RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::ConfigArg;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (raw or preprocessed).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Encoder variant: linear, phm, conv or phc.
    #[arg(long)]
    pub variant: Option<String>,
    /// Train every variant and print a comparison table.
    #[arg(long)]
    pub sweep_variants: bool,
    /// arousal or valence.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated training seeds; summaries report mean ± std.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_lr: Option<f64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// segment or trial.
    #[arg(long)]
    pub split_unit: Option<String>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Disable training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Evaluate the train split after every epoch.
    #[arg(long)]
    pub track_train_accuracy: bool,
    /// Stop once the train accuracy reaches this fraction.
    #[arg(long)]
    pub stop_at_train_accuracy: Option<f64>,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn resolve(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if let Some(v) = &args.variant {
        cfg.model.variant = v.parse()?;
        cfg.variants.clear();
    }
    if args.sweep_variants {
        cfg.variants = EncoderVariant::ALL.to_vec();
    }
    if let Some(t) = &args.target {
        cfg.train.target = t.parse()?;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
        cfg.seeds.clear();
    }
    if let Some(s) = &args.seeds {
        if s.is_empty() {
            return Err(CliError::Usage("--seeds needs at least one seed".into()));
        }
        cfg.seeds = s.clone();
    }
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
        t.patience = t.patience.min(v);
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.max_lr {
        t.max_lr = v;
    }
    if let Some(v) = args.train_frac {
        t.train_frac = v;
    }
    if let Some(v) = &args.split_unit {
        t.split_unit = v.parse::<SplitUnit>()?;
    }
    if args.no_augment {
        t.augment = None;
    }
    if args.track_train_accuracy {
        t.track_train_accuracy = true;
    }
    if let Some(v) = args.stop_at_train_accuracy {
        t.stop_at_train_accuracy = Some(v);
    }
    if let Some(v) = args.split_seed {
        cfg.split_seed = v;
    }
    cfg.train.validate()?;
    for variant in cfg.variant_list() {
        hyperx::model::ModelConfig { variant, ..cfg.model.clone() }.validate()?;
    }
    Ok(cfg)
}

/// The split stored with the dataset if it was made for this target, otherwise
/// a fresh stratified split.
pub fn choose_split(segments: &[Segment], recorded: Option<&SplitAssignment>, cfg: &RunConfig) -> CliResult<SplitAssignment> {
    match recorded {
        Some(s) if s.target == cfg.train.target => Ok(s.clone()),
        _ => Ok(stratified_split(
            segments,
            cfg.train.target,
            cfg.train.train_frac,
            cfg.split_seed,
            cfg.train.split_unit,
        )?),
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    schema_version: u32,
    variant: EncoderVariant,
    seed: u64,
    target: Target,
    params: &'a ParamBreakdown,
    best_epoch: usize,
    epochs_run: usize,
    stop: &'a StopReason,
    test: Option<&'a MetricsReport>,
    train: Option<&'a MetricsReport>,
}

#[derive(Serialize)]
struct SummaryRow {
    variant: EncoderVariant,
    params: usize,
    seeds: Vec<u64>,
    f1: Vec<f64>,
    accuracy: Vec<f64>,
    f1_mean: f64,
    f1_std: f64,
    accuracy_mean: f64,
    accuracy_std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_dir(out: &Path, variant: EncoderVariant, seed: u64) -> PathBuf {
    out.join(variant.name()).join(format!("seed-{seed}"))
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let cfg = resolve(&args)?;
    prepare_out_dir(&args.out, args.force)?;
    let data = load_data(&args.data)?;
    let segments = data.segments(&cfg.pipeline)?;
    let split = choose_split(&segments, data.dataset.splits.as_ref(), &cfg)?;
    let (train_idx, test_idx) = split.resolve(&segments)?;
    log::info!(
        "{} segments from {} trials: {} train / {} test ({} split, target {})",
        segments.len(),
        data.dataset.trials.len(),
        train_idx.len(),
        test_idx.len(),
        match split.unit {
            SplitUnit::Segment => "segment",
            SplitUnit::Trial => "trial",
        },
        cfg.train.target.name()
    );
    write_json(
        &args.out.join("run.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "train",
            "config": cfg,
            "dataset": {
                "path": args.data,
                "manifest_sha1": data.manifest_sha1,
                "stage": data.manifest.stage,
                "trials": data.manifest.trials.len(),
            },
        }),
    )?;

    let mut rows = Vec::new();
    let mut diverged = Vec::new();
    for variant in cfg.variant_list() {
        let model_cfg = hyperx::model::ModelConfig { variant, ..cfg.model.clone() };
        let mut row = SummaryRow {
            variant,
            params: 0,
            seeds: Vec::new(),
            f1: Vec::new(),
            accuracy: Vec::new(),
            f1_mean: 0.0,
            f1_std: 0.0,
            accuracy_mean: 0.0,
            accuracy_std: 0.0,
        };
        for seed in cfg.seed_list() {
            let train_cfg = hyperx::trainer::TrainConfig { seed, ..cfg.train.clone() };
            let model = H2Model::new(model_cfg.clone(), &mut rng_for(seed, RngStream::Init))?;
            let params = model.count_parameters();
            log::info!("training {variant} seed {seed} ({} parameters)", params.total);
            let outcome = train(model, &segments, &train_idx, &test_idx, &train_cfg, &mut |r| {
                log::info!(
                    "{variant} seed {seed} epoch {:>2}: loss {:.4} test acc {:.3} macro-F1 {:.3}{}{}",
                    r.epoch,
                    r.train_loss,
                    r.test_accuracy,
                    r.test_macro_f1,
                    r.train_accuracy.map_or(String::new(), |a| format!(" train acc {a:.3}")),
                    if r.improved { " *" } else { "" }
                )
            })?;
            let dir = run_dir(&args.out, variant, seed);
            std::fs::create_dir_all(&dir).map_err(|e| crate::error::io_err(&dir, e))?;
            let train_metrics = match &outcome.best_metrics {
                Some(_) => Some(evaluate(&outcome.best, &segments, &train_idx, cfg.train.target)?),
                None => None,
            };
            let meta = json!({
                "train": train_cfg,
                "pipeline": cfg.pipeline,
                "split": split,
                "manifest_sha1": data.manifest_sha1,
                "best_epoch": outcome.best_epoch,
                "stop": outcome.stop,
            });
            write_bytes(&dir.join("checkpoint.h2ck"), &encode_checkpoint(&outcome.best, &meta)?)?;
            write_bytes(&dir.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
            write_json(
                &dir.join("report.json"),
                &RunReport {
                    schema_version: SCHEMA_VERSION,
                    variant,
                    seed,
                    target: cfg.train.target,
                    params: &params,
                    best_epoch: outcome.best_epoch,
                    epochs_run: outcome.history.len(),
                    stop: &outcome.stop,
                    test: outcome.best_metrics.as_ref(),
                    train: train_metrics.as_ref(),
                },
            )?;
            if let StopReason::NonFinite(msg) = &outcome.stop {
                log::error!("{variant} seed {seed} diverged ({msg}); kept the last good checkpoint");
                diverged.push(format!("{variant}/seed-{seed}"));
            }
            if let Some(m) = &outcome.best_metrics {
                println!(
                    "{variant} seed {seed}: best epoch {} macro-F1 {:.4} accuracy {:.4} ({:.2}%), {} parameters",
                    outcome.best_epoch, m.macro_f1, m.accuracy, m.accuracy_pct, params.total
                );
                row.seeds.push(seed);
                row.f1.push(m.macro_f1);
                row.accuracy.push(m.accuracy);
            }
            row.params = params.total;
        }
        if !row.f1.is_empty() {
            (row.f1_mean, row.f1_std) = mean_std(&row.f1);
            (row.accuracy_mean, row.accuracy_std) = mean_std(&row.accuracy);
        }
        rows.push(row);
    }

    if rows.len() > 1 || rows.iter().any(|r| r.seeds.len() > 1) {
        println!();
        println!("{:<8} {:>10} {:>17} {:>17}", "variant", "params", "macro-F1", "accuracy");
        for r in &rows {
            println!(
                "{:<8} {:>10} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
                r.variant.name(),
                r.params,
                r.f1_mean,
                r.f1_std,
                r.accuracy_mean,
                r.accuracy_std
            );
        }
    }
    write_json(
        &args.out.join("report.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "target": cfg.train.target,
            "rows": rows,
            "diverged": diverged,
        }),
    )?;
    if !diverged.is_empty() {
        return Err(CliError::Check(format!("training diverged in {}", diverged.join(", "))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::mean_std;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }
}
