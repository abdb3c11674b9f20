use std::path::PathBuf;

use clap::Args;
use hyperx::diagnostics::{layer_gradcheck, layer_suite, model_gradcheck, quaternion_check, LayerKind, SuiteOptions};
use hyperx::model::{EncoderVariant, ModelConfig};
use serde_json::json;

use crate::config::{write_json, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Check a single layer type (dense, conv, batchnorm, phm, phc,
    /// activations, cross_entropy) instead of the full suite.
    #[arg(long)]
    pub layer: Option<String>,
    /// Hypercomplex dimension for --layer phm/phc.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// With --layer phm --n 4: also compare against quaternion multiplication.
    #[arg(long)]
    pub hamilton: bool,
    /// Deliberately corrupt the ReLU backward rule; the checks must fail.
    #[arg(long)]
    pub break_backward: bool,
    /// Skip the full-model check.
    #[arg(long)]
    pub skip_model: bool,
    /// Encoder variant for the full-model check.
    #[arg(long, default_value = "phc")]
    pub variant: String,
    /// Sampled entries per parameter tensor in the full-model check.
    #[arg(long, default_value_t = 4)]
    pub entries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the results as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: GradcheckArgs) -> CliResult<()> {
    let opts = SuiteOptions { seed: args.seed, break_backward: args.break_backward };
    let mut results = Vec::new();
    match &args.layer {
        Some(name) => {
            let kind: LayerKind = name.parse()?;
            if args.hamilton {
                if kind != LayerKind::Phm || args.n != 4 {
                    return Err(CliError::Usage("--hamilton requires --layer phm --n 4".into()));
                }
                results.push(quaternion_check(1000, args.seed)?);
            }
            results.push(layer_gradcheck(kind, args.n, &opts)?);
        }
        None => {
            if args.hamilton {
                return Err(CliError::Usage("--hamilton requires --layer phm --n 4".into()));
            }
            results.extend(layer_suite(&opts)?);
            if !args.skip_model {
                let variant: EncoderVariant = args.variant.parse()?;
                let cfg = ModelConfig { variant, ..Default::default() };
                results.push(model_gradcheck(&cfg, args.entries, &opts)?);
            }
        }
    }
    for r in &results {
        println!(
            "{} {:<40} max error {:.3e} (tol {:.0e}, {} entries){}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.tol,
            r.checked,
            r.detail.as_ref().map_or(String::new(), |d| format!(" worst {d}"))
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if let Some(path) = &args.out {
        write_json(
            path,
            &json!({
                "schema_version": SCHEMA_VERSION,
                "command": "gradcheck",
                "break_backward": args.break_backward,
                "results": results,
                "passed": failed == 0,
            }),
        )?;
    }
    if failed > 0 {
        return Err(CliError::Check(format!("{failed} of {} gradient checks failed", results.len())));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}
