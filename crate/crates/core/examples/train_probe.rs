//! Trains the default model on the synthetic set and prints the epoch history.
//! Usage: train_probe <variant> <noise> <max_lr> <epochs> [seed]
use std::time::Instant;

use hyperx::dataset::{stratified_split, synthetic_segments, SplitUnit, SyntheticSpec, Target};
use hyperx::model::{H2Model, ModelConfig};
use hyperx::signal::PipelineConfig;
use hyperx::trainer::{rng_for, train, RngStream, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = args.get(1).map_or("phc", String::as_str).parse().unwrap();
    let noise: f64 = args.get(2).map_or(0.0, |s| s.parse().unwrap());
    let max_lr: f64 = args.get(3).map_or(7.96e-6, |s| s.parse().unwrap());
    let epochs: usize = args.get(4).map_or(50, |s| s.parse().unwrap());
    let seed: u64 = args.get(5).map_or(1, |s| s.parse().unwrap());
    let t0 = Instant::now();
    let spec = SyntheticSpec { noise, ..Default::default() };
    let segs = synthetic_segments(&spec, &PipelineConfig::default()).unwrap();
    let split = stratified_split(&segs, Target::Arousal, 0.8, seed, SplitUnit::Segment).unwrap();
    let (tr, te) = split.resolve(&segs).unwrap();
    eprintln!("data ready in {:.1}s", t0.elapsed().as_secs_f64());
    let cfg = TrainConfig { max_lr, epochs, patience: epochs, seed, track_train_accuracy: true, ..Default::default() };
    let model = H2Model::new(ModelConfig { variant, ..Default::default() }, &mut rng_for(seed, RngStream::Init)).unwrap();
    let out = train(model, &segs, &tr, &te, &cfg, &mut |r| {
        eprintln!(
            "{:>3} {:>7.1}s loss {:.4} bacc {:.3} train {:.3} test acc {:.3} f1 {:.3}",
            r.epoch,
            t0.elapsed().as_secs_f64(),
            r.train_loss,
            r.train_batch_accuracy,
            r.train_accuracy.unwrap_or(f64::NAN),
            r.test_accuracy,
            r.test_macro_f1
        )
    })
    .unwrap();
    println!("best epoch {} f1 {:.4}", out.best_epoch, out.best_metrics.map_or(0.0, |m| m.macro_f1));
}
