//! Times one training step of the default model.
use std::time::Instant;

use hyperx::model::{H2Model, ModelConfig, SegmentBatch};
use hyperx::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let b: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = H2Model::new(cfg.clone(), &mut rng).unwrap();
    let mut r = |c: usize, l: usize| Tensor::from_fn(&[b, c, l], |_| rng.gen_range(-1.0..1.0));
    let batch = SegmentBatch { eeg: r(10, 1280), ecg: r(3, 1280), gsr: r(1, 1280), eye: r(4, 600) };
    let labels: Vec<usize> = (0..b).map(|i| i % 3).collect();
    let mut drng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, true, &mut drng).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits, &labels).unwrap();
        let t1 = Instant::now();
        tape.backward_into(loss, model.store_mut()).unwrap();
        let t2 = Instant::now();
        println!("forward {:?} backward {:?}", t1 - t0, t2 - t1);
    }
    let t0 = Instant::now();
    model.predict(&batch).unwrap();
    println!("predict {:?}", t0.elapsed());
}
