//! Regenerates the checked-in fuzz seeds under `fuzz/`.
//!
//! cargo run -p hyperx-core --example write_fuzz_seeds -- fuzz

use std::path::Path;

use hyperx::dataset::{encode_trial, generate_synthetic, DatasetWriter, SyntheticSpec};
use hyperx::model::{encode_checkpoint, EncoderVariant, EncoderWidths, H2Model, ModelConfig};
use hyperx::trainer::{rng_for, RngStream};

fn write(path: &Path, bytes: &[u8]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
    println!("{} ({} bytes)", path.display(), bytes.len());
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fuzz".into());
    let root = Path::new(&root);

    let spec = SyntheticSpec { num_subjects: 1, trials_per_subject: 2, duration_s: 2.0, pre_trial_ms: 500, ..Default::default() };
    let ds = generate_synthetic(&spec).unwrap();
    let tmp = std::env::temp_dir().join("hyperx-fuzz-seeds");
    let mut w = DatasetWriter::create(&tmp, ds.stage, true).unwrap();
    for t in &ds.trials {
        w.push(t).unwrap();
    }
    let manifest = w.finish().unwrap();
    std::fs::remove_dir_all(&tmp).ok();
    write(&root.join("corpus/manifest_parse/synthetic"), &manifest);
    write(&root.join("fixtures/payload_manifest.json"), &manifest);
    let (_, payload) = encode_trial(ds.stage, &ds.trials[0]).unwrap();
    write(&root.join("corpus/payload_decode/trial0"), &payload);
    write(&root.join("corpus/payload_decode/truncated"), &payload[..payload.len() / 2]);

    let cfg = ModelConfig {
        variant: EncoderVariant::Phc,
        eeg: EncoderWidths { n: 2, hidden: 4, embed: 4, flat_hidden: 4 },
        ecg: EncoderWidths { n: 1, hidden: 2, embed: 2, flat_hidden: 2 },
        eye: EncoderWidths { n: 2, hidden: 4, embed: 4, flat_hidden: 4 },
        gsr_width: 2,
        fusion_widths: vec![4],
        ..Default::default()
    };
    let model = H2Model::new(cfg, &mut rng_for(1, RngStream::Init)).unwrap();
    let bytes = encode_checkpoint(&model, &serde_json::json!({"seed": 1})).unwrap();
    write(&root.join("corpus/checkpoint_decode/phc"), &bytes);
    write(&root.join("corpus/checkpoint_decode/truncated"), &bytes[..bytes.len() / 3]);
}
