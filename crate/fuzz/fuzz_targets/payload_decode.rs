#![no_main]

use std::sync::OnceLock;

use hyperx::dataset::{decode_payload, parse_manifest, Manifest};
use libfuzzer_sys::fuzz_target;

fn manifest() -> &'static Manifest {
    static M: OnceLock<Manifest> = OnceLock::new();
    M.get_or_init(|| parse_manifest(include_bytes!("../fixtures/payload_manifest.json")).expect("fixture manifest"))
}

fuzz_target!(|data: &[u8]| {
    let m = manifest();
    let id = &m.trials[0].id;
    if let Ok(trial) = decode_payload(m, id, data) {
        assert_eq!(&trial.id, id);
    }
});
