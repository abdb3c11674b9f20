#![no_main]

use hyperx::model::{decode_checkpoint, H2Model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint(data) {
        // A structurally valid checkpoint must either build a model or be rejected cleanly.
        let _ = H2Model::from_checkpoint(&ck);
    }
});
