#![no_main]

use hyperx::dataset::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_manifest(data) {
        // Every trial of a validated manifest must reject a wrong-sized payload without panicking.
        for t in &m.trials {
            let _ = hyperx::dataset::decode_payload(&m, &t.id, &[0u8; 16]);
        }
    }
});
