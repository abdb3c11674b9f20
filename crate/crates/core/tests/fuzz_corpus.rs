//! Replays the checked-in fuzz seeds, plus deterministic truncations and byte
//! flips of them, through the same decoders the fuzz targets drive.

use std::path::{Path, PathBuf};

use hyperx::dataset::{decode_payload, parse_manifest};
use hyperx::model::{decode_checkpoint, H2Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fuzz_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz")
}

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = fuzz_dir().join("corpus").join(target);
    let mut paths: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    let out: Vec<_> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

/// Each seed, 20 random-length prefixes and 40 copies with a few bytes flipped.
fn variants(seed: &[u8], rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let mut out = vec![seed.to_vec(), Vec::new()];
    for _ in 0..20 {
        out.push(seed[..rng.gen_range(0..seed.len())].to_vec());
    }
    for _ in 0..40 {
        let mut v = seed.to_vec();
        for _ in 0..rng.gen_range(1..4) {
            let i = rng.gen_range(0..v.len());
            v[i] ^= 1 << rng.gen_range(0..8);
        }
        out.push(v);
    }
    out
}

#[test]
fn checkpoint_seeds_decode_or_fail_cleanly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seeds = seeds("checkpoint_decode");
    let ck = decode_checkpoint(&seeds[0]).unwrap();
    H2Model::from_checkpoint(&ck).unwrap();
    for seed in &seeds {
        for v in variants(seed, &mut rng) {
            if let Ok(ck) = decode_checkpoint(&v) {
                let _ = H2Model::from_checkpoint(&ck);
            }
        }
    }
}

#[test]
fn manifest_seeds_parse_or_fail_cleanly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seeds = seeds("manifest_parse");
    parse_manifest(&seeds[0]).unwrap();
    for seed in &seeds {
        for v in variants(seed, &mut rng) {
            if let Ok(m) = parse_manifest(&v) {
                for t in &m.trials {
                    assert!(decode_payload(&m, &t.id, &[0u8; 16]).is_err());
                }
            }
        }
    }
}

#[test]
fn payload_seeds_decode_or_fail_cleanly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let manifest = parse_manifest(&std::fs::read(fuzz_dir().join("fixtures/payload_manifest.json")).unwrap()).unwrap();
    let id = &manifest.trials[0].id;
    let seeds = seeds("payload_decode");
    assert_eq!(&decode_payload(&manifest, id, &seeds[0]).unwrap().id, id);
    for seed in &seeds {
        for v in variants(seed, &mut rng) {
            let decoded = decode_payload(&manifest, id, &v);
            if v.len() != seeds[0].len() {
                assert!(decoded.is_err(), "{} bytes decoded", v.len());
            }
        }
    }
}
