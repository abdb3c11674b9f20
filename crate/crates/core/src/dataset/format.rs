//! On-disk layout: `manifest.json` plus one `trials/<id>.bin` per trial holding
//! each modality's `[channels, samples]` block as little-endian f32, in the
//! order of the manifest's modality table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::SplitAssignment;
use super::{Dataset, Signals, Stage, Trial};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::tensor::Tensor;

pub const FORMAT_NAME: &str = "hyperx-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEntry {
    pub name: String,
    pub channels: usize,
    pub rate_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub id: String,
    pub subject: u32,
    pub arousal: u8,
    pub valence: u8,
    pub pre_trial_ms: u32,
    /// Samples per channel, by modality name.
    pub samples: BTreeMap<String, usize>,
    /// Byte offset of each modality block within the payload.
    pub offsets: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub stage: Stage,
    pub modalities: Vec<ModalityEntry>,
    pub trials: Vec<TrialEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<SplitAssignment>,
}

/// A manifest's modality table resolved to known modalities, in payload order.
#[derive(Clone, Debug)]
struct Layout(Vec<(Modality, usize)>);

fn modality_from_name(name: &str) -> Result<Modality> {
    Modality::ALL
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| Error::Format(format!("unknown modality {name:?}")))
}

impl Manifest {
    fn layout(&self) -> Result<Layout> {
        if self.format != FORMAT_NAME {
            return Err(Error::Format(format!("manifest format is {:?}, expected {FORMAT_NAME:?}", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", self.version)));
        }
        let mut out = Vec::new();
        for e in &self.modalities {
            let m = modality_from_name(&e.name)?;
            if out.iter().any(|(seen, _)| *seen == m) {
                return Err(Error::Format(format!("modality {:?} listed twice", e.name)));
            }
            let (channels, rate) = (self.stage.channels(m), self.stage.rate_hz(m));
            if e.channels != channels || e.rate_hz != rate {
                return Err(Error::Format(format!(
                    "{} at stage {:?} must have {channels} channels at {rate} Hz, manifest says {} at {}",
                    e.name, self.stage, e.channels, e.rate_hz
                )));
            }
            out.push((m, channels));
        }
        if out.len() != Modality::ALL.len() {
            return Err(Error::Format("manifest must list eeg, ecg, gsr and eye".into()));
        }
        Ok(Layout(out))
    }

    /// Structural validation of the whole manifest: modality table, unique ids,
    /// labels, per-trial sample counts, offsets and durations.
    pub fn validate(&self) -> Result<()> {
        let layout = self.layout()?;
        let mut ids = std::collections::HashSet::new();
        for t in &self.trials {
            if !valid_id(&t.id) {
                return Err(Error::Format(format!("trial id {:?} must be non-empty [A-Za-z0-9_-]", t.id)));
            }
            if !ids.insert(t.id.as_str()) {
                return Err(Error::Format(format!("duplicate trial id {:?}", t.id)));
            }
            self.entry_geometry(&layout, t)?;
        }
        if let Some(s) = &self.splits {
            s.validate()?;
        }
        Ok(())
    }

    /// Payload length in bytes implied by a validated entry.
    fn entry_geometry(&self, layout: &Layout, t: &TrialEntry) -> Result<usize> {
        let integrity = |detail: String| Error::Integrity { trial: t.id.clone(), detail };
        for label in [t.arousal, t.valence] {
            if label > 2 {
                return Err(integrity(format!("label {label} outside 0..=2")));
            }
        }
        if t.samples.len() != layout.0.len() || t.offsets.len() != layout.0.len() {
            return Err(integrity("samples/offsets must list every modality exactly once".into()));
        }
        let mut offset = 0usize;
        let mut duration: Option<f64> = None;
        let tolerance = layout
            .0
            .iter()
            .map(|&(m, _)| 1.0 / self.stage.rate_hz(m))
            .fold(0.0, f64::max)
            + 1e-9;
        for &(m, channels) in &layout.0 {
            let name = m.name();
            let n = *t.samples.get(name).ok_or_else(|| integrity(format!("no sample count for {name}")))?;
            let at = *t.offsets.get(name).ok_or_else(|| integrity(format!("no offset for {name}")))?;
            if n == 0 {
                return Err(integrity(format!("{name} has no samples")));
            }
            if at != offset {
                return Err(integrity(format!("{name} block starts at byte {at}, expected {offset}")));
            }
            let bytes = channels
                .checked_mul(n)
                .and_then(|v| v.checked_mul(4))
                .ok_or_else(|| integrity(format!("{name} sample count overflows")))?;
            offset = offset
                .checked_add(bytes)
                .ok_or_else(|| integrity("payload size overflows".into()))?;
            // Every modality must span the same duration, up to one sample at
            // the slowest rate.
            let secs = n as f64 / self.stage.rate_hz(m);
            match duration {
                None => duration = Some(secs),
                Some(d) if (d - secs).abs() > tolerance => {
                    return Err(integrity(format!("{name} spans {secs:.4} s, other modalities {d:.4} s")));
                }
                _ => {}
            }
        }
        Ok(offset)
    }

    fn entry(&self, id: &str) -> Result<&TrialEntry> {
        self.trials
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Format(format!("no trial {id:?} in manifest")))
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Parses and validates `manifest.json` contents.
pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    m.validate()?;
    Ok(m)
}

/// Decodes one trial payload against its (validated) manifest entry.
pub fn decode_payload(manifest: &Manifest, trial_id: &str, bytes: &[u8]) -> Result<Trial> {
    let layout = manifest.layout()?;
    let entry = manifest.entry(trial_id)?;
    let expected = manifest.entry_geometry(&layout, entry)?;
    if bytes.len() != expected {
        return Err(Error::Integrity {
            trial: entry.id.clone(),
            detail: format!("payload has {} bytes, manifest implies {expected}", bytes.len()),
        });
    }
    let mut blocks: BTreeMap<Modality, Tensor> = BTreeMap::new();
    for &(m, channels) in &layout.0 {
        let n = entry.samples[m.name()];
        let at = entry.offsets[m.name()];
        let data = bytes[at..at + channels * n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        blocks.insert(m, Tensor::new(&[channels, n], data)?);
    }
    let mut take = |m| blocks.remove(&m).expect("every modality decoded");
    Ok(Trial {
        id: entry.id.clone(),
        subject: entry.subject,
        arousal: entry.arousal,
        valence: entry.valence,
        pre_trial_ms: entry.pre_trial_ms,
        signals: Signals {
            eeg: take(Modality::Eeg),
            ecg: take(Modality::Ecg),
            gsr: take(Modality::Gsr),
            eye: take(Modality::Eye),
        },
    })
}

/// Manifest entry and payload bytes for one trial.
pub fn encode_trial(stage: Stage, trial: &Trial) -> Result<(TrialEntry, Vec<u8>)> {
    trial.validate(stage)?;
    if !valid_id(&trial.id) {
        return Err(Error::InvalidInput(format!("trial id {:?} must be non-empty [A-Za-z0-9_-]", trial.id)));
    }
    let mut samples = BTreeMap::new();
    let mut offsets = BTreeMap::new();
    let mut bytes = Vec::new();
    for m in Modality::ALL {
        let t = trial.signals.get(m);
        samples.insert(m.name().to_string(), t.shape()[1]);
        offsets.insert(m.name().to_string(), bytes.len());
        for &v in t.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("trial {} {}", trial.id, m.name())));
            }
            bytes.extend_from_slice(&f.to_le_bytes());
        }
    }
    let entry = TrialEntry {
        id: trial.id.clone(),
        subject: trial.subject,
        arousal: trial.arousal,
        valence: trial.valence,
        pre_trial_ms: trial.pre_trial_ms,
        samples,
        offsets,
    };
    Ok((entry, bytes))
}

pub fn modality_table(stage: Stage) -> Vec<ModalityEntry> {
    Modality::ALL
        .iter()
        .map(|&m| ModalityEntry { name: m.name().into(), channels: stage.channels(m), rate_hz: stage.rate_hz(m) })
        .collect()
}

/// Incremental writer, so large datasets can be produced one trial at a time.
pub struct DatasetWriter {
    dir: std::path::PathBuf,
    manifest: Manifest,
}

impl DatasetWriter {
    /// Creates `dir` (and `dir/trials`). Fails if `dir` exists and is non-empty
    /// unless `force` is set, in which case an existing manifest and trial
    /// directory are replaced.
    pub fn create(dir: &Path, stage: Stage, force: bool) -> Result<Self> {
        if dir.exists() {
            let non_empty = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
            if non_empty && !force {
                return Err(Error::Config(format!(
                    "{} exists and is not empty (use --force to overwrite)",
                    dir.display()
                )));
            }
            let trials = dir.join("trials");
            if trials.exists() {
                std::fs::remove_dir_all(&trials).map_err(|e| Error::io(&trials, e))?;
            }
        }
        let trials = dir.join("trials");
        std::fs::create_dir_all(&trials).map_err(|e| Error::io(&trials, e))?;
        Ok(DatasetWriter {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                format: FORMAT_NAME.into(),
                version: FORMAT_VERSION,
                stage,
                modalities: modality_table(stage),
                trials: Vec::new(),
                splits: None,
            },
        })
    }

    pub fn push(&mut self, trial: &Trial) -> Result<()> {
        let (entry, bytes) = encode_trial(self.manifest.stage, trial)?;
        if self.manifest.trials.iter().any(|t| t.id == entry.id) {
            return Err(Error::InvalidInput(format!("duplicate trial id {:?}", entry.id)));
        }
        let path = self.dir.join("trials").join(format!("{}.bin", entry.id));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.trials.push(entry);
        Ok(())
    }

    pub fn set_splits(&mut self, splits: Option<SplitAssignment>) {
        self.manifest.splits = splits;
    }

    /// Writes `manifest.json` and returns its bytes.
    pub fn finish(self) -> Result<Vec<u8>> {
        let bytes = manifest_bytes(&self.manifest)?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        Ok(bytes)
    }
}

fn manifest_bytes(m: &Manifest) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(m)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_dataset(ds: &Dataset, dir: &Path, force: bool) -> Result<()> {
    let mut w = DatasetWriter::create(dir, ds.stage, force)?;
    for t in &ds.trials {
        w.push(t)?;
    }
    w.set_splits(ds.splits.clone());
    w.finish()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&bytes)
}

/// Loads trials one at a time in manifest order.
pub fn load_trials<'a>(dir: &'a Path, manifest: &'a Manifest) -> impl Iterator<Item = Result<Trial>> + 'a {
    manifest.trials.iter().map(move |e| {
        let path = dir.join("trials").join(format!("{}.bin", e.id));
        let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
        decode_payload(manifest, &e.id, &bytes)
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let trials = load_trials(dir, &manifest).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { stage: manifest.stage, trials, splits: manifest.splits.clone() })
}
