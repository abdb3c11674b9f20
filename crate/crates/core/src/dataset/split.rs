use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Segment, Target};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    /// Segments are assigned independently; segments of one trial may land on
    /// both sides.
    #[default]
    Segment,
    /// Whole trials are assigned, so no trial leaks across the split.
    Trial,
}

impl std::str::FromStr for SplitUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(SplitUnit::Segment),
            "trial" => Ok(SplitUnit::Trial),
            _ => Err(Error::Config(format!("unknown split unit {s:?} (expected segment or trial)"))),
        }
    }
}

/// A recorded train/test assignment of segment keys (`<trial>#<index>`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitAssignment {
    pub unit: SplitUnit,
    pub target: Target,
    pub seed: u64,
    pub train_frac: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Format(format!("train_frac {} not in (0, 1)", self.train_frac)));
        }
        let train: std::collections::HashSet<&str> = self.train.iter().map(String::as_str).collect();
        if train.len() != self.train.len() {
            return Err(Error::Format("split lists a training item twice".into()));
        }
        if let Some(k) = self.test.iter().find(|k| train.contains(k.as_str())) {
            return Err(Error::Format(format!("{k:?} is in both splits")));
        }
        Ok(())
    }

    /// Resolves the assignment to `(train, test)` indices into `segments`.
    pub fn resolve(&self, segments: &[Segment]) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let index: std::collections::HashMap<String, usize> =
            segments.iter().enumerate().map(|(i, s)| (s.key(), i)).collect();
        let lookup = |keys: &[String]| -> Result<Vec<usize>> {
            keys.iter()
                .map(|k| {
                    index
                        .get(k)
                        .copied()
                        .ok_or_else(|| Error::Format(format!("split refers to unknown segment {k:?}")))
                })
                .collect()
        };
        Ok((lookup(&self.train)?, lookup(&self.test)?))
    }
}

/// Per-class stratified split of item indices. Each class with `n` items puts
/// `round(train_frac · n)` of them (clamped to `1..n-1`) into train, chosen by
/// a seeded shuffle. Both outputs are sorted.
pub fn stratified_indices(labels: &[usize], train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction {train_frac} not in (0, 1)")));
    }
    if labels.is_empty() {
        return Err(Error::Stratification("no items to split".into()));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        match members.len() {
            0 => continue,
            1 => {
                return Err(Error::Stratification(format!(
                    "class {c} has a single item and cannot appear in both splits"
                )))
            }
            _ => {}
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let k = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified split of segments on `target`, at segment or trial granularity.
pub fn stratified_split(
    segments: &[Segment],
    target: Target,
    train_frac: f64,
    seed: u64,
    unit: SplitUnit,
) -> Result<SplitAssignment> {
    let (train, test) = match unit {
        SplitUnit::Segment => {
            let labels: Vec<usize> = segments.iter().map(|s| s.label(target)).collect();
            stratified_indices(&labels, train_frac, seed)?
        }
        SplitUnit::Trial => {
            let mut trials: Vec<(&str, usize)> = Vec::new();
            for s in segments {
                match trials.iter().find(|(id, _)| *id == s.trial_id) {
                    Some(&(_, label)) if label != s.label(target) => {
                        return Err(Error::Stratification(format!(
                            "segments of trial {} carry different labels",
                            s.trial_id
                        )))
                    }
                    Some(_) => {}
                    None => trials.push((&s.trial_id, s.label(target))),
                }
            }
            let labels: Vec<usize> = trials.iter().map(|t| t.1).collect();
            let (tr, _) = stratified_indices(&labels, train_frac, seed)?;
            let chosen: std::collections::HashSet<&str> = tr.iter().map(|&i| trials[i].0).collect();
            (0..segments.len()).partition(|&i| chosen.contains(segments[i].trial_id.as_str()))
        }
    };
    let keys = |idx: &[usize]| idx.iter().map(|&i| segments[i].key()).collect();
    Ok(SplitAssignment { unit, target, seed, train_frac, train: keys(&train), test: keys(&test) })
}
