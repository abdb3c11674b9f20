//! Central finite-difference check of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor: `err = |a - n| / max(|a|, |n|, floor)`. Entries whose
    /// gradient is below the floor are effectively compared in absolute terms,
    /// where central differences are dominated by rounding noise.
    pub floor: f64,
    /// Check at most this many entries per parameter tensor (sampled with `seed`).
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
    /// Corrupt one backward rule on the analytic pass (harness self-test).
    pub corrupt_backward: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-6,
            floor: 1e-3,
            max_entries_per_param: None,
            seed: 0,
            corrupt_backward: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub saw_nan: bool,
    pub passed: bool,
}

/// Checks `d f / d x` for a scalar function of a single tensor.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let id = store.add("x", x.clone());
    let opts = GradCheckOptions {
        h,
        tol,
        ..Default::default()
    };
    grad_check_with(&store, |tape, s| {
        let xv = tape.param(s, id);
        f(tape, xv)
    }, &opts)
}

/// Checks the gradient of a scalar loss with respect to every parameter in
/// `store` that requires a gradient.
pub fn grad_check_with<F>(store: &ParamStore, mut f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    tape.set_corrupt_backward(opts.corrupt_backward);
    let loss = f(&mut tape, &work)?;
    tape.backward_into(loss, &mut work)?;
    drop(tape);

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::inference();
        let l = f(&mut tape, s)?;
        Ok(tape.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tol: opts.tol,
        saw_nan: false,
        passed: true,
    };
    let ids: Vec<_> = work.ids().filter(|&id| work.get(id).requires_grad).collect();
    for id in ids {
        let numel = work.value(id).numel();
        let entries: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < numel => rand::seq::index::sample(&mut rng, numel, k).into_vec(),
            _ => (0..numel).collect(),
        };
        for i in entries {
            let analytic = work.grad(id)[i];
            let orig = work.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + opts.h;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - opts.h;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let err = if analytic.is_finite() && numeric.is_finite() {
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor)
            } else {
                report.saw_nan = true;
                f64::INFINITY
            };
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((work.get(id).name.clone(), i));
            }
        }
    }
    report.passed = !report.saw_nan && report.max_rel_error < opts.tol;
    Ok(report)
}
