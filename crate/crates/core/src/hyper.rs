//! Parameterized hypercomplex multiplication (PHM) and convolution (PHC) layers.
//!
//! Both layers hold `n` learnable algebra matrices `A_i` (stored as one
//! `[n,n,n]` tensor) and `n` filter blocks `F_i`. Their effective weight is
//! the Kronecker sum
//!
//! ```text
//! W = Σ_i A_i ⊗ F_i
//! ```
//!
//! which has the shape of the ordinary dense (`[d_out, d_in]`) or convolution
//! (`[c_out, c_in, k]`) weight it replaces, while the filter part only holds
//! `1/n` of its scalars. For convolutions the sum is taken independently for
//! every kernel tap. The weight is rebuilt on the tape at every forward pass so
//! gradients flow to both `A` and `F`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{check_features, he_uniform};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// How a layer's algebra matrices are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlgebraInit {
    /// Hamilton-family structure constants for n ∈ {1, 2, 4}, random signs otherwise.
    #[default]
    Auto,
    /// Real / complex / quaternion structure constants; fails for other n.
    Hamilton,
    /// Entries drawn uniformly from {+1/n, −1/n}.
    RandomSign,
}

/// Structure constants of the real numbers (n=1), complex numbers (n=2) and
/// quaternions (n=4), laid out so that `Σ_i p_i A_i` is the matrix of left
/// multiplication by `p`.
pub fn hamilton_algebra(n: usize) -> Option<Tensor> {
    let data: Vec<f64> = match n {
        1 => vec![1.0],
        2 => vec![
            1., 0., //
            0., 1., //
            0., -1., //
            1., 0.,
        ],
        4 => vec![
            // 1
            1., 0., 0., 0., //
            0., 1., 0., 0., //
            0., 0., 1., 0., //
            0., 0., 0., 1., //
            // i
            0., -1., 0., 0., //
            1., 0., 0., 0., //
            0., 0., 0., -1., //
            0., 0., 1., 0., //
            // j
            0., 0., -1., 0., //
            0., 0., 0., 1., //
            1., 0., 0., 0., //
            0., -1., 0., 0., //
            // k
            0., 0., 0., -1., //
            0., 0., -1., 0., //
            0., 1., 0., 0., //
            1., 0., 0., 0.,
        ],
        _ => return None,
    };
    Some(Tensor::from_parts(vec![n, n, n], data))
}

pub fn random_sign_algebra<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let v = 1.0 / n as f64;
    Tensor::from_fn(&[n, n, n], |_| if rng.gen::<bool>() { v } else { -v })
}

pub fn init_algebra<R: Rng + ?Sized>(n: usize, init: AlgebraInit, rng: &mut R) -> Result<Tensor> {
    match init {
        AlgebraInit::Auto => Ok(hamilton_algebra(n).unwrap_or_else(|| random_sign_algebra(n, rng))),
        AlgebraInit::Hamilton => hamilton_algebra(n)
            .ok_or_else(|| Error::Config(format!("no Hamilton-family algebra for n={n}"))),
        AlgebraInit::RandomSign => Ok(random_sign_algebra(n, rng)),
    }
}

fn check_divides(n: usize, what: &'static str, value: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("hypercomplex dimension n must be positive".into()));
    }
    if !value.is_multiple_of(n) {
        return Err(Error::Divisibility { n, what, value });
    }
    Ok(())
}

/// The `(A, F)` pair behind a hypercomplex layer.
#[derive(Clone, Debug)]
pub struct HypercomplexWeight {
    pub n: usize,
    pub algebra: ParamId,
    pub filters: ParamId,
    /// False when `algebra` is borrowed from another layer.
    pub owns_algebra: bool,
    /// Effective weight shape: `[d_out, d_in]` or `[c_out, c_in, k]`.
    pub shape: Vec<usize>,
}

impl HypercomplexWeight {
    /// Creates `A` (unless `shared` is given) and `F` for an effective weight of
    /// `shape`. `fan_in` sets the He bound of `F`.
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        shape: &[usize],
        fan_in: usize,
        init: AlgebraInit,
        shared: Option<ParamId>,
        rng: &mut R,
    ) -> Result<Self> {
        let (algebra, owns_algebra) = match shared {
            Some(id) => {
                if store.value(id).shape() != [n, n, n] {
                    return Err(Error::Config(format!(
                        "shared algebra has shape {:?}, layer needs [{n},{n},{n}]",
                        store.value(id).shape()
                    )));
                }
                (id, false)
            }
            None => (store.add(format!("{name}.algebra"), init_algebra(n, init, rng)?), true),
        };
        let mut fshape = vec![n, shape[0] / n, shape[1] / n];
        fshape.extend_from_slice(&shape[2..]);
        let filters = store.add(format!("{name}.filters"), he_uniform(&fshape, fan_in, rng));
        Ok(HypercomplexWeight {
            n,
            algebra,
            filters,
            owns_algebra,
            shape: shape.to_vec(),
        })
    }

    /// Records `W = Σ_i A_i ⊗ F_i` on the tape.
    pub fn build(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var> {
        let a = tape.param(store, self.algebra);
        let f = tape.param(store, self.filters);
        tape.kron_sum(a, f)
    }

    /// Scalars in the filter part: the dense-equivalent count divided by n.
    pub fn filter_count(&self) -> usize {
        self.shape.iter().product::<usize>() / self.n
    }

    pub fn algebra_count(&self) -> usize {
        self.n.pow(3)
    }
}

/// Effective weight of a standalone `(A, F)` pair, outside any layer.
pub fn build_weight(algebra: &Tensor, filters: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let a = tape.leaf(algebra.clone());
    let f = tape.leaf(filters.clone());
    let w = tape.kron_sum(a, f)?;
    Ok(tape.value(w).clone())
}

#[derive(Clone, Debug)]
pub struct PhmLayer {
    pub weight: HypercomplexWeight,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl PhmLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: AlgebraInit,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_algebra(store, name, n, d_in, d_out, bias, init, None, rng)
    }

    /// Like [`PhmLayer::new`] but reusing an existing `[n,n,n]` algebra parameter
    /// when `shared` is given.
    #[allow(clippy::too_many_arguments)]
    pub fn with_algebra<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: AlgebraInit,
        shared: Option<ParamId>,
        rng: &mut R,
    ) -> Result<Self> {
        check_divides(n, "d_in", d_in)?;
        check_divides(n, "d_out", d_out)?;
        let weight = HypercomplexWeight::new(store, name, n, &[d_out, d_in], d_in, init, shared, rng)?;
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Ok(PhmLayer { weight, bias, d_in, d_out })
    }

    /// `y = x·Wᵀ + b` for `x: [B, d_in]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        check_features("phm", tape, x, self.d_in)?;
        let w = self.weight.build(tape, store)?;
        let wt = tape.transpose(w)?;
        let y = tape.matmul(x, wt)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_channel_bias(y, b)
            }
            None => Ok(y),
        }
    }

    /// `n³ + d_out·d_in/n + bias`.
    pub fn param_count(&self) -> usize {
        self.weight.algebra_count() + self.weight.filter_count() + self.bias.map_or(0, |_| self.d_out)
    }

    /// Scalars this layer actually stores (a shared algebra is not counted).
    pub fn owned_scalars(&self, store: &ParamStore) -> usize {
        owned_scalars(&self.weight, self.bias, store)
    }
}

#[derive(Clone, Debug)]
pub struct PhcLayer {
    pub weight: HypercomplexWeight,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PhcLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: AlgebraInit,
        shared: Option<ParamId>,
        rng: &mut R,
    ) -> Result<Self> {
        check_divides(n, "c_in", c_in)?;
        check_divides(n, "c_out", c_out)?;
        if kernel == 0 || stride == 0 {
            return Err(Error::Config("kernel size and stride must be at least 1".into()));
        }
        let weight = HypercomplexWeight::new(
            store,
            name,
            n,
            &[c_out, c_in, kernel],
            c_in * kernel,
            init,
            shared,
            rng,
        )?;
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Ok(PhcLayer { weight, bias, c_in, c_out, kernel, stride, padding })
    }

    /// Convolution of `x: [B, c_in, L]` with the built weight.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = self.weight.build(tape, store)?;
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv1d(x, w, b, self.stride, self.padding)
    }

    /// `n³ + c_out·c_in·k/n + bias`.
    pub fn param_count(&self) -> usize {
        self.weight.algebra_count() + self.weight.filter_count() + self.bias.map_or(0, |_| self.c_out)
    }

    pub fn owned_scalars(&self, store: &ParamStore) -> usize {
        owned_scalars(&self.weight, self.bias, store)
    }
}

fn owned_scalars(w: &HypercomplexWeight, bias: Option<ParamId>, store: &ParamStore) -> usize {
    let mut total = store.value(w.filters).numel();
    if w.owns_algebra {
        total += store.value(w.algebra).numel();
    }
    if let Some(b) = bias {
        total += store.value(b).numel();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn param_count_examples() {
        let mut store = ParamStore::new();
        let l = PhmLayer::new(&mut store, "a", 4, 64, 64, true, AlgebraInit::Auto, &mut rng()).unwrap();
        assert_eq!(l.param_count(), 1152);
        assert_eq!(l.owned_scalars(&store), 1152);
        let l = PhmLayer::new(&mut store, "b", 1, 64, 64, true, AlgebraInit::Auto, &mut rng()).unwrap();
        assert_eq!(l.param_count(), 1 + 4096 + 64);
        assert_eq!(l.owned_scalars(&store), 1 + 4096 + 64);
    }

    #[test]
    fn divisibility_error_names_n_and_dimension() {
        let mut store = ParamStore::new();
        let err = PhmLayer::new(&mut store, "x", 3, 10, 9, true, AlgebraInit::Auto, &mut rng()).unwrap_err();
        match err {
            Error::Divisibility { n, what, value } => {
                assert_eq!((n, what, value), (3, "d_in", 10));
            }
            other => panic!("unexpected {other}"),
        }
        let err = PhcLayer::new(&mut store, "y", 4, 8, 6, 3, 1, 1, true, AlgebraInit::Auto, None, &mut rng())
            .unwrap_err();
        assert!(matches!(err, Error::Divisibility { what: "c_out", value: 6, .. }));
    }

    #[test]
    fn n1_weight_is_the_filter() {
        let a = Tensor::full(&[1, 1, 1], 1.0);
        let f = Tensor::from_fn(&[1, 3, 5], |i| i as f64 - 4.0);
        let w = build_weight(&a, &f).unwrap();
        assert_eq!(w.shape(), &[3, 5]);
        assert_eq!(w.data(), f.data());
    }

    #[test]
    fn identity_algebra_gives_block_diagonal() {
        let mut a = Tensor::zeros(&[2, 2, 2]);
        a.data_mut()[0] = 1.0;
        a.data_mut()[3] = 1.0;
        let f = Tensor::from_fn(&[2, 2, 2], |i| if i < 4 { i as f64 + 1.0 } else { 99.0 });
        let w = build_weight(&a, &f).unwrap();
        #[rustfmt::skip]
        let want = [
            1., 2., 0., 0.,
            3., 4., 0., 0.,
            0., 0., 1., 2.,
            0., 0., 3., 4.,
        ];
        assert_eq!(w.data(), &want);
    }

    #[test]
    fn hamilton_only_for_1_2_4() {
        for n in 1..=8 {
            assert_eq!(hamilton_algebra(n).is_some(), matches!(n, 1 | 2 | 4));
        }
        assert!(init_algebra(3, AlgebraInit::Hamilton, &mut rng()).is_err());
        let a = init_algebra(5, AlgebraInit::Auto, &mut rng()).unwrap();
        assert!(a.data().iter().all(|&v| (v.abs() - 0.2).abs() < 1e-15));
    }

    #[test]
    fn shared_algebra_is_not_double_counted() {
        let mut store = ParamStore::new();
        let first = PhcLayer::new(&mut store, "c1", 2, 2, 4, 3, 1, 1, true, AlgebraInit::Auto, None, &mut rng()).unwrap();
        let second = PhcLayer::new(
            &mut store,
            "c2",
            2,
            4,
            4,
            3,
            1,
            1,
            true,
            AlgebraInit::Auto,
            Some(first.weight.algebra),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(second.weight.algebra, first.weight.algebra);
        assert_eq!(second.owned_scalars(&store), second.param_count() - 8);
    }

    #[test]
    fn phm_zero_input_gives_bias() {
        let mut store = ParamStore::new();
        let l = PhmLayer::new(&mut store, "p", 2, 4, 6, true, AlgebraInit::Auto, &mut rng()).unwrap();
        let b = l.bias.unwrap();
        store.get_mut(b).value = Tensor::from_fn(&[6], |i| i as f64);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3, 4]));
        let y = l.forward(&mut tape, &store, x).unwrap();
        for row in tape.value(y).data().chunks(6) {
            assert_eq!(row, &[0., 1., 2., 3., 4., 5.]);
        }
    }
}
