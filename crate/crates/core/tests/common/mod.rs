//! Naive reference implementations shared by the integration tests. None of
//! these call into the library's kernels.
#![allow(dead_code)]

use rand::Rng;

/// `[m,k]·[k,p]` with three nested loops.
pub fn matmul(m: usize, k: usize, p: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * p + j];
            }
            c[i * p + j] = s;
        }
    }
    c
}

/// Direct cross-correlation, `x [B,Cin,L]`, `w [Cout,Cin,K]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize) {
    let lo = (len + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; batch * cout * lo];
    for b in 0..batch {
        for co in 0..cout {
            for o in 0..lo {
                let mut s = bias.map_or(0.0, |bb| bb[co]);
                for ci in 0..cin {
                    for t in 0..k {
                        let pos = (o * stride + t) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            s += w[(co * cin + ci) * k + t] * x[(b * cin + ci) * len + pos as usize];
                        }
                    }
                }
                y[(b * cout + co) * lo + o] = s;
            }
        }
    }
    (y, lo)
}

/// `[p,q] ⊗ [r,s]` with four nested loops.
pub fn kron(p: usize, q: usize, a: &[f64], r: usize, s: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p * r * q * s];
    for i in 0..p {
        for j in 0..q {
            for k in 0..r {
                for l in 0..s {
                    out[(i * r + k) * (q * s) + j * s + l] = a[i * q + j] * b[k * s + l];
                }
            }
        }
    }
    out
}

/// `Σ_i A_i ⊗ F_i` evaluated entry by entry: for every output position find the
/// block (row / p, col / q) and the in-block offset, then sum over i.
/// `a: [n,n,n]`, `f: [n,p,q,taps]`, output `[n p, n q, taps]`.
pub fn kron_sum(n: usize, p: usize, q: usize, taps: usize, a: &[f64], f: &[f64]) -> Vec<f64> {
    let (rows, cols) = (n * p, n * q);
    let mut w = vec![0.0; rows * cols * taps];
    for row in 0..rows {
        for col in 0..cols {
            let (br, ir) = (row / p, row % p);
            let (bc, ic) = (col / q, col % q);
            for t in 0..taps {
                let mut s = 0.0;
                for i in 0..n {
                    s += a[(i * n + br) * n + bc] * f[((i * p + ir) * q + ic) * taps + t];
                }
                w[(row * cols + col) * taps + t] = s;
            }
        }
    }
    w
}

/// Hamilton product `p * q` written out component by component.
pub fn quat_mul(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    let [a1, b1, c1, d1] = p;
    let [a2, b2, c2, d2] = q;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
