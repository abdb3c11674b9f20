//! Raw slice kernels behind the tape operations.

use rayon::prelude::*;

/// `c = a·b (+ c if accumulate)` where `a` is logically `[m,k]` and `b` is `[k,n]`.
/// `a_t`/`b_t` mean the operand is stored transposed (`[k,m]` / `[n,k]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl ConvGeom {
    fn cols_len(&self) -> usize {
        self.cin * self.kernel * self.out_len
    }
}

/// Unfolds one sample `[cin, len]` into `[cin*kernel, out_len]`.
fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let lo = g.out_len;
    for ci in 0..g.cin {
        let row = &x[ci * g.len..(ci + 1) * g.len];
        for t in 0..g.kernel {
            let dst = &mut cols[(ci * g.kernel + t) * lo..(ci * g.kernel + t + 1) * lo];
            for (o, d) in dst.iter_mut().enumerate() {
                let pos = (o * g.stride + t) as isize - g.padding as isize;
                *d = if pos >= 0 && (pos as usize) < g.len {
                    row[pos as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let lo = g.out_len;
    for ci in 0..g.cin {
        let row = &mut dx[ci * g.len..(ci + 1) * g.len];
        for t in 0..g.kernel {
            let src = &cols[(ci * g.kernel + t) * lo..(ci * g.kernel + t + 1) * lo];
            for (o, s) in src.iter().enumerate() {
                let pos = (o * g.stride + t) as isize - g.padding as isize;
                if pos >= 0 && (pos as usize) < g.len {
                    row[pos as usize] += s;
                }
            }
        }
    }
}

/// Cross-correlation forward: `y[b] = W · im2col(x[b]) + bias`.
pub(crate) fn conv1d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let in_sz = g.cin * g.len;
    let out_sz = g.cout * g.out_len;
    let mut y = vec![0.0; g.batch * out_sz];
    y.par_chunks_mut(out_sz)
        .zip(x.par_chunks(in_sz))
        .for_each(|(yb, xb)| {
            let mut cols = vec![0.0; g.cols_len()];
            im2col(g, xb, &mut cols);
            gemm(
                g.cout,
                g.cin * g.kernel,
                g.out_len,
                w,
                false,
                &cols,
                false,
                yb,
                false,
            );
            if let Some(bias) = bias {
                for (co, row) in yb.chunks_mut(g.out_len).enumerate() {
                    row.iter_mut().for_each(|v| *v += bias[co]);
                }
            }
        });
    y
}

/// Returns `(dx, dw, dbias)`; `dx` is only computed when `want_dx`.
pub(crate) fn conv1d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    want_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let in_sz = g.cin * g.len;
    let out_sz = g.cout * g.out_len;
    let ck = g.cin * g.kernel;

    // Per-sample weight gradients are summed afterwards in sample order so the
    // result does not depend on the worker count.
    let per_sample: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..g.batch)
        .into_par_iter()
        .map(|b| {
            let xb = &x[b * in_sz..(b + 1) * in_sz];
            let dyb = &dy[b * out_sz..(b + 1) * out_sz];
            let mut cols = vec![0.0; g.cols_len()];
            im2col(g, xb, &mut cols);
            let mut dw = vec![0.0; g.cout * ck];
            gemm(g.cout, g.out_len, ck, dyb, false, &cols, true, &mut dw, false);
            let dx = want_dx.then(|| {
                gemm(ck, g.cout, g.out_len, w, true, dyb, false, &mut cols, false);
                let mut dxb = vec![0.0; in_sz];
                col2im_add(g, &cols, &mut dxb);
                dxb
            });
            (dw, dx)
        })
        .collect();

    let mut dw = vec![0.0; g.cout * ck];
    let mut dx = want_dx.then(|| Vec::with_capacity(g.batch * in_sz));
    for (dwb, dxb) in per_sample {
        dw.iter_mut().zip(&dwb).for_each(|(a, b)| *a += b);
        if let (Some(dx), Some(dxb)) = (dx.as_mut(), dxb) {
            dx.extend_from_slice(&dxb);
        }
    }

    let mut db = vec![0.0; g.cout];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let start = b * out_sz + co * g.out_len;
            db[co] += dy[start..start + g.out_len].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

/// Geometry of a Kronecker-sum weight: `algebra` is `[n,n,n]`, `filters` is
/// `[n, rows, cols]` (trailing dims of the filter tensor flattened into `cols`).
/// The result is `[n*rows, n*cols]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct KronSumGeom {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
}

/// `W = Σ_i A_i ⊗ F_i`.
pub(crate) fn kron_sum_forward(g: &KronSumGeom, a: &[f64], f: &[f64]) -> Vec<f64> {
    let (n, p, q) = (g.n, g.rows, g.cols);
    let wcols = n * q;
    let mut w = vec![0.0; n * p * wcols];
    for i in 0..n {
        let fi = &f[i * p * q..(i + 1) * p * q];
        for r in 0..n {
            for c in 0..n {
                let coef = a[(i * n + r) * n + c];
                if coef == 0.0 {
                    continue;
                }
                for row in 0..p {
                    let dst = &mut w[(r * p + row) * wcols + c * q..(r * p + row) * wcols + (c + 1) * q];
                    let src = &fi[row * q..(row + 1) * q];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += coef * s);
                }
            }
        }
    }
    w
}

/// Gradients of the Kronecker sum with respect to `A` and `F`.
pub(crate) fn kron_sum_backward(
    g: &KronSumGeom,
    a: &[f64],
    f: &[f64],
    dw: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n, p, q) = (g.n, g.rows, g.cols);
    let wcols = n * q;
    let mut da = vec![0.0; n * n * n];
    let mut df = vec![0.0; n * p * q];
    for i in 0..n {
        let fi = &f[i * p * q..(i + 1) * p * q];
        let dfi = &mut df[i * p * q..(i + 1) * p * q];
        for r in 0..n {
            for c in 0..n {
                let coef = a[(i * n + r) * n + c];
                let mut acc = 0.0;
                for row in 0..p {
                    let blk = &dw[(r * p + row) * wcols + c * q..(r * p + row) * wcols + (c + 1) * q];
                    let frow = &fi[row * q..(row + 1) * q];
                    let dfrow = &mut dfi[row * q..(row + 1) * q];
                    for ((d, &gv), &fv) in dfrow.iter_mut().zip(blk).zip(frow) {
                        *d += coef * gv;
                        acc += gv * fv;
                    }
                }
                da[(i * n + r) * n + c] = acc;
            }
        }
    }
    (da, df)
}
