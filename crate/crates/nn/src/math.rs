//! Dense tensor primitives with explicit backward passes.
//!
//! Everything is `f64` and deterministic: reductions run in fixed order, so
//! repeated forward/backward calls are bit-identical.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    c
}

pub fn matmul_acc(a: ArrayView2<f64>, b: ArrayView2<f64>, c: &mut ArrayViewMut2<f64>) {
    general_mat_mul(1.0, &a, &b, 1.0, c);
}

/// `x @ w + b` for row-major batches of inputs.
pub fn linear_fwd(x: ArrayView2<f64>, w: ArrayView2<f64>, b: Option<ArrayView1<f64>>) -> Array2<f64> {
    let mut y = matmul(x, w);
    if let Some(b) = b {
        y += &b;
    }
    y
}

/// Backward of [`linear_fwd`]: returns `dx` and accumulates `dw` / `db`.
pub fn linear_bwd(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    dw: &mut ArrayViewMut2<f64>,
    db: Option<&mut Array1<f64>>,
) -> Array2<f64> {
    matmul_acc(x.t(), dy, dw);
    if let Some(db) = db {
        *db += &dy.sum_axis(Axis(0));
    }
    matmul(dy, w.t())
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Backward through ReLU given the *post-activation* values.
pub fn relu_bwd_inplace(dy: &mut Array2<f64>, post: &Array2<f64>) {
    dy.zip_mut_with(post, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Row-wise softmax, numerically shifted by the row max.
pub fn softmax_rows_inplace(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        softmax_slice(row.as_slice_mut().expect("contiguous row"));
    }
}

pub fn softmax_slice(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // fully masked row: leave a zero distribution
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of a row softmax: `dlogits = y .* (dy - dot(dy, y))` per row.
/// Masked entries (probability exactly zero) receive zero gradient.
pub fn softmax_bwd_slice(y: &[f64], dy: &[f64], dlogits: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for i in 0..y.len() {
        dlogits[i] = y[i] * (dy[i] - dot);
    }
}

/// Gradient of `log p[chosen]` with respect to the logits of a softmax,
/// scaled by `weight`: `weight * (onehot - p)`.
pub fn log_softmax_pick_bwd(probs: &[f64], chosen: usize, weight: f64, dlogits: &mut [f64]) {
    for (i, &p) in probs.iter().enumerate() {
        dlogits[i] += weight * (if i == chosen { 1.0 - p } else { -p });
    }
}

/// `y = clamp * tanh(x)` applied element-wise.
pub fn tanh_clamp(x: &Array2<f64>, clamp: f64) -> Array2<f64> {
    x.mapv(|v| clamp * v.tanh())
}

/// Backward of [`tanh_clamp`] given the post-activation values.
pub fn tanh_clamp_bwd(dy: &Array2<f64>, post: &Array2<f64>, clamp: f64) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(post, |d, &y| {
        let t = y / clamp;
        *d *= clamp * (1.0 - t * t);
    });
    dx
}

pub const NORM_EPS: f64 = 1e-5;

pub struct NormCache {
    pub xhat: Array3<f64>,
    /// `1 / sqrt(var + eps)` per `(batch, channel)`.
    pub inv_std: Array2<f64>,
}

/// Instance normalization over the node axis: for every batch element and
/// feature channel, normalize across nodes, then apply the learned affine.
/// Input shape `[batch, nodes, channels]`.
pub fn instance_norm_fwd(
    x: &Array3<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> (Array3<f64>, NormCache) {
    let (b, v, c) = x.dim();
    let vf = v as f64;
    let mut xhat = Array3::zeros((b, v, c));
    let mut inv_std = Array2::zeros((b, c));
    let mut y = Array3::zeros((b, v, c));
    for bi in 0..b {
        for ci in 0..c {
            let mut mean = 0.0;
            for vi in 0..v {
                mean += x[[bi, vi, ci]];
            }
            mean /= vf;
            let mut var = 0.0;
            for vi in 0..v {
                let d = x[[bi, vi, ci]] - mean;
                var += d * d;
            }
            var /= vf;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[[bi, ci]] = inv;
            for vi in 0..v {
                let xh = (x[[bi, vi, ci]] - mean) * inv;
                xhat[[bi, vi, ci]] = xh;
                y[[bi, vi, ci]] = gamma[ci] * xh + beta[ci];
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Backward of [`instance_norm_fwd`]; accumulates `dgamma` / `dbeta`.
pub fn instance_norm_bwd(
    dy: &Array3<f64>,
    cache: &NormCache,
    gamma: ArrayView1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array3<f64> {
    let (b, v, c) = dy.dim();
    let vf = v as f64;
    let mut dx = Array3::zeros((b, v, c));
    for bi in 0..b {
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for vi in 0..v {
                let d = dy[[bi, vi, ci]];
                let xh = cache.xhat[[bi, vi, ci]];
                sum_dy += d;
                sum_dy_xhat += d * xh;
                dgamma[ci] += d * xh;
                dbeta[ci] += d;
            }
            let inv = cache.inv_std[[bi, ci]];
            let g = gamma[ci];
            for vi in 0..v {
                let d = dy[[bi, vi, ci]];
                let xh = cache.xhat[[bi, vi, ci]];
                dx[[bi, vi, ci]] = g * inv * (d - sum_dy / vf - xh * sum_dy_xhat / vf);
            }
        }
    }
    dx
}

/// Flatten `[b, v, d]` into a `[b*v, d]` view.
pub fn flat2(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (b, v, d) = x.dim();
    x.view().into_shape_with_order((b * v, d)).expect("standard layout")
}

/// Reassemble `[b*v, d]` into `[b, v, d]`.
pub fn unflat(x: Array2<f64>, b: usize, v: usize) -> Array3<f64> {
    let d = x.ncols();
    x.into_shape_with_order((b, v, d)).expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        softmax_rows_inplace(&mut x);
        for row in x.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.7];
        let dy = [0.5, -0.25, 1.5, 0.0];
        let mut y = logits;
        softmax_slice(&mut y);
        let mut analytic = [0.0; 4];
        softmax_bwd_slice(&y, &dy, &mut analytic);
        let eps = 1e-6;
        for i in 0..4 {
            let mut lp = logits;
            lp[i] += eps;
            softmax_slice(&mut lp);
            let mut lm = logits;
            lm[i] -= eps;
            softmax_slice(&mut lm);
            let fd: f64 = (0..4).map(|j| dy[j] * (lp[j] - lm[j]) / (2.0 * eps)).sum();
            assert!((fd - analytic[i]).abs() < 1e-8, "dim {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn instance_norm_backward_matches_finite_differences() {
        let x = array![[[0.5, -1.0], [2.0, 0.3], [-0.7, 1.9]]]; // [1,3,2]
        let gamma = array![1.3, 0.8];
        let beta = array![0.1, -0.2];
        let dy = array![[[1.0, 0.5], [-0.3, 0.2], [0.7, -1.1]]];
        let (_, cache) = instance_norm_fwd(&x, gamma.view(), beta.view());
        let mut dgamma = Array1::zeros(2);
        let mut dbeta = Array1::zeros(2);
        let dx = instance_norm_bwd(&dy, &cache, gamma.view(), &mut dgamma, &mut dbeta);

        let loss = |x: &Array3<f64>, g: &Array1<f64>, be: &Array1<f64>| -> f64 {
            let (y, _) = instance_norm_fwd(x, g.view(), be.view());
            (y * &dy).sum()
        };
        let eps = 1e-6;
        for vi in 0..3 {
            for ci in 0..2 {
                let mut xp = x.clone();
                xp[[0, vi, ci]] += eps;
                let mut xm = x.clone();
                xm[[0, vi, ci]] -= eps;
                let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * eps);
                assert!((fd - dx[[0, vi, ci]]).abs() < 1e-7, "x[{vi},{ci}]");
            }
        }
        for ci in 0..2 {
            let mut gp = gamma.clone();
            gp[ci] += eps;
            let mut gm = gamma.clone();
            gm[ci] -= eps;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * eps);
            assert!((fd - dgamma[ci]).abs() < 1e-7, "gamma[{ci}]");
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let x = array![[0.5, -1.0, 0.3], [2.0, 0.1, -0.4]];
        let w = array![[0.2, -0.3], [1.1, 0.4], [-0.6, 0.9]];
        let dy = array![[1.0, -0.5], [0.25, 0.75]];
        let mut dw = Array2::zeros((3, 2));
        let mut db = Array1::zeros(2);
        let dx = linear_bwd(x.view(), w.view(), dy.view(), &mut dw.view_mut(), Some(&mut db));

        let loss = |x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| -> f64 {
            (linear_fwd(x.view(), w.view(), Some(b.view())) * &dy).sum()
        };
        let b0 = Array1::zeros(2);
        let eps = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += eps;
                let mut xm = x.clone();
                xm[[r, c]] -= eps;
                let fd = (loss(&xp, &w, &b0) - loss(&xm, &w, &b0)) / (2.0 * eps);
                assert!((fd - dx[[r, c]]).abs() < 1e-7);
            }
        }
        for r in 0..3 {
            for c in 0..2 {
                let mut wp = w.clone();
                wp[[r, c]] += eps;
                let mut wm = w.clone();
                wm[[r, c]] -= eps;
                let fd = (loss(&x, &wp, &b0) - loss(&x, &wm, &b0)) / (2.0 * eps);
                assert!((fd - dw[[r, c]]).abs() < 1e-7);
            }
        }
        assert!((db[0] - 1.25).abs() < 1e-12 && (db[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tanh_clamp_bounds_and_gradient() {
        let x = array![[10.0, -10.0, 0.5]];
        let y = tanh_clamp(&x, 6.0);
        assert!(y.iter().all(|&v| v.abs() <= 6.0));
        let dy = array![[1.0, 1.0, 1.0]];
        let dx = tanh_clamp_bwd(&dy, &y, 6.0);
        let eps = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            xp[[0, i]] += eps;
            let mut xm = x.clone();
            xm[[0, i]] -= eps;
            let fd = (tanh_clamp(&xp, 6.0)[[0, i]] - tanh_clamp(&xm, 6.0)[[0, i]]) / (2.0 * eps);
            assert!((fd - dx[[0, i]]).abs() < 1e-6);
        }
    }
}
