//! Decoder input pooling: every node embedding is enhanced with a projected
//! element-wise max over all nodes, so each decoder sees local and global
//! structure at once.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::math::{flat2, linear_bwd, linear_fwd, matmul, matmul_acc, unflat};
use crate::store::{Grads, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct PoolIdx {
    pub local: usize,
    pub global: usize,
}

pub fn register<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> PoolIdx {
    PoolIdx {
        local: store.push_weight("pool.local", dim, dim, rng),
        global: store.push_weight("pool.global", dim, dim, rng),
    }
}

pub struct PoolCache {
    enc: Array3<f64>,
    hmax: Array2<f64>,
    argmax: Vec<Vec<usize>>,
}

pub fn forward(
    store: &ParamStore,
    idx: &PoolIdx,
    enc: &Array3<f64>,
    keep_cache: bool,
) -> (Array3<f64>, Option<PoolCache>) {
    let (b, v, d) = enc.dim();
    let mut hmax = Array2::zeros((b, d));
    let mut argmax = vec![vec![0usize; d]; b];
    for bi in 0..b {
        for di in 0..d {
            let mut best = enc[[bi, 0, di]];
            let mut best_i = 0;
            for vi in 1..v {
                let x = enc[[bi, vi, di]];
                if x > best {
                    best = x;
                    best_i = vi;
                }
            }
            hmax[[bi, di]] = best;
            argmax[bi][di] = best_i;
        }
    }
    let local = linear_fwd(flat2(enc), store.a2(idx.local), None);
    let global = matmul(hmax.view(), store.a2(idx.global));
    let mut pooled = unflat(local, b, v);
    for bi in 0..b {
        for vi in 0..v {
            for di in 0..d {
                pooled[[bi, vi, di]] += global[[bi, di]];
            }
        }
    }
    let cache = keep_cache.then(|| PoolCache { enc: enc.clone(), hmax, argmax });
    (pooled, cache)
}

/// Returns the gradient with respect to the encoder output.
pub fn backward(
    store: &ParamStore,
    idx: &PoolIdx,
    cache: &PoolCache,
    d_pooled: &Array3<f64>,
    grads: &mut Grads,
) -> Array3<f64> {
    let (b, v, d) = cache.enc.dim();
    let d_local = linear_bwd(
        flat2(&cache.enc),
        store.a2(idx.local),
        flat2(d_pooled),
        &mut grads.a2_mut(idx.local),
        None,
    );
    let mut d_enc = unflat(d_local, b, v);

    // the global term sees the sum of upstream gradients over nodes
    let mut row_sum = Array2::zeros((b, d));
    for bi in 0..b {
        for vi in 0..v {
            for di in 0..d {
                row_sum[[bi, di]] += d_pooled[[bi, vi, di]];
            }
        }
    }
    matmul_acc(cache.hmax.t(), row_sum.view(), &mut grads.a2_mut(idx.global));
    let d_hmax = matmul(row_sum.view(), store.a2(idx.global).t());
    for bi in 0..b {
        for di in 0..d {
            d_enc[[bi, cache.argmax[bi][di], di]] += d_hmax[[bi, di]];
        }
    }
    d_enc
}
