//! Removal decoder: scores how loosely each node sits between its tour
//! neighbours, aggregates the scores per request pair together with the
//! action-history features, and outputs a distribution over requests.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::config::ModelConfig;
use crate::features::StateBatch;
use crate::math::{
    flat2, linear_bwd, linear_fwd, relu_bwd_inplace, relu_inplace, softmax_rows_inplace,
    tanh_clamp, tanh_clamp_bwd, unflat,
};
use crate::store::{Grads, ParamStore};

const MLP_HIDDEN: usize = 32;

#[derive(Debug, Clone)]
pub struct RemovalIdx {
    pub wq: usize,
    pub wk: usize,
    /// `[w1, b1, w2, b2, w3, b3]`
    pub mlp: [usize; 6],
}

pub fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> RemovalIdx {
    let d = cfg.embed_dim;
    let m = cfg.heads;
    let input = 2 * m + 4;
    RemovalIdx {
        wq: store.push_weight("rem.wq", d, d, rng),
        wk: store.push_weight("rem.wk", d, d, rng),
        mlp: [
            store.push_weight("rem.mlp.w1", input, MLP_HIDDEN, rng),
            store.push_bias("rem.mlp.b1", MLP_HIDDEN, input, rng),
            store.push_weight("rem.mlp.w2", MLP_HIDDEN, MLP_HIDDEN, rng),
            store.push_bias("rem.mlp.b2", MLP_HIDDEN, MLP_HIDDEN, rng),
            store.push_weight("rem.mlp.w3", MLP_HIDDEN, 1, rng),
            store.push_bias("rem.mlp.b3", 1, MLP_HIDDEN, rng),
        ],
    }
}

pub struct RemovalCache {
    pooled: Array3<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    pred: Vec<Vec<usize>>,
    succ: Vec<Vec<usize>>,
    mlp_in: Array2<f64>,
    mlp_h1: Array2<f64>,
    mlp_h2: Array2<f64>,
    clamped: Array2<f64>,
    pub dist: Array2<f64>,
}

/// Distribution over the `n` requests, `[batch, n]`.
pub fn forward(
    store: &ParamStore,
    idx: &RemovalIdx,
    cfg: &ModelConfig,
    pooled: &Array3<f64>,
    batch: &StateBatch,
    keep_cache: bool,
) -> (Array2<f64>, Option<RemovalCache>) {
    let (b, v, _) = pooled.dim();
    let n = batch.n;
    let m = cfg.heads;
    let dh = cfg.embed_dim / m;

    let q = linear_fwd(flat2(pooled), store.a2(idx.wq), None);
    let k = linear_fwd(flat2(pooled), store.a2(idx.wk), None);

    let mut pred = vec![vec![0usize; v]; b];
    let mut succ = vec![vec![0usize; v]; b];
    for bi in 0..b {
        let order = &batch.order[bi];
        for node in 0..v {
            let t = batch.pos[bi][node];
            pred[bi][node] = order[(t + v - 1) % v];
            succ[bi][node] = order[(t + 1) % v];
        }
    }

    // per-node closeness scores, one per head
    let lambda = node_scores(&q, &k, &pred, &succ, b, v, m, dh);

    // aggregate per request with the history features
    let input = 2 * m + 4;
    let mut mlp_in = Array2::zeros((b * n, input));
    for bi in 0..b {
        for req in 1..=n {
            let r = bi * n + (req - 1);
            for head in 0..m {
                mlp_in[[r, head]] = lambda[[bi, req, head]];
                mlp_in[[r, m + head]] = lambda[[bi, req + n, head]];
            }
            mlp_in[[r, 2 * m]] = batch.hist_count[[bi, req - 1]];
            for slot in 0..3 {
                mlp_in[[r, 2 * m + 1 + slot]] =
                    if batch.hist_last[bi][slot] == req as i64 { 1.0 } else { 0.0 };
            }
        }
    }

    let mut h1 = linear_fwd(mlp_in.view(), store.a2(idx.mlp[0]), Some(store.a1(idx.mlp[1])));
    relu_inplace(&mut h1);
    let mut h2 = linear_fwd(h1.view(), store.a2(idx.mlp[2]), Some(store.a1(idx.mlp[3])));
    relu_inplace(&mut h2);
    let logits_col = linear_fwd(h2.view(), store.a2(idx.mlp[4]), Some(store.a1(idx.mlp[5])));
    let logits = logits_col.into_shape_with_order((b, n)).expect("standard layout");

    let clamped = tanh_clamp(&logits, cfg.logit_clamp);
    let mut dist = clamped.clone();
    softmax_rows_inplace(&mut dist);

    let cache = keep_cache.then(|| RemovalCache {
        pooled: pooled.clone(),
        q,
        k,
        pred,
        succ,
        mlp_in,
        mlp_h1: h1,
        mlp_h2: h2,
        clamped,
        dist: dist.clone(),
    });
    (dist, cache)
}

fn node_scores(
    q: &Array2<f64>,
    k: &Array2<f64>,
    pred: &[Vec<usize>],
    succ: &[Vec<usize>],
    b: usize,
    v: usize,
    m: usize,
    dh: usize,
) -> Array3<f64> {
    let mut lambda = Array3::<f64>::zeros((b, v, m));
    for bi in 0..b {
        for node in 0..v {
            let p = bi * v + pred[bi][node];
            let i = bi * v + node;
            let s = bi * v + succ[bi][node];
            for head in 0..m {
                let c = head * dh;
                let mut pi = 0.0;
                let mut is = 0.0;
                let mut ps = 0.0;
                for d in c..c + dh {
                    pi += q[[p, d]] * k[[i, d]];
                    is += q[[i, d]] * k[[s, d]];
                    ps += q[[p, d]] * k[[s, d]];
                }
                lambda[[bi, node, head]] = pi + is - ps;
            }
        }
    }
    lambda
}

/// Backward from per-batch gradients on the clamped logits (the caller
/// differentiates its loss through the softmax first). Accumulates parameter
/// gradients and returns the gradient on the pooled embeddings.
pub fn backward(
    store: &ParamStore,
    idx: &RemovalIdx,
    cfg: &ModelConfig,
    cache: &RemovalCache,
    batch: &StateBatch,
    d_clamped: &Array2<f64>,
    grads: &mut Grads,
) -> Array3<f64> {
    let (b, v, dim) = cache.pooled.dim();
    let n = batch.n;
    let m = cfg.heads;
    let dh = dim / m;

    let d_logits = tanh_clamp_bwd(d_clamped, &cache.clamped, cfg.logit_clamp);
    let d_logits_col =
        d_logits.into_shape_with_order((b * n, 1)).expect("standard layout");

    let mut db3 = Array1::zeros(1);
    let mut d_h2 = linear_bwd(
        cache.mlp_h2.view(),
        store.a2(idx.mlp[4]),
        d_logits_col.view(),
        &mut grads.a2_mut(idx.mlp[4]),
        Some(&mut db3),
    );
    grads.add_bias(idx.mlp[5], &db3);
    relu_bwd_inplace(&mut d_h2, &cache.mlp_h2);
    let mut db2 = Array1::zeros(MLP_HIDDEN);
    let mut d_h1 = linear_bwd(
        cache.mlp_h1.view(),
        store.a2(idx.mlp[2]),
        d_h2.view(),
        &mut grads.a2_mut(idx.mlp[2]),
        Some(&mut db2),
    );
    grads.add_bias(idx.mlp[3], &db2);
    relu_bwd_inplace(&mut d_h1, &cache.mlp_h1);
    let mut db1 = Array1::zeros(MLP_HIDDEN);
    let d_mlp_in = linear_bwd(
        cache.mlp_in.view(),
        store.a2(idx.mlp[0]),
        d_h1.view(),
        &mut grads.a2_mut(idx.mlp[0]),
        Some(&mut db1),
    );
    grads.add_bias(idx.mlp[1], &db1);

    // gradients on the per-node scores (history features carry none)
    let mut d_lambda = Array3::<f64>::zeros((b, v, m));
    for bi in 0..b {
        for req in 1..=n {
            let r = bi * n + (req - 1);
            for head in 0..m {
                d_lambda[[bi, req, head]] += d_mlp_in[[r, head]];
                d_lambda[[bi, req + n, head]] += d_mlp_in[[r, m + head]];
            }
        }
    }

    let mut d_q = Array2::zeros((b * v, dim));
    let mut d_k = Array2::zeros((b * v, dim));
    for bi in 0..b {
        for node in 0..v {
            let p = bi * v + cache.pred[bi][node];
            let i = bi * v + node;
            let s = bi * v + cache.succ[bi][node];
            for head in 0..m {
                let dl = d_lambda[[bi, node, head]];
                if dl == 0.0 {
                    continue;
                }
                let c = head * dh;
                for d in c..c + dh {
                    let (qp, qi) = (cache.q[[p, d]], cache.q[[i, d]]);
                    let (ki, ks) = (cache.k[[i, d]], cache.k[[s, d]]);
                    d_q[[p, d]] += dl * (ki - ks);
                    d_q[[i, d]] += dl * ks;
                    d_k[[i, d]] += dl * qp;
                    d_k[[s, d]] += dl * (qi - qp);
                }
            }
        }
    }

    let pooled_flat = flat2(&cache.pooled);
    let dq_in =
        linear_bwd(pooled_flat, store.a2(idx.wq), d_q.view(), &mut grads.a2_mut(idx.wq), None);
    let dk_in =
        linear_bwd(pooled_flat, store.a2(idx.wk), d_k.view(), &mut grads.a2_mut(idx.wk), None);
    let mut d_pooled = unflat(dq_in, b, v);
    d_pooled += &unflat(dk_in, b, v);
    d_pooled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EncoderVariant;
    use crate::features::StateBatch;
    use pdp_core::construct::random_initial_solution;
    use pdp_core::{Instance, SearchState, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, seed: u64) -> (Instance, StateBatch, ModelConfig, ParamStore, RemovalIdx) {
        let inst = Instance::generate(n, seed, Variant::Pdtsp).unwrap();
        let route = random_initial_solution(&inst, Variant::Pdtsp, seed + 1);
        let mut state = SearchState::new(&inst, route, 2 * n + 1);
        state.history.push(1);
        state.history.push(2);
        let batch = StateBatch::from_states(&[&inst], &[&state]);
        let cfg = ModelConfig {
            embed_dim: 16,
            pos_dim: 16,
            heads: 4,
            layers: 1,
            logit_clamp: 6.0,
            encoder: EncoderVariant::Synth,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let idx = register(&mut store, &cfg, &mut rng);
        (inst, batch, cfg, store, idx)
    }

    fn random_pooled(b: usize, v: usize, d: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((b, v, d), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
    }

    #[test]
    fn zero_output_head_gives_uniform_distribution() {
        let (_, batch, cfg, mut store, idx) = setup(5, 3);
        store.raw_mut(idx.mlp[4]).fill(0.0);
        store.raw_mut(idx.mlp[5]).fill(0.0);
        let pooled = random_pooled(1, 11, 16, 4);
        let (dist, _) = forward(&store, &idx, &cfg, &pooled, &batch, false);
        for req in 0..5 {
            assert!((dist[[0, req]] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_are_clamped_by_tanh() {
        let (_, batch, cfg, mut store, idx) = setup(4, 5);
        // blow up the output layer so the raw logits are huge
        store.raw_mut(idx.mlp[4]).mapv_inplace(|x| x * 1e4);
        let pooled = random_pooled(1, 9, 16, 6);
        let (_, cache) = forward(&store, &idx, &cfg, &pooled, &batch, true);
        let clamped = cache.unwrap().clamped;
        assert!(clamped.iter().all(|&x| x.abs() <= cfg.logit_clamp));
        assert!(clamped.iter().any(|&x| x.abs() > cfg.logit_clamp * 0.9));
    }

    #[test]
    fn distribution_rows_sum_to_one() {
        let (_, batch, cfg, store, idx) = setup(6, 7);
        let pooled = random_pooled(1, 13, 16, 8);
        let (dist, _) = forward(&store, &idx, &cfg, &pooled, &batch, false);
        assert!((dist.row(0).sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn history_features_enter_the_input() {
        let (_, batch, cfg, store, idx) = setup(5, 9);
        let pooled = random_pooled(1, 11, 16, 10);
        let (_, cache) = forward(&store, &idx, &cfg, &pooled, &batch, true);
        let mlp_in = cache.unwrap().mlp_in;
        // request 2 was the most recent removal, request 1 the one before
        let m = cfg.heads;
        assert_eq!(mlp_in[[1, 2 * m]], 1.0); // count of request 2
        assert_eq!(mlp_in[[1, 2 * m + 1]], 1.0); // last(1) == 2
        assert_eq!(mlp_in[[0, 2 * m + 2]], 1.0); // last(2) == 1
        assert_eq!(mlp_in[[0, 2 * m + 1]], 0.0);
    }
}
