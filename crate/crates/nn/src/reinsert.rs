//! Reinsertion decoder: given the request chosen for removal, scores every
//! anchor pair `(j, k)` of the reduced tour — pickup goes after `j`, delivery
//! after `k` — masks infeasible pairs and normalizes jointly over the rest.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use pdp_core::{reinsertion_mask, Route};

use crate::config::ModelConfig;
use crate::features::StateBatch;
use crate::math::{
    flat2, linear_bwd, linear_fwd, relu_bwd_inplace, relu_inplace, softmax_slice, tanh_clamp_bwd,
    unflat,
};
use crate::store::{Grads, ParamStore};

const MLP_HIDDEN: usize = 32;

#[derive(Debug, Clone)]
pub struct ReinsertIdx {
    /// Predecessor-preference projections (query, key).
    pub wq_p: usize,
    pub wk_p: usize,
    /// Successor-preference projections (query, key).
    pub wq_s: usize,
    pub wk_s: usize,
    pub mlp: [usize; 6],
}

pub fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> ReinsertIdx {
    let d = cfg.embed_dim;
    let input = 4 * cfg.heads;
    ReinsertIdx {
        wq_p: store.push_weight("ins.wq_p", d, d, rng),
        wk_p: store.push_weight("ins.wk_p", d, d, rng),
        wq_s: store.push_weight("ins.wq_s", d, d, rng),
        wk_s: store.push_weight("ins.wk_s", d, d, rng),
        mlp: [
            store.push_weight("ins.mlp.w1", input, MLP_HIDDEN, rng),
            store.push_bias("ins.mlp.b1", MLP_HIDDEN, input, rng),
            store.push_weight("ins.mlp.w2", MLP_HIDDEN, MLP_HIDDEN, rng),
            store.push_bias("ins.mlp.b2", MLP_HIDDEN, MLP_HIDDEN, rng),
            store.push_weight("ins.mlp.w3", MLP_HIDDEN, 1, rng),
            store.push_bias("ins.mlp.b3", 1, MLP_HIDDEN, rng),
        ],
    }
}

/// Per-batch-element reinsertion distribution over anchor pairs, indexed
/// row-major by reduced-route positions `(t_j, t_k)`.
#[derive(Debug, Clone)]
pub struct ReinsertionChoice {
    /// Reduced-route visiting order; anchors are positions into it.
    pub nodes: Vec<usize>,
    /// Joint probabilities, length `len(nodes)^2`; masked entries are 0.
    pub probs: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl ReinsertionChoice {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }
}

pub struct ReinsertCache {
    pooled: Array3<f64>,
    q_p: Array2<f64>,
    k_p: Array2<f64>,
    q_s: Array2<f64>,
    k_s: Array2<f64>,
    reduced: Vec<Vec<usize>>,
    requests: Vec<usize>,
    mlp_in: Array2<f64>,
    mlp_h1: Array2<f64>,
    mlp_h2: Array2<f64>,
    clamped: Vec<Vec<f64>>,
    pub choices: Vec<ReinsertionChoice>,
}

/// Score and normalize all anchor pairs for each batch element's chosen
/// request. All reduced tours share the same size, so the pair MLP runs as
/// one flat batch.
pub fn forward(
    store: &ParamStore,
    idx: &ReinsertIdx,
    cfg: &ModelConfig,
    pooled: &Array3<f64>,
    batch: &StateBatch,
    requests: &[usize],
    keep_cache: bool,
) -> (Vec<ReinsertionChoice>, Option<ReinsertCache>) {
    let (b, v, dim) = pooled.dim();
    let n = batch.n;
    let m = cfg.heads;
    let dh = dim / m;
    let r = v - 2; // reduced route length

    let q_p = linear_fwd(flat2(pooled), store.a2(idx.wq_p), None);
    let k_p = linear_fwd(flat2(pooled), store.a2(idx.wk_p), None);
    let q_s = linear_fwd(flat2(pooled), store.a2(idx.wq_s), None);
    let k_s = linear_fwd(flat2(pooled), store.a2(idx.wk_s), None);

    let mut score_vecs = Vec::with_capacity(b);
    let mut reduced_orders = Vec::with_capacity(b);
    for bi in 0..b {
        let request = requests[bi];
        let (pickup, delivery) = (request, request + n);
        let reduced: Vec<usize> = batch.order[bi]
            .iter()
            .copied()
            .filter(|&x| x != pickup && x != delivery)
            .collect();
        debug_assert_eq!(reduced.len(), r);

        // four score stripes: pickup/delivery against succ(anchor) under the
        // predecessor projections, and against the anchor itself under the
        // successor projections
        let mut stripes = [
            Array2::zeros((m, r)),
            Array2::zeros((m, r)),
            Array2::zeros((m, r)),
            Array2::zeros((m, r)),
        ];
        for t in 0..r {
            let anchor = bi * v + reduced[t];
            let succ = bi * v + reduced[(t + 1) % r];
            let pick = bi * v + pickup;
            let del = bi * v + delivery;
            for head in 0..m {
                let c = head * dh;
                let mut pp = 0.0;
                let mut pd = 0.0;
                let mut sp = 0.0;
                let mut sd = 0.0;
                for d in c..c + dh {
                    pp += q_p[[pick, d]] * k_p[[succ, d]];
                    pd += q_p[[del, d]] * k_p[[succ, d]];
                    sp += q_s[[pick, d]] * k_s[[anchor, d]];
                    sd += q_s[[del, d]] * k_s[[anchor, d]];
                }
                stripes[0][[head, t]] = pp;
                stripes[1][[head, t]] = pd;
                stripes[2][[head, t]] = sp;
                stripes[3][[head, t]] = sd;
            }
        }
        score_vecs.push(stripes);
        reduced_orders.push(reduced);
    }

    // assemble the pair MLP input: (p+ at t_j, p- at t_k, s+ at t_j, s- at t_k)
    let input = 4 * m;
    let mut mlp_in = Array2::zeros((b * r * r, input));
    for bi in 0..b {
        let stripes = &score_vecs[bi];
        for tj in 0..r {
            for tk in 0..r {
                let row = (bi * r + tj) * r + tk;
                for head in 0..m {
                    mlp_in[[row, head]] = stripes[0][[head, tj]];
                    mlp_in[[row, m + head]] = stripes[1][[head, tk]];
                    mlp_in[[row, 2 * m + head]] = stripes[2][[head, tj]];
                    mlp_in[[row, 3 * m + head]] = stripes[3][[head, tk]];
                }
            }
        }
    }

    let mut h1 = linear_fwd(mlp_in.view(), store.a2(idx.mlp[0]), Some(store.a1(idx.mlp[1])));
    relu_inplace(&mut h1);
    let mut h2 = linear_fwd(h1.view(), store.a2(idx.mlp[2]), Some(store.a1(idx.mlp[3])));
    relu_inplace(&mut h2);
    let logits = linear_fwd(h2.view(), store.a2(idx.mlp[4]), Some(store.a1(idx.mlp[5])));

    let mut clamped_store = Vec::with_capacity(b);
    let mut choices = Vec::with_capacity(b);
    for bi in 0..b {
        let reduced_route = Route::new(reduced_orders[bi].clone(), v).expect("valid reduced order");
        let mask = reinsertion_mask(&reduced_route, requests[bi], n, batch.variant)
            .expect("pair was removed");
        let mut clamped = vec![0.0; r * r];
        let mut masked = vec![0.0; r * r];
        for pair in 0..r * r {
            let x = logits[[bi * r * r + pair, 0]];
            let y = cfg.logit_clamp * x.tanh();
            clamped[pair] = y;
            masked[pair] = if mask.allowed_flat()[pair] { y } else { f64::NEG_INFINITY };
        }
        softmax_slice(&mut masked);
        choices.push(ReinsertionChoice {
            nodes: reduced_orders[bi].clone(),
            probs: masked,
            feasible: mask.allowed_flat().to_vec(),
        });
        clamped_store.push(clamped);
    }

    let cache = keep_cache.then(|| ReinsertCache {
        pooled: pooled.clone(),
        q_p,
        k_p,
        q_s,
        k_s,
        reduced: reduced_orders,
        requests: requests.to_vec(),
        mlp_in,
        mlp_h1: h1,
        mlp_h2: h2,
        clamped: clamped_store,
        choices: choices.clone(),
    });
    (choices, cache)
}

/// Backward from per-batch gradients on the clamped (pre-mask) logits.
/// Masked entries must carry zero gradient, which log-likelihood gradients
/// of a masked softmax do by construction.
pub fn backward(
    store: &ParamStore,
    idx: &ReinsertIdx,
    cfg: &ModelConfig,
    cache: &ReinsertCache,
    batch: &StateBatch,
    d_clamped_flat: &Array2<f64>,
    grads: &mut Grads,
) -> Array3<f64> {
    let (b, v, dim) = cache.pooled.dim();
    let n = batch.n;
    let m = cfg.heads;
    let dh = dim / m;
    let r = v - 2;

    // through the tanh clamp
    let clamped_all = Array2::from_shape_vec(
        (b * r * r, 1),
        cache.clamped.iter().flatten().copied().collect(),
    )
    .expect("shape");
    let d_logits = tanh_clamp_bwd(d_clamped_flat, &clamped_all, cfg.logit_clamp);

    let mut db3 = Array1::zeros(1);
    let mut d_h2 = linear_bwd(
        cache.mlp_h2.view(),
        store.a2(idx.mlp[4]),
        d_logits.view(),
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

    // fold pair gradients back onto the four score stripes
    let mut d_q_p = Array2::zeros((b * v, dim));
    let mut d_k_p = Array2::zeros((b * v, dim));
    let mut d_q_s = Array2::zeros((b * v, dim));
    let mut d_k_s = Array2::zeros((b * v, dim));
    for bi in 0..b {
        let mut d_stripes = [
            Array2::<f64>::zeros((m, r)),
            Array2::<f64>::zeros((m, r)),
            Array2::<f64>::zeros((m, r)),
            Array2::<f64>::zeros((m, r)),
        ];
        for tj in 0..r {
            for tk in 0..r {
                let row = (bi * r + tj) * r + tk;
                for head in 0..m {
                    d_stripes[0][[head, tj]] += d_mlp_in[[row, head]];
                    d_stripes[1][[head, tk]] += d_mlp_in[[row, m + head]];
                    d_stripes[2][[head, tj]] += d_mlp_in[[row, 2 * m + head]];
                    d_stripes[3][[head, tk]] += d_mlp_in[[row, 3 * m + head]];
                }
            }
        }
        let request = cache.requests[bi];
        let (pickup, delivery) = (request, request + n);
        let reduced = &cache.reduced[bi];
        for t in 0..r {
            let anchor = bi * v + reduced[t];
            let succ = bi * v + reduced[(t + 1) % r];
            let pick = bi * v + pickup;
            let del = bi * v + delivery;
            for head in 0..m {
                let c = head * dh;
                let d0 = d_stripes[0][[head, t]];
                let d1 = d_stripes[1][[head, t]];
                let d2 = d_stripes[2][[head, t]];
                let d3 = d_stripes[3][[head, t]];
                for d in c..c + dh {
                    d_q_p[[pick, d]] += d0 * cache.k_p[[succ, d]];
                    d_k_p[[succ, d]] += d0 * cache.q_p[[pick, d]];
                    d_q_p[[del, d]] += d1 * cache.k_p[[succ, d]];
                    d_k_p[[succ, d]] += d1 * cache.q_p[[del, d]];
                    d_q_s[[pick, d]] += d2 * cache.k_s[[anchor, d]];
                    d_k_s[[anchor, d]] += d2 * cache.q_s[[pick, d]];
                    d_q_s[[del, d]] += d3 * cache.k_s[[anchor, d]];
                    d_k_s[[anchor, d]] += d3 * cache.q_s[[del, d]];
                }
            }
        }
    }

    let pooled_flat = flat2(&cache.pooled);
    let mut d_pooled = unflat(
        linear_bwd(pooled_flat, store.a2(idx.wq_p), d_q_p.view(), &mut grads.a2_mut(idx.wq_p), None),
        b,
        v,
    );
    d_pooled += &unflat(
        linear_bwd(pooled_flat, store.a2(idx.wk_p), d_k_p.view(), &mut grads.a2_mut(idx.wk_p), None),
        b,
        v,
    );
    d_pooled += &unflat(
        linear_bwd(pooled_flat, store.a2(idx.wq_s), d_q_s.view(), &mut grads.a2_mut(idx.wq_s), None),
        b,
        v,
    );
    d_pooled += &unflat(
        linear_bwd(pooled_flat, store.a2(idx.wk_s), d_k_s.view(), &mut grads.a2_mut(idx.wk_s), None),
        b,
        v,
    );
    d_pooled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EncoderVariant;
    use pdp_core::{Instance, Route, SearchState, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg16() -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            pos_dim: 16,
            heads: 4,
            layers: 1,
            logit_clamp: 6.0,
            encoder: EncoderVariant::Synth,
        }
    }

    fn build(seed: u64) -> (ParamStore, ReinsertIdx) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let idx = register(&mut store, &cfg16(), &mut rng);
        (store, idx)
    }

    fn lifo_n2_batch() -> (Instance, StateBatch) {
        let inst = Instance::generate(2, 0, Variant::PdtspLifo).unwrap();
        // (0, 1+, 1-, 2+, 2-): removing request 1 leaves (0, 2+, 2-)
        let route = Route::new(vec![0, 1, 3, 2, 4], 5).unwrap();
        let state = SearchState::new(&inst, route, 5);
        let batch = StateBatch::from_states(&[&inst], &[&state]);
        (inst, batch)
    }

    #[test]
    fn lifo_mask_allows_exactly_four_anchor_pairs() {
        let (_, batch) = lifo_n2_batch();
        let (store, idx) = build(1);
        let pooled = Array3::from_shape_fn((1, 5, 16), |(_, v, d)| {
            ((v * 31 + d * 7) % 13) as f64 / 13.0 - 0.5
        });
        let (choices, _) = forward(&store, &idx, &cfg16(), &pooled, &batch, &[1], false);
        let positive = choices[0].probs.iter().filter(|&&p| p > 0.0).count();
        assert_eq!(positive, 4);
        let total: f64 = choices[0].probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn masked_entries_are_exactly_zero() {
        let (_, batch) = lifo_n2_batch();
        let (store, idx) = build(2);
        let pooled = Array3::from_shape_fn((1, 5, 16), |(_, v, d)| {
            ((v * 17 + d * 3) % 11) as f64 / 11.0 - 0.5
        });
        let (choices, _) = forward(&store, &idx, &cfg16(), &pooled, &batch, &[1], false);
        let c = &choices[0];
        for pair in 0..c.probs.len() {
            if !c.feasible[pair] {
                assert_eq!(c.probs[pair], 0.0);
            } else {
                assert!(c.probs[pair] > 0.0);
            }
        }
    }

    #[test]
    fn zero_output_head_is_uniform_over_feasible() {
        let (_, batch) = lifo_n2_batch();
        let (mut store, idx) = build(3);
        store.raw_mut(idx.mlp[4]).fill(0.0);
        store.raw_mut(idx.mlp[5]).fill(0.0);
        let pooled = Array3::from_shape_fn((1, 5, 16), |(_, v, d)| {
            ((v * 5 + d) % 7) as f64 / 7.0
        });
        let (choices, _) = forward(&store, &idx, &cfg16(), &pooled, &batch, &[1], false);
        for (&feasible, &p) in choices[0].feasible.iter().zip(&choices[0].probs) {
            if feasible {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }
}
