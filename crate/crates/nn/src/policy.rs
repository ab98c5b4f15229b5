//! Policy network facade: encode, pool, decode removal and reinsertion,
//! select actions, and backpropagate log-likelihood gradients.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdp_core::PairAction;

use crate::checkpoint;
use crate::config::ModelConfig;
use crate::encoder::{self, EncoderCache, EncoderIdx, EncoderOutput};
use crate::error::Result;
use crate::features::StateBatch;
use crate::math::log_softmax_pick_bwd;
use crate::pool::{self, PoolCache, PoolIdx};
use crate::reinsert::{self, ReinsertCache, ReinsertIdx, ReinsertionChoice};
use crate::removal::{self, RemovalCache, RemovalIdx};
use crate::store::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    /// Argmax with ties broken toward the smallest index.
    Greedy,
}

/// How the forward pass picks actions.
pub enum ActionSource<'a> {
    Select(SelectMode, &'a mut [ChaCha8Rng]),
    /// Re-evaluate fixed actions (training updates).
    Forced(&'a [PairAction]),
}

/// Distributions and chosen actions for one batch forward pass.
pub struct PolicyOutput {
    pub actions: Vec<PairAction>,
    /// Log probability of the joint (removal, reinsertion) choice.
    pub logps: Vec<f64>,
    /// `[batch, n]`, rows sum to 1.
    pub removal_dist: Array2<f64>,
    pub reinsertion: Vec<ReinsertionChoice>,
}

pub struct PolicyCache {
    enc: EncoderCache,
    pool: PoolCache,
    rem: RemovalCache,
    ins: ReinsertCache,
    /// Chosen (request index 0-based, anchor pair index) per batch element.
    chosen: Vec<(usize, usize)>,
    enc_out: Array3<f64>,
}

impl PolicyCache {
    /// Final encoder embeddings, for feeding the value network.
    pub fn embeddings(&self) -> &Array3<f64> {
        &self.enc_out
    }
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    enc_idx: EncoderIdx,
    pool_idx: PoolIdx,
    rem_idx: RemovalIdx,
    ins_idx: ReinsertIdx,
}

impl PolicyNet {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc_idx = encoder::register(&mut store, &cfg, &mut rng);
        let pool_idx = pool::register(&mut store, cfg.embed_dim, &mut rng);
        let rem_idx = removal::register(&mut store, &cfg, &mut rng);
        let ins_idx = reinsert::register(&mut store, &cfg, &mut rng);
        Ok(Self { cfg, store, enc_idx, pool_idx, rem_idx, ins_idx })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Run only the encoder (used by the value network and by tests).
    pub fn encode(&self, batch: &StateBatch) -> EncoderOutput {
        let (out, _) =
            encoder::forward(&self.store, &self.enc_idx, &self.cfg, &batch.coords, &batch.pos, false);
        out
    }

    /// Full forward pass: distributions, chosen actions and joint log
    /// probabilities. With `keep_cache` the returned cache supports
    /// [`PolicyNet::backward_logp`].
    pub fn forward(
        &self,
        batch: &StateBatch,
        mut source: ActionSource<'_>,
        keep_cache: bool,
    ) -> (PolicyOutput, Option<PolicyCache>) {
        let b = batch.batch_size();

        let (enc_out, enc_cache) = encoder::forward(
            &self.store,
            &self.enc_idx,
            &self.cfg,
            &batch.coords,
            &batch.pos,
            keep_cache,
        );
        let (pooled, pool_cache) =
            pool::forward(&self.store, &self.pool_idx, &enc_out.embeddings, keep_cache);
        let (removal_dist, rem_cache) =
            removal::forward(&self.store, &self.rem_idx, &self.cfg, &pooled, batch, keep_cache);

        // pick the request to remove
        let mut requests = Vec::with_capacity(b);
        for bi in 0..b {
            let row = removal_dist.row(bi);
            let probs = row.as_slice().expect("contiguous");
            let req_idx = match &mut source {
                ActionSource::Select(SelectMode::Sample, rngs) => sample_index(probs, &mut rngs[bi]),
                ActionSource::Select(SelectMode::Greedy, _) => argmax_index(probs),
                ActionSource::Forced(actions) => actions[bi].request - 1,
            };
            requests.push(req_idx + 1);
        }

        let (choices, ins_cache) = reinsert::forward(
            &self.store,
            &self.ins_idx,
            &self.cfg,
            &pooled,
            batch,
            &requests,
            keep_cache,
        );

        // pick the anchor pair
        let mut actions = Vec::with_capacity(b);
        let mut logps = Vec::with_capacity(b);
        let mut chosen = Vec::with_capacity(b);
        for bi in 0..b {
            let choice = &choices[bi];
            let r = choice.size();
            let pair = match &mut source {
                ActionSource::Select(SelectMode::Sample, rngs) => {
                    sample_index(&choice.probs, &mut rngs[bi])
                }
                ActionSource::Select(SelectMode::Greedy, _) => argmax_index(&choice.probs),
                ActionSource::Forced(actions) => {
                    let tj = choice
                        .nodes
                        .iter()
                        .position(|&x| x == actions[bi].after_pickup)
                        .expect("anchor in reduced route");
                    let tk = choice
                        .nodes
                        .iter()
                        .position(|&x| x == actions[bi].after_delivery)
                        .expect("anchor in reduced route");
                    tj * r + tk
                }
            };
            let action = PairAction {
                request: requests[bi],
                after_pickup: choice.nodes[pair / r],
                after_delivery: choice.nodes[pair % r],
            };
            let logp = removal_dist[[bi, requests[bi] - 1]].ln() + choice.probs[pair].ln();
            actions.push(action);
            logps.push(logp);
            chosen.push((requests[bi] - 1, pair));
        }

        let cache = keep_cache.then(|| PolicyCache {
            enc: enc_cache.unwrap(),
            pool: pool_cache.unwrap(),
            rem: rem_cache.unwrap(),
            ins: ins_cache.unwrap(),
            chosen,
            enc_out: enc_out.embeddings,
        });
        (PolicyOutput { actions, logps, removal_dist, reinsertion: choices }, cache)
    }

    /// Convenience wrapper for action selection without gradient bookkeeping.
    pub fn act(
        &self,
        batch: &StateBatch,
        mode: SelectMode,
        rngs: &mut [ChaCha8Rng],
    ) -> PolicyOutput {
        self.forward(batch, ActionSource::Select(mode, rngs), false).0
    }

    /// Accumulate `sum_b weight[b] * d logp_b / d theta` into `grads`.
    pub fn backward_logp(
        &self,
        batch: &StateBatch,
        cache: &PolicyCache,
        weights: &[f64],
        grads: &mut Grads,
    ) {
        let b = batch.batch_size();
        let n = batch.n;
        let v = batch.node_count();
        let r = v - 2;

        // removal side: d logp / d clamped-logits = w * (onehot - p)
        let mut d_rem_clamped = Array2::zeros((b, n));
        for bi in 0..b {
            let probs = cache.rem.dist.row(bi);
            let mut row = d_rem_clamped.row_mut(bi);
            log_softmax_pick_bwd(
                probs.as_slice().unwrap(),
                cache.chosen[bi].0,
                weights[bi],
                row.as_slice_mut().unwrap(),
            );
        }
        let mut d_pooled = removal::backward(
            &self.store,
            &self.rem_idx,
            &self.cfg,
            &cache.rem,
            batch,
            &d_rem_clamped,
            grads,
        );

        // reinsertion side: same shape trick over the flattened pair axis;
        // masked entries have probability exactly zero, so they get zero
        // gradient automatically
        let mut d_ins_clamped = Array2::zeros((b * r * r, 1));
        for bi in 0..b {
            let choice = &cache.ins.choices[bi];
            let (_, pair) = cache.chosen[bi];
            let w = weights[bi];
            for p in 0..r * r {
                let prob = choice.probs[p];
                let grad = w * (if p == pair { 1.0 - prob } else { -prob });
                d_ins_clamped[[bi * r * r + p, 0]] = grad;
            }
        }
        d_pooled += &reinsert::backward(
            &self.store,
            &self.ins_idx,
            &self.cfg,
            &cache.ins,
            batch,
            &d_ins_clamped,
            grads,
        );

        let d_enc = pool::backward(&self.store, &self.pool_idx, &cache.pool, &d_pooled, grads);
        encoder::backward(
            &self.store,
            &self.enc_idx,
            &self.cfg,
            &cache.enc,
            &batch.coords,
            d_enc,
            grads,
        );
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "policy", &self.cfg, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (cfg, tensors) = checkpoint::load(path, "policy")?;
        let mut net = Self::new(cfg, 0)?;
        checkpoint::restore_into(&mut net.store, tensors)?;
        Ok(net)
    }
}

/// Save/load for the value network, kept here next to the policy's.
impl crate::critic::CriticNet {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "critic", &self.cfg, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (cfg, tensors) = checkpoint::load(path, "critic")?;
        let mut net = Self::new(cfg, 0)?;
        checkpoint::restore_into(&mut net.store, tensors)?;
        Ok(net)
    }
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

fn argmax_index(probs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = i;
        }
    }
    best
}
