//! Value network: a plain multi-head attention layer over the (detached)
//! encoder embeddings, mean-augmented pooling, and an MLP that also sees the
//! incumbent tour cost.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::math::{
    flat2, linear_bwd, linear_fwd, matmul, matmul_acc, relu_bwd_inplace, relu_inplace,
    softmax_bwd_slice, softmax_slice, unflat,
};
use crate::store::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct CriticIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub local: usize,
    pub global: usize,
    pub mlp: [usize; 6],
}

fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> CriticIdx {
    let d = cfg.embed_dim;
    let half = d / 2;
    // pooled max + pooled mean + incumbent cost
    let input = d + 1;
    CriticIdx {
        wq: store.push_weight("critic.wq", d, d, rng),
        wk: store.push_weight("critic.wk", d, d, rng),
        wv: store.push_weight("critic.wv", d, d, rng),
        wo: store.push_weight("critic.wo", d, d, rng),
        local: store.push_weight("critic.local", d, half, rng),
        global: store.push_weight("critic.global", d, half, rng),
        mlp: [
            store.push_weight("critic.mlp.w1", input, d, rng),
            store.push_bias("critic.mlp.b1", d, input, rng),
            store.push_weight("critic.mlp.w2", d, half, rng),
            store.push_bias("critic.mlp.b2", half, d, rng),
            store.push_weight("critic.mlp.w3", half, 1, rng),
            store.push_bias("critic.mlp.b3", 1, half, rng),
        ],
    }
}

/// The value network with its own parameters; consumes encoder embeddings
/// without backpropagating into them.
#[derive(Debug, Clone)]
pub struct CriticNet {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    idx: CriticIdx,
}

pub struct CriticCache {
    enc: Array3<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array4<f64>,
    heads: Array2<f64>,
    y: Array3<f64>,
    y_mean: Array2<f64>,
    max_arg: Vec<Vec<usize>>,
    mlp_in: Array2<f64>,
    mlp_h1: Array2<f64>,
    mlp_h2: Array2<f64>,
}

impl CriticNet {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let idx = register(&mut store, &cfg, &mut rng);
        Ok(Self { cfg, store, idx })
    }

    pub fn from_parts(cfg: ModelConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        // rebuild the index against a throwaway store to get the layout
        let mut probe = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = register(&mut probe, &cfg, &mut rng);
        if probe.len() != store.len() {
            return Err(crate::error::Error::Checkpoint(
                "parameter layout does not match the config".into(),
            ));
        }
        Ok(Self { cfg, store, idx })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// State values for a batch, `values[b]`.
    pub fn value(
        &self,
        enc: &Array3<f64>,
        best_cost: &[f64],
        keep_cache: bool,
    ) -> (Vec<f64>, Option<CriticCache>) {
        let (b, v, d) = enc.dim();
        let m = self.cfg.heads;
        let dh = d / m;
        let half = d / 2;
        let scale = 1.0 / (dh as f64).sqrt();
        let store = &self.store;
        let idx = &self.idx;

        let q = linear_fwd(flat2(enc), store.a2(idx.wq), None);
        let k = linear_fwd(flat2(enc), store.a2(idx.wk), None);
        let val = linear_fwd(flat2(enc), store.a2(idx.wv), None);

        let mut attn = Array4::zeros((b, m, v, v));
        for bi in 0..b {
            for head in 0..m {
                let qh = q.slice(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                let kh = k.slice(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                let mut out = attn.slice_mut(ndarray::s![bi, head, .., ..]);
                ndarray::linalg::general_mat_mul(scale, &qh, &kh.t(), 0.0, &mut out);
                for i in 0..v {
                    let mut row = attn.slice_mut(ndarray::s![bi, head, i, ..]);
                    softmax_slice(row.as_slice_mut().unwrap());
                }
            }
        }
        let mut heads = Array2::zeros((b * v, d));
        for bi in 0..b {
            for head in 0..m {
                let a = attn.slice(ndarray::s![bi, head, .., ..]);
                let vh = val.slice(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                let mut out =
                    heads.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                ndarray::linalg::general_mat_mul(1.0, &a, &vh, 0.0, &mut out);
            }
        }
        let y = unflat(linear_fwd(heads.view(), store.a2(idx.wo), None), b, v);

        // mean-augmented pooling into half width
        let mut y_mean = Array2::zeros((b, d));
        for bi in 0..b {
            for vi in 0..v {
                for di in 0..d {
                    y_mean[[bi, di]] += y[[bi, vi, di]];
                }
            }
        }
        y_mean.mapv_inplace(|x| x / v as f64);
        let local = linear_fwd(flat2(&y), store.a2(idx.local), None);
        let global = matmul(y_mean.view(), store.a2(idx.global));
        let mut yhat = unflat(local, b, v);
        for bi in 0..b {
            for vi in 0..v {
                for di in 0..half {
                    yhat[[bi, vi, di]] += global[[bi, di]];
                }
            }
        }

        // max and mean over nodes, plus the incumbent cost
        let input = d + 1;
        let mut mlp_in = Array2::zeros((b, input));
        let mut max_arg = vec![vec![0usize; half]; b];
        for bi in 0..b {
            for di in 0..half {
                let mut best = yhat[[bi, 0, di]];
                let mut best_i = 0;
                let mut mean = 0.0;
                for vi in 0..v {
                    let x = yhat[[bi, vi, di]];
                    if x > best {
                        best = x;
                        best_i = vi;
                    }
                    mean += x;
                }
                mlp_in[[bi, di]] = best;
                mlp_in[[bi, half + di]] = mean / v as f64;
                max_arg[bi][di] = best_i;
            }
            mlp_in[[bi, d]] = best_cost[bi];
        }

        let mut h1 = linear_fwd(mlp_in.view(), store.a2(idx.mlp[0]), Some(store.a1(idx.mlp[1])));
        relu_inplace(&mut h1);
        let mut h2 = linear_fwd(h1.view(), store.a2(idx.mlp[2]), Some(store.a1(idx.mlp[3])));
        relu_inplace(&mut h2);
        let out = linear_fwd(h2.view(), store.a2(idx.mlp[4]), Some(store.a1(idx.mlp[5])));
        let values: Vec<f64> = (0..b).map(|bi| out[[bi, 0]]).collect();

        let cache = keep_cache.then(|| CriticCache {
            enc: enc.clone(),
            q,
            k,
            v: val,
            attn,
            heads,
            y,
            y_mean,
            max_arg,
            mlp_in,
            mlp_h1: h1,
            mlp_h2: h2,
        });
        (values, cache)
    }

    /// Accumulate parameter gradients for `sum_b d_value[b] * v_b`. The
    /// encoder embeddings are treated as constants.
    pub fn backward(&self, cache: &CriticCache, d_value: &[f64], grads: &mut Grads) {
        let (b, v, d) = cache.enc.dim();
        let m = self.cfg.heads;
        let dh = d / m;
        let half = d / 2;
        let scale = 1.0 / (dh as f64).sqrt();
        let store = &self.store;
        let idx = &self.idx;

        let d_out = Array2::from_shape_vec((b, 1), d_value.to_vec()).expect("shape");
        let mut db3 = Array1::zeros(1);
        let mut d_h2 = linear_bwd(
            cache.mlp_h2.view(),
            store.a2(idx.mlp[4]),
            d_out.view(),
            &mut grads.a2_mut(idx.mlp[4]),
            Some(&mut db3),
        );
        grads.add_bias(idx.mlp[5], &db3);
        relu_bwd_inplace(&mut d_h2, &cache.mlp_h2);
        let mut db2 = Array1::zeros(half);
        let mut d_h1 = linear_bwd(
            cache.mlp_h1.view(),
            store.a2(idx.mlp[2]),
            d_h2.view(),
            &mut grads.a2_mut(idx.mlp[2]),
            Some(&mut db2),
        );
        grads.add_bias(idx.mlp[3], &db2);
        relu_bwd_inplace(&mut d_h1, &cache.mlp_h1);
        let mut db1 = Array1::zeros(d);
        let d_mlp_in = linear_bwd(
            cache.mlp_in.view(),
            store.a2(idx.mlp[0]),
            d_h1.view(),
            &mut grads.a2_mut(idx.mlp[0]),
            Some(&mut db1),
        );
        grads.add_bias(idx.mlp[1], &db1);

        // undo max/mean pooling over nodes
        let mut d_yhat = Array3::zeros((b, v, half));
        for bi in 0..b {
            for di in 0..half {
                d_yhat[[bi, cache.max_arg[bi][di], di]] += d_mlp_in[[bi, di]];
                let dm = d_mlp_in[[bi, half + di]] / v as f64;
                for vi in 0..v {
                    d_yhat[[bi, vi, di]] += dm;
                }
            }
        }

        // local/global projections
        let d_local = linear_bwd(
            flat2(&cache.y),
            store.a2(idx.local),
            flat2(&d_yhat),
            &mut grads.a2_mut(idx.local),
            None,
        );
        let mut d_y = unflat(d_local, b, v);
        let mut d_global_rows = Array2::zeros((b, half));
        for bi in 0..b {
            for vi in 0..v {
                for di in 0..half {
                    d_global_rows[[bi, di]] += d_yhat[[bi, vi, di]];
                }
            }
        }
        matmul_acc(cache.y_mean.t(), d_global_rows.view(), &mut grads.a2_mut(idx.global));
        let d_y_mean = matmul(d_global_rows.view(), store.a2(idx.global).t());
        for bi in 0..b {
            for vi in 0..v {
                for di in 0..d {
                    d_y[[bi, vi, di]] += d_y_mean[[bi, di]] / v as f64;
                }
            }
        }

        // attention output projection
        let d_heads = linear_bwd(
            cache.heads.view(),
            store.a2(idx.wo),
            flat2(&d_y),
            &mut grads.a2_mut(idx.wo),
            None,
        );

        let mut d_q = Array2::zeros((b * v, d));
        let mut d_k = Array2::zeros((b * v, d));
        let mut d_v = Array2::zeros((b * v, d));
        for bi in 0..b {
            for head in 0..m {
                let dhd = d_heads.slice(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                let vh =
                    cache.v.slice(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                let a = cache.attn.slice(ndarray::s![bi, head, .., ..]);
                let mut da = Array2::zeros((v, v));
                ndarray::linalg::general_mat_mul(1.0, &dhd, &vh.t(), 0.0, &mut da.view_mut());
                let mut dvh =
                    d_v.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                ndarray::linalg::general_mat_mul(1.0, &a.t(), &dhd, 1.0, &mut dvh);

                let mut d_scores = Array2::zeros((v, v));
                for i in 0..v {
                    softmax_bwd_slice(
                        a.slice(ndarray::s![i, ..]).as_slice().unwrap(),
                        da.slice(ndarray::s![i, ..]).as_slice().unwrap(),
                        d_scores.slice_mut(ndarray::s![i, ..]).as_slice_mut().unwrap(),
                    );
                }
                let qh = cache.q.slice(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                let kh = cache.k.slice(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                let mut dqh =
                    d_q.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                ndarray::linalg::general_mat_mul(scale, &d_scores.view(), &kh, 1.0, &mut dqh);
                let mut dkh =
                    d_k.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dh..(head + 1) * dh]);
                ndarray::linalg::general_mat_mul(scale, &d_scores.t(), &qh, 1.0, &mut dkh);
            }
        }

        let enc_flat = flat2(&cache.enc);
        let _ = linear_bwd(enc_flat, store.a2(idx.wq), d_q.view(), &mut grads.a2_mut(idx.wq), None);
        let _ = linear_bwd(enc_flat, store.a2(idx.wk), d_k.view(), &mut grads.a2_mut(idx.wk), None);
        let _ = linear_bwd(enc_flat, store.a2(idx.wv), d_v.view(), &mut grads.a2_mut(idx.wv), None);
    }
}
