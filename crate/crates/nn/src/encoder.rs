//! Tour encoder: node-feature projection, positional auxiliary attention
//! scores, and stacked attention layers.
//!
//! Score synthesis: each layer computes per-head self-attention scores from
//! the node embeddings; a small per-pair MLP blends them with auxiliary
//! scores derived from the cyclic positional encoding. The auxiliary scores
//! depend only on tour positions (not coordinates), are computed once per
//! forward pass in position space and shared by all layers; each batch
//! element gathers them into node space through its own position map.
//!
//! The vanilla variant skips the auxiliary machinery entirely and instead
//! adds the positional encoding onto the node embeddings, as a plain
//! Transformer encoder would.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::Rng;

use crate::config::{EncoderVariant, ModelConfig};
use crate::cpe::cyclic_positional_encoding;
use crate::math::{
    flat2, instance_norm_bwd, instance_norm_fwd, linear_bwd, linear_fwd, matmul_acc, relu_bwd_inplace,
    relu_inplace, softmax_bwd_slice, softmax_slice, unflat, NormCache,
};
use crate::store::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct LayerIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    /// `[w1, b1, w2, b2]` of the per-pair score MLP (score-blending only).
    pub synth: Option<[usize; 4]>,
    pub n1_gamma: usize,
    pub n1_beta: usize,
    pub ffn_w1: usize,
    pub ffn_b1: usize,
    pub ffn_w2: usize,
    pub ffn_b2: usize,
    pub n2_gamma: usize,
    pub n2_beta: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderIdx {
    pub nfe_w: usize,
    pub nfe_b: usize,
    /// `[wq_aux, wk_aux]`, absent for the vanilla variant.
    pub aux: Option<[usize; 2]>,
    pub layers: Vec<LayerIdx>,
}

pub fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> EncoderIdx {
    let d = cfg.embed_dim;
    let dg = cfg.pos_dim;
    let m = cfg.heads;
    let nfe_w = store.push_weight("nfe.w", 2, d, rng);
    let nfe_b = store.push_bias("nfe.b", d, 2, rng);
    let aux = match cfg.encoder {
        EncoderVariant::Synth => Some([
            store.push_weight("aux.wq", dg, dg, rng),
            store.push_weight("aux.wk", dg, dg, rng),
        ]),
        EncoderVariant::Vanilla => None,
    };
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = |s: &str| format!("enc{l}.{s}");
        let wq = store.push_weight(&p("wq"), d, dg, rng);
        let wk = store.push_weight(&p("wk"), d, dg, rng);
        let wv = store.push_weight(&p("wv"), d, d, rng);
        let wo = store.push_weight(&p("wo"), d, d, rng);
        let synth = match cfg.encoder {
            EncoderVariant::Synth => Some([
                store.push_weight(&p("synth.w1"), 2 * m, 2 * m, rng),
                store.push_bias(&p("synth.b1"), 2 * m, 2 * m, rng),
                store.push_weight(&p("synth.w2"), 2 * m, m, rng),
                store.push_bias(&p("synth.b2"), m, 2 * m, rng),
            ]),
            EncoderVariant::Vanilla => None,
        };
        layers.push(LayerIdx {
            wq,
            wk,
            wv,
            wo,
            synth,
            n1_gamma: store.push_const(&p("n1.gamma"), d, 1.0),
            n1_beta: store.push_const(&p("n1.beta"), d, 0.0),
            ffn_w1: store.push_weight(&p("ffn.w1"), d, cfg.ffn_dim(), rng),
            ffn_b1: store.push_bias(&p("ffn.b1"), cfg.ffn_dim(), d, rng),
            ffn_w2: store.push_weight(&p("ffn.w2"), cfg.ffn_dim(), d, rng),
            ffn_b2: store.push_bias(&p("ffn.b2"), d, cfg.ffn_dim(), rng),
            n2_gamma: store.push_const(&p("n2.gamma"), d, 1.0),
            n2_beta: store.push_const(&p("n2.beta"), d, 0.0),
        });
    }
    EncoderIdx { nfe_w, nfe_b, aux, layers }
}

pub struct EncoderOutput {
    /// Final node embeddings, `[batch, nodes, embed_dim]`.
    pub embeddings: Array3<f64>,
    /// Position-space auxiliary scores `[heads, nodes, nodes]`; depend only
    /// on the node count and the positional parameters.
    pub aux_pos: Option<Array3<f64>>,
}

/// Shared affine map from raw node features to embeddings.
pub fn nfe_project(
    store: &ParamStore,
    idx: &EncoderIdx,
    coords: &Array3<f64>,
) -> Array3<f64> {
    let (b, v, _) = coords.dim();
    let flat = linear_fwd(flat2(coords), store.a2(idx.nfe_w), Some(store.a1(idx.nfe_b)));
    unflat(flat, b, v)
}

pub struct LayerCache {
    h_in: Array3<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    mlp_in: Option<Array2<f64>>,
    mlp_h1: Option<Array2<f64>>,
    attn: Array4<f64>,
    heads: Array2<f64>,
    n1: NormCache,
    n1_out: Array3<f64>,
    ffn_h: Array2<f64>,
    n2: NormCache,
}

pub struct EncoderCache {
    g_table: Array2<f64>,
    gq: Option<Array2<f64>>,
    gk: Option<Array2<f64>>,
    aux_node: Option<Array4<f64>>,
    pos_maps: Vec<Vec<usize>>,
    layers: Vec<LayerCache>,
}

/// Encode a batch of tours. `pos[b][node]` gives the tour position of each
/// node. Returns the final embeddings plus, when `keep_cache`, everything
/// backward needs.
pub fn forward(
    store: &ParamStore,
    idx: &EncoderIdx,
    cfg: &ModelConfig,
    coords: &Array3<f64>,
    pos: &[Vec<usize>],
    keep_cache: bool,
) -> (EncoderOutput, Option<EncoderCache>) {
    let (b, v, _) = coords.dim();
    let m = cfg.heads;
    let dqk = cfg.head_qk();
    let scale = 1.0 / (dqk as f64).sqrt();

    let g_table = cyclic_positional_encoding(v, cfg.pos_dim);

    // node feature embeddings
    let mut h = nfe_project(store, idx, coords);

    // positional information
    let (aux_pos, gq, gk, aux_node) = match idx.aux {
        Some([wq_aux, wk_aux]) => {
            let gq = crate::math::matmul(g_table.view(), store.a2(wq_aux));
            let gk = crate::math::matmul(g_table.view(), store.a2(wk_aux));
            let mut a_pos = Array3::zeros((m, v, v));
            for head in 0..m {
                let qh = gq.slice(ndarray::s![.., head * dqk..(head + 1) * dqk]);
                let kh = gk.slice(ndarray::s![.., head * dqk..(head + 1) * dqk]);
                let mut out = a_pos.index_axis_mut(Axis(0), head);
                ndarray::linalg::general_mat_mul(scale, &qh, &kh.t(), 0.0, &mut out);
            }
            // gather into node space per batch element
            let mut aux_node = Array4::zeros((b, m, v, v));
            for bi in 0..b {
                let p = &pos[bi];
                for head in 0..m {
                    for i in 0..v {
                        for j in 0..v {
                            aux_node[[bi, head, i, j]] = a_pos[[head, p[i], p[j]]];
                        }
                    }
                }
            }
            (Some(a_pos), Some(gq), Some(gk), Some(aux_node))
        }
        None => {
            // vanilla: add the positional encoding to the node embeddings
            for bi in 0..b {
                for node in 0..v {
                    let row = pos[bi][node];
                    for d in 0..cfg.embed_dim {
                        h[[bi, node, d]] += g_table[[row, d]];
                    }
                }
            }
            (None, None, None, None)
        }
    };

    let mut layer_caches = Vec::with_capacity(cfg.layers);
    for layer in &idx.layers {
        let (next, cache) = layer_forward(store, layer, cfg, &h, aux_node.as_ref(), keep_cache);
        if keep_cache {
            layer_caches.push(cache.unwrap());
        }
        h = next;
    }

    let cache = keep_cache.then(|| EncoderCache {
        g_table,
        gq,
        gk,
        aux_node,
        pos_maps: pos.to_vec(),
        layers: layer_caches,
    });
    (EncoderOutput { embeddings: h, aux_pos }, cache)
}

fn layer_forward(
    store: &ParamStore,
    idx: &LayerIdx,
    cfg: &ModelConfig,
    h_in: &Array3<f64>,
    aux_node: Option<&Array4<f64>>,
    keep_cache: bool,
) -> (Array3<f64>, Option<LayerCache>) {
    let (b, v, d) = h_in.dim();
    let m = cfg.heads;
    let dqk = cfg.head_qk();
    let dv = cfg.head_v();
    let scale = 1.0 / (dqk as f64).sqrt();

    let h_flat = flat2(h_in);
    let q = linear_fwd(h_flat, store.a2(idx.wq), None);
    let k = linear_fwd(h_flat, store.a2(idx.wk), None);
    let val = linear_fwd(h_flat, store.a2(idx.wv), None);

    let mut scores = Array4::zeros((b, m, v, v));
    for bi in 0..b {
        for head in 0..m {
            let qh = q.slice(ndarray::s![bi * v..(bi + 1) * v, head * dqk..(head + 1) * dqk]);
            let kh = k.slice(ndarray::s![bi * v..(bi + 1) * v, head * dqk..(head + 1) * dqk]);
            let mut out = scores.slice_mut(ndarray::s![bi, head, .., ..]);
            ndarray::linalg::general_mat_mul(scale, &qh, &kh.t(), 0.0, &mut out);
        }
    }

    // blend self scores with auxiliary scores (or pass self scores through)
    let (mut attn, mlp_in, mlp_h1) = match idx.synth {
        Some([w1, b1, w2, b2]) => {
            let aux = aux_node.expect("synth layers need auxiliary scores");
            let rows = b * v * v;
            let mut mlp_in = Array2::zeros((rows, 2 * m));
            for bi in 0..b {
                for i in 0..v {
                    for j in 0..v {
                        let r = (bi * v + i) * v + j;
                        for head in 0..m {
                            mlp_in[[r, head]] = scores[[bi, head, i, j]];
                            mlp_in[[r, m + head]] = aux[[bi, head, i, j]];
                        }
                    }
                }
            }
            let mut h1 = linear_fwd(mlp_in.view(), store.a2(w1), Some(store.a1(b1)));
            relu_inplace(&mut h1);
            let out = linear_fwd(h1.view(), store.a2(w2), Some(store.a1(b2)));
            let mut blended = Array4::zeros((b, m, v, v));
            for bi in 0..b {
                for i in 0..v {
                    for j in 0..v {
                        let r = (bi * v + i) * v + j;
                        for head in 0..m {
                            blended[[bi, head, i, j]] = out[[r, head]];
                        }
                    }
                }
            }
            (blended, Some(mlp_in), Some(h1))
        }
        None => (scores.clone(), None, None),
    };

    // row softmax per (batch, head, query)
    for bi in 0..b {
        for head in 0..m {
            for i in 0..v {
                let mut row = attn.slice_mut(ndarray::s![bi, head, i, ..]);
                softmax_slice(row.as_slice_mut().expect("contiguous"));
            }
        }
    }

    // weighted value aggregation, heads concatenated
    let mut heads = Array2::zeros((b * v, d));
    for bi in 0..b {
        for head in 0..m {
            let a = attn.slice(ndarray::s![bi, head, .., ..]);
            let vh = val.slice(ndarray::s![bi * v..(bi + 1) * v, head * dv..(head + 1) * dv]);
            let mut out =
                heads.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dv..(head + 1) * dv]);
            ndarray::linalg::general_mat_mul(1.0, &a, &vh, 0.0, &mut out);
        }
    }
    let att_out = linear_fwd(heads.view(), store.a2(idx.wo), None);

    let res1 = h_in + &unflat(att_out, b, v);
    let (n1_out, n1) = instance_norm_fwd(&res1, store.a1(idx.n1_gamma), store.a1(idx.n1_beta));

    let mut ffn_h = linear_fwd(flat2(&n1_out), store.a2(idx.ffn_w1), Some(store.a1(idx.ffn_b1)));
    relu_inplace(&mut ffn_h);
    let ffn_out = linear_fwd(ffn_h.view(), store.a2(idx.ffn_w2), Some(store.a1(idx.ffn_b2)));
    let res2 = &n1_out + &unflat(ffn_out, b, v);
    let (out, n2) = instance_norm_fwd(&res2, store.a1(idx.n2_gamma), store.a1(idx.n2_beta));

    let cache = keep_cache.then(|| LayerCache {
        h_in: h_in.clone(),
        q,
        k,
        v: val,
        mlp_in,
        mlp_h1,
        attn,
        heads,
        n1,
        n1_out,
        ffn_h,
        n2,
    });
    (out, cache)
}

/// Backpropagate `d_out` through the whole encoder, accumulating parameter
/// gradients. Returns nothing: coordinate gradients are not needed.
pub fn backward(
    store: &ParamStore,
    idx: &EncoderIdx,
    cfg: &ModelConfig,
    cache: &EncoderCache,
    coords: &Array3<f64>,
    d_out: Array3<f64>,
    grads: &mut Grads,
) {
    let (b, v, _) = coords.dim();
    let m = cfg.heads;
    let dqk = cfg.head_qk();
    let scale = 1.0 / (dqk as f64).sqrt();

    let mut d_h = d_out;
    let mut d_aux_node: Option<Array4<f64>> =
        cache.aux_node.as_ref().map(|_| Array4::zeros((b, m, v, v)));

    for (layer_idx, layer_cache) in idx.layers.iter().zip(&cache.layers).rev() {
        d_h = layer_backward(
            store,
            layer_idx,
            cfg,
            layer_cache,
            cache.aux_node.as_ref(),
            d_aux_node.as_mut(),
            d_h,
            grads,
        );
    }

    // node feature projection
    let d_h0 = d_h; // vanilla's added positional rows carry no parameters
    {
        let coords_flat = flat2(coords);
        let d_flat = flat2(&d_h0);
        let mut db = ndarray::Array1::zeros(cfg.embed_dim);
        let _ = linear_bwd(
            coords_flat,
            store.a2(idx.nfe_w),
            d_flat,
            &mut grads.a2_mut(idx.nfe_w),
            Some(&mut db),
        );
        grads.add_bias(idx.nfe_b, &db);
    }

    // auxiliary score parameters
    if let (Some([wq_aux, wk_aux]), Some(d_aux)) = (idx.aux, d_aux_node) {
        let gq = cache.gq.as_ref().unwrap();
        let gk = cache.gk.as_ref().unwrap();
        // scatter node-space gradients back to position space
        let mut d_a_pos = Array3::zeros((m, v, v));
        // positions used at forward time are recoverable from the gather:
        // the caller passes the same pos maps, but we stored gathered values
        // only. Scatter using the cached position maps instead.
        let pos_maps = &cache.pos_maps;
        for bi in 0..b {
            let p = &pos_maps[bi];
            for head in 0..m {
                for i in 0..v {
                    for j in 0..v {
                        d_a_pos[[head, p[i], p[j]]] += d_aux[[bi, head, i, j]];
                    }
                }
            }
        }
        let mut d_gq = Array2::zeros(gq.raw_dim());
        let mut d_gk = Array2::zeros(gk.raw_dim());
        for head in 0..m {
            let da = d_a_pos.index_axis(Axis(0), head);
            let qh = gq.slice(ndarray::s![.., head * dqk..(head + 1) * dqk]);
            let kh = gk.slice(ndarray::s![.., head * dqk..(head + 1) * dqk]);
            let mut dqh = d_gq.slice_mut(ndarray::s![.., head * dqk..(head + 1) * dqk]);
            ndarray::linalg::general_mat_mul(scale, &da, &kh, 1.0, &mut dqh);
            let mut dkh = d_gk.slice_mut(ndarray::s![.., head * dqk..(head + 1) * dqk]);
            ndarray::linalg::general_mat_mul(scale, &da.t(), &qh, 1.0, &mut dkh);
        }
        matmul_acc(cache.g_table.t(), d_gq.view(), &mut grads.a2_mut(wq_aux));
        matmul_acc(cache.g_table.t(), d_gk.view(), &mut grads.a2_mut(wk_aux));
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    store: &ParamStore,
    idx: &LayerIdx,
    cfg: &ModelConfig,
    cache: &LayerCache,
    aux_node: Option<&Array4<f64>>,
    mut d_aux_node: Option<&mut Array4<f64>>,
    d_out: Array3<f64>,
    grads: &mut Grads,
) -> Array3<f64> {
    let (b, v, d) = cache.h_in.dim();
    let m = cfg.heads;
    let dqk = cfg.head_qk();
    let dv = cfg.head_v();
    let scale = 1.0 / (dqk as f64).sqrt();
    let _ = aux_node;

    // second norm
    let mut dgamma2 = ndarray::Array1::zeros(d);
    let mut dbeta2 = ndarray::Array1::zeros(d);
    let d_res2 =
        instance_norm_bwd(&d_out, &cache.n2, store.a1(idx.n2_gamma), &mut dgamma2, &mut dbeta2);
    grads.add_bias(idx.n2_gamma, &dgamma2);
    grads.add_bias(idx.n2_beta, &dbeta2);

    // feed-forward
    let mut db2 = ndarray::Array1::zeros(d);
    let mut d_ffn_h = linear_bwd(
        cache.ffn_h.view(),
        store.a2(idx.ffn_w2),
        flat2(&d_res2),
        &mut grads.a2_mut(idx.ffn_w2),
        Some(&mut db2),
    );
    grads.add_bias(idx.ffn_b2, &db2);
    relu_bwd_inplace(&mut d_ffn_h, &cache.ffn_h);
    let mut db1 = ndarray::Array1::zeros(cfg.ffn_dim());
    let d_n1_from_ffn = linear_bwd(
        flat2(&cache.n1_out),
        store.a2(idx.ffn_w1),
        d_ffn_h.view(),
        &mut grads.a2_mut(idx.ffn_w1),
        Some(&mut db1),
    );
    grads.add_bias(idx.ffn_b1, &db1);
    let d_n1_out = &d_res2 + &unflat(d_n1_from_ffn, b, v);

    // first norm
    let mut dgamma1 = ndarray::Array1::zeros(d);
    let mut dbeta1 = ndarray::Array1::zeros(d);
    let d_res1 =
        instance_norm_bwd(&d_n1_out, &cache.n1, store.a1(idx.n1_gamma), &mut dgamma1, &mut dbeta1);
    grads.add_bias(idx.n1_gamma, &dgamma1);
    grads.add_bias(idx.n1_beta, &dbeta1);

    // output projection
    let d_heads = linear_bwd(
        cache.heads.view(),
        store.a2(idx.wo),
        flat2(&d_res1),
        &mut grads.a2_mut(idx.wo),
        None,
    );

    // attention values and softmax
    let mut d_attn = Array4::zeros((b, m, v, v));
    let mut d_val = Array2::zeros((b * v, d));
    for bi in 0..b {
        for head in 0..m {
            let dh = d_heads.slice(ndarray::s![bi * v..(bi + 1) * v, head * dv..(head + 1) * dv]);
            let vh =
                cache.v.slice(ndarray::s![bi * v..(bi + 1) * v, head * dv..(head + 1) * dv]);
            let a = cache.attn.slice(ndarray::s![bi, head, .., ..]);
            let mut da = d_attn.slice_mut(ndarray::s![bi, head, .., ..]);
            ndarray::linalg::general_mat_mul(1.0, &dh, &vh.t(), 0.0, &mut da);
            let mut dvh =
                d_val.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dv..(head + 1) * dv]);
            ndarray::linalg::general_mat_mul(1.0, &a.t(), &dh, 1.0, &mut dvh);
        }
    }
    let mut d_blend = Array4::zeros((b, m, v, v));
    for bi in 0..b {
        for head in 0..m {
            for i in 0..v {
                let y = cache.attn.slice(ndarray::s![bi, head, i, ..]);
                let dy = d_attn.slice(ndarray::s![bi, head, i, ..]);
                let mut dl = d_blend.slice_mut(ndarray::s![bi, head, i, ..]);
                softmax_bwd_slice(
                    y.as_slice().unwrap(),
                    dy.as_slice().unwrap(),
                    dl.as_slice_mut().unwrap(),
                );
            }
        }
    }

    // score blending
    let d_scores = match idx.synth {
        Some([w1, b1, w2, b2]) => {
            let rows = b * v * v;
            let mut d_mlp_out = Array2::zeros((rows, m));
            for bi in 0..b {
                for i in 0..v {
                    for j in 0..v {
                        let r = (bi * v + i) * v + j;
                        for head in 0..m {
                            d_mlp_out[[r, head]] = d_blend[[bi, head, i, j]];
                        }
                    }
                }
            }
            let h1 = cache.mlp_h1.as_ref().unwrap();
            let mlp_in = cache.mlp_in.as_ref().unwrap();
            let mut db = ndarray::Array1::zeros(m);
            let mut d_h1 = linear_bwd(
                h1.view(),
                store.a2(w2),
                d_mlp_out.view(),
                &mut grads.a2_mut(w2),
                Some(&mut db),
            );
            grads.add_bias(b2, &db);
            relu_bwd_inplace(&mut d_h1, h1);
            let mut db1v = ndarray::Array1::zeros(2 * m);
            let d_mlp_in = linear_bwd(
                mlp_in.view(),
                store.a2(w1),
                d_h1.view(),
                &mut grads.a2_mut(w1),
                Some(&mut db1v),
            );
            grads.add_bias(b1, &db1v);

            let mut d_scores = Array4::zeros((b, m, v, v));
            let d_aux = d_aux_node.as_mut().expect("synth layers accumulate aux grads");
            for bi in 0..b {
                for i in 0..v {
                    for j in 0..v {
                        let r = (bi * v + i) * v + j;
                        for head in 0..m {
                            d_scores[[bi, head, i, j]] = d_mlp_in[[r, head]];
                            d_aux[[bi, head, i, j]] += d_mlp_in[[r, m + head]];
                        }
                    }
                }
            }
            d_scores
        }
        None => d_blend,
    };

    // self-attention scores -> q, k
    let mut d_q = Array2::zeros((b * v, cfg.pos_dim));
    let mut d_k = Array2::zeros((b * v, cfg.pos_dim));
    for bi in 0..b {
        for head in 0..m {
            let ds = d_scores.slice(ndarray::s![bi, head, .., ..]);
            let qh =
                cache.q.slice(ndarray::s![bi * v..(bi + 1) * v, head * dqk..(head + 1) * dqk]);
            let kh =
                cache.k.slice(ndarray::s![bi * v..(bi + 1) * v, head * dqk..(head + 1) * dqk]);
            let mut dqh =
                d_q.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dqk..(head + 1) * dqk]);
            ndarray::linalg::general_mat_mul(scale, &ds, &kh, 1.0, &mut dqh);
            let mut dkh =
                d_k.slice_mut(ndarray::s![bi * v..(bi + 1) * v, head * dqk..(head + 1) * dqk]);
            ndarray::linalg::general_mat_mul(scale, &ds.t(), &qh, 1.0, &mut dkh);
        }
    }

    // input projections; residual path adds straight through
    let h_flat = flat2(&cache.h_in);
    let mut d_h_in = d_res1;
    let dq_in = linear_bwd(h_flat, store.a2(idx.wq), d_q.view(), &mut grads.a2_mut(idx.wq), None);
    let dk_in = linear_bwd(h_flat, store.a2(idx.wk), d_k.view(), &mut grads.a2_mut(idx.wk), None);
    let dv_in = linear_bwd(h_flat, store.a2(idx.wv), d_val.view(), &mut grads.a2_mut(idx.wv), None);
    d_h_in += &unflat(dq_in, b, v);
    d_h_in += &unflat(dk_in, b, v);
    d_h_in += &unflat(dv_in, b, v);
    d_h_in
}
