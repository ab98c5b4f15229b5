//! Finite-difference validation of every analytic gradient: the policy's
//! joint action log-probability and the critic's state value, differentiated
//! with respect to every parameter tensor on a small configuration.

use ndarray::Array3;
use pdp_core::construct::random_initial_solution;
use pdp_core::{Instance, PairAction, SearchState, Variant};
use pdp_nn::policy::ActionSource;
use pdp_nn::{CriticNet, EncoderVariant, ModelConfig, PolicyNet, SelectMode, StateBatch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const REL_TOL: f64 = 1e-3;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        pos_dim: 16,
        heads: 4,
        layers: 2,
        logit_clamp: 6.0,
        encoder: EncoderVariant::Synth,
    }
}

/// Two states over three requests (7 nodes), with history entries so the
/// removal features are exercised.
fn setup() -> (Vec<Instance>, Vec<SearchState>, Vec<PairAction>, Vec<f64>) {
    let mut instances = Vec::new();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for (seed, variant) in [(3u64, Variant::Pdtsp), (4, Variant::PdtspLifo)] {
        let inst = Instance::generate(3, seed, variant).unwrap();
        let route = random_initial_solution(&inst, variant, seed + 10);
        let mut state = SearchState::new(&inst, route, 7);
        state.history.push(2);
        state.history.push(1);
        instances.push(inst);
        states.push(state);
    }
    // pick behavior actions by sampling once with a throwaway net
    let net = PolicyNet::new(small_cfg(), 99).unwrap();
    let refs: Vec<&Instance> = instances.iter().collect();
    let srefs: Vec<&SearchState> = states.iter().collect();
    let batch = StateBatch::from_states(&refs, &srefs);
    let mut rngs: Vec<ChaCha8Rng> =
        (0..2).map(|i| ChaCha8Rng::seed_from_u64(1000 + i)).collect();
    let (out, _) = net.forward(&batch, ActionSource::Select(SelectMode::Sample, &mut rngs), false);
    actions.extend(out.actions);
    (instances, states, actions, vec![0.7, 1.3])
}

fn weighted_logp(net: &PolicyNet, batch: &StateBatch, actions: &[PairAction], w: &[f64]) -> f64 {
    let (out, _) = net.forward(batch, ActionSource::Forced(actions), false);
    out.logps.iter().zip(w).map(|(l, w)| l * w).sum()
}

/// Deterministic sample of element indices across a tensor.
fn sample_elems(len: usize, want: usize) -> Vec<usize> {
    if len <= want {
        (0..len).collect()
    } else {
        let stride = len / want;
        (0..want).map(|i| i * stride).collect()
    }
}

#[test]
fn policy_logp_gradients_match_finite_differences() {
    let (instances, states, actions, weights) = setup();
    let refs: Vec<&Instance> = instances.iter().collect();
    let srefs: Vec<&SearchState> = states.iter().collect();
    let batch = StateBatch::from_states(&refs, &srefs);

    let net = PolicyNet::new(small_cfg(), 42).unwrap();
    let mut grads = net.store.zeros_like();
    let (_, cache) = net.forward(&batch, ActionSource::Forced(&actions), true);
    net.backward_logp(&batch, &cache.unwrap(), &weights, &mut grads);

    let mut checked = 0usize;
    let mut worst: (f64, String) = (0.0, String::new());
    for idx in 0..net.store.len() {
        let len = net.store.raw(idx).len();
        for elem in sample_elems(len, 12) {
            let mut plus = net.clone();
            plus.store.raw_mut(idx).as_slice_mut().unwrap()[elem] += EPS;
            let mut minus = net.clone();
            minus.store.raw_mut(idx).as_slice_mut().unwrap()[elem] -= EPS;
            let fd = (weighted_logp(&plus, &batch, &actions, &weights)
                - weighted_logp(&minus, &batch, &actions, &weights))
                / (2.0 * EPS);
            let an = grads.0[idx].as_slice().unwrap()[elem];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            let rel = (fd - an).abs() / denom;
            if rel > worst.0 {
                worst = (rel, format!("{}[{elem}] fd={fd:.3e} an={an:.3e}", net.store.name(idx)));
            }
            assert!(
                rel <= REL_TOL,
                "gradient mismatch at {}[{elem}]: fd={fd:.6e} analytic={an:.6e} rel={rel:.2e}",
                net.store.name(idx)
            );
            checked += 1;
        }
    }
    println!("checked {checked} policy gradient elements; worst rel err {:.2e} at {}", worst.0, worst.1);
    assert!(checked > 300);
}

#[test]
fn critic_value_gradients_match_finite_differences() {
    let (instances, states, _, weights) = setup();
    let refs: Vec<&Instance> = instances.iter().collect();
    let srefs: Vec<&SearchState> = states.iter().collect();
    let batch = StateBatch::from_states(&refs, &srefs);

    let policy = PolicyNet::new(small_cfg(), 7).unwrap();
    let enc = policy.encode(&batch).embeddings;
    let best: Vec<f64> = batch.best_cost.clone();

    let critic = CriticNet::new(small_cfg(), 8).unwrap();
    let mut grads = critic.store.zeros_like();
    let (_, cache) = critic.value(&enc, &best, true);
    critic.backward(&cache.unwrap(), &weights, &mut grads);

    let value_of = |net: &CriticNet, enc: &Array3<f64>| -> f64 {
        let (v, _) = net.value(enc, &best, false);
        v.iter().zip(&weights).map(|(v, w)| v * w).sum()
    };

    let mut checked = 0usize;
    for idx in 0..critic.store.len() {
        let len = critic.store.raw(idx).len();
        for elem in sample_elems(len, 12) {
            let mut plus = critic.clone();
            plus.store.raw_mut(idx).as_slice_mut().unwrap()[elem] += EPS;
            let mut minus = critic.clone();
            minus.store.raw_mut(idx).as_slice_mut().unwrap()[elem] -= EPS;
            let fd = (value_of(&plus, &enc) - value_of(&minus, &enc)) / (2.0 * EPS);
            let an = grads.0[idx].as_slice().unwrap()[elem];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            assert!(
                (fd - an).abs() / denom <= REL_TOL,
                "critic gradient mismatch at {}[{elem}]: fd={fd:.6e} analytic={an:.6e}",
                critic.store.name(idx)
            );
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn vanilla_policy_gradients_match_finite_differences() {
    let (instances, states, actions, weights) = setup();
    let refs: Vec<&Instance> = instances.iter().collect();
    let srefs: Vec<&SearchState> = states.iter().collect();
    let batch = StateBatch::from_states(&refs, &srefs);

    let cfg = ModelConfig { encoder: EncoderVariant::Vanilla, ..small_cfg() };
    let net = PolicyNet::new(cfg, 43).unwrap();
    let mut grads = net.store.zeros_like();
    let (_, cache) = net.forward(&batch, ActionSource::Forced(&actions), true);
    net.backward_logp(&batch, &cache.unwrap(), &weights, &mut grads);

    for idx in 0..net.store.len() {
        let len = net.store.raw(idx).len();
        for elem in sample_elems(len, 6) {
            let mut plus = net.clone();
            plus.store.raw_mut(idx).as_slice_mut().unwrap()[elem] += EPS;
            let mut minus = net.clone();
            minus.store.raw_mut(idx).as_slice_mut().unwrap()[elem] -= EPS;
            let fd = (weighted_logp(&plus, &batch, &actions, &weights)
                - weighted_logp(&minus, &batch, &actions, &weights))
                / (2.0 * EPS);
            let an = grads.0[idx].as_slice().unwrap()[elem];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            assert!(
                (fd - an).abs() / denom <= REL_TOL,
                "gradient mismatch at {}[{elem}]: fd={fd:.6e} analytic={an:.6e}",
                net.store.name(idx)
            );
        }
    }
}
