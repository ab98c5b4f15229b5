//! Rollout segment collection: step a batch of environments with sampled
//! actions for `n` steps, recording everything the updates need.

use rand_chacha::ChaCha8Rng;

use pdp_core::{Instance, PairAction, SearchState};
use pdp_nn::policy::ActionSource;
use pdp_nn::{PolicyNet, SelectMode, StateBatch};

use crate::error::Result;

pub struct StepRecord {
    /// Featurization at decision time (replayable under updated parameters).
    pub batch: StateBatch,
    pub actions: Vec<PairAction>,
    pub rewards: Vec<f64>,
    /// Joint log probabilities under the behavior policy.
    pub logp_old: Vec<f64>,
}

pub struct Segment {
    pub steps: Vec<StepRecord>,
    /// State after the last step, for the bootstrap value.
    pub bootstrap: StateBatch,
}

/// Advance every state by `n_step` sampled actions, mutating `states` in
/// place and returning the recorded segment.
pub fn collect_segment(
    instances: &[Instance],
    states: &mut [SearchState],
    policy: &PolicyNet,
    n_step: usize,
    rngs: &mut [ChaCha8Rng],
) -> Result<Segment> {
    let inst_refs: Vec<&Instance> = instances.iter().collect();
    let mut steps = Vec::with_capacity(n_step);
    for _ in 0..n_step {
        let state_refs: Vec<&SearchState> = states.iter().collect();
        let batch = StateBatch::from_states(&inst_refs, &state_refs);
        let (out, _) = policy.forward(&batch, ActionSource::Select(SelectMode::Sample, rngs), false);
        let mut rewards = Vec::with_capacity(states.len());
        for (b, state) in states.iter_mut().enumerate() {
            let outcome = state.step(&instances[b], out.actions[b])?;
            rewards.push(outcome.reward);
        }
        steps.push(StepRecord { batch, actions: out.actions, rewards, logp_old: out.logps });
    }
    let state_refs: Vec<&SearchState> = states.iter().collect();
    let bootstrap = StateBatch::from_states(&inst_refs, &state_refs);
    Ok(Segment { steps, bootstrap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pdp_core::construct::random_initial_solution;
    use pdp_core::{apply_action, Route, Variant};
    use pdp_nn::ModelConfig;
    use rand::SeedableRng;

    fn setup(count: usize) -> (Vec<Instance>, Vec<SearchState>, PolicyNet, Vec<ChaCha8Rng>) {
        let instances: Vec<Instance> =
            (0..count).map(|i| Instance::generate(4, i as u64, Variant::PdtspLifo).unwrap()).collect();
        let states: Vec<SearchState> = instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let route = random_initial_solution(inst, inst.variant, 100 + i as u64);
                SearchState::new(inst, route, inst.node_count())
            })
            .collect();
        let policy = PolicyNet::new(ModelConfig::with_dim(16), 1).unwrap();
        let rngs = (0..count).map(|i| ChaCha8Rng::seed_from_u64(i as u64)).collect();
        (instances, states, policy, rngs)
    }

    #[test]
    fn rewards_are_never_negative_and_best_never_rises() {
        let (instances, mut states, policy, mut rngs) = setup(3);
        let before: Vec<f64> = states.iter().map(|s| s.best_cost).collect();
        let segment =
            collect_segment(&instances, &mut states, &policy, 5, &mut rngs).unwrap();
        for step in &segment.steps {
            assert!(step.rewards.iter().all(|&r| r >= 0.0));
        }
        for (b, state) in states.iter().enumerate() {
            assert!(state.best_cost <= before[b] + 1e-12);
        }
    }

    #[test]
    fn replaying_recorded_actions_reproduces_final_route() {
        let (instances, mut states, policy, mut rngs) = setup(2);
        let initial: Vec<Route> = states.iter().map(|s| s.route.clone()).collect();
        let segment =
            collect_segment(&instances, &mut states, &policy, 5, &mut rngs).unwrap();
        for b in 0..instances.len() {
            let mut route = initial[b].clone();
            for step in &segment.steps {
                route = apply_action(&route, step.actions[b], &instances[b]).unwrap();
            }
            assert_eq!(route.order(), states[b].route.order(), "instance {b}");
        }
    }

    #[test]
    fn bootstrap_batch_reflects_final_states() {
        let (instances, mut states, policy, mut rngs) = setup(2);
        let segment =
            collect_segment(&instances, &mut states, &policy, 3, &mut rngs).unwrap();
        for b in 0..2 {
            assert_eq!(segment.bootstrap.order[b], states[b].route.order());
            assert_eq!(segment.bootstrap.best_cost[b], states[b].best_cost);
        }
    }
}
