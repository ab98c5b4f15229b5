use crate::error::Result;
use crate::history::ActionHistory;
use crate::instance::Instance;
use crate::route::{apply_action, PairAction, Route};

/// Immediate reward of a step: how much the best-so-far cost dropped.
/// Never negative; zero for non-improving moves.
pub fn reward(prev_best_cost: f64, new_cost: f64) -> f64 {
    prev_best_cost - new_cost.min(prev_best_cost)
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub reward: f64,
    pub new_cost: f64,
}

/// Search state carried through an improvement rollout: the current tour,
/// the action history window and the best incumbent found so far.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub route: Route,
    pub history: ActionHistory,
    pub best_cost: f64,
    pub best_route: Route,
}

impl SearchState {
    pub fn new(instance: &Instance, route: Route, history_window: usize) -> Self {
        let cost = route.objective(instance);
        Self {
            best_route: route.clone(),
            history: ActionHistory::new(instance.n, history_window),
            best_cost: cost,
            route,
        }
    }

    pub fn current_cost(&self, instance: &Instance) -> f64 {
        self.route.objective(instance)
    }

    /// Apply one removal-reinsertion action. Updates the incumbent and the
    /// action history and returns the clamped reduced-cost reward.
    ///
    /// The incumbent update reuses the exact objective value computed here,
    /// so rewards telescope exactly: summed over a rollout they equal the
    /// total incumbent improvement.
    pub fn step(&mut self, instance: &Instance, action: PairAction) -> Result<StepOutcome> {
        let next = apply_action(&self.route, action, instance)?;
        let new_cost = next.objective(instance);
        let r = reward(self.best_cost, new_cost);
        if new_cost < self.best_cost {
            self.best_cost = new_cost;
            self.best_route = next.clone();
        }
        self.history.push(action.request);
        self.route = next;
        Ok(StepOutcome { reward: r, new_cost })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::random_initial_solution;
    use crate::feasibility::reinsertion_mask;
    use crate::instance::Variant;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_direct_values() {
        assert_eq!(reward(10.0, 9.0), 1.0);
        assert_eq!(reward(10.0, 12.0), 0.0);
    }

    /// Uniformly random feasible action, mirroring what a random decoder does.
    fn random_action(
        state: &SearchState,
        instance: &Instance,
        rng: &mut ChaCha8Rng,
    ) -> PairAction {
        let request = rng.gen_range(1..=instance.n);
        let reduced = state.route.remove_pair(request, instance.n);
        let mask = reinsertion_mask(&reduced, request, instance.n, instance.variant).unwrap();
        let feasible: Vec<(usize, usize)> = (0..mask.size())
            .flat_map(|tj| (0..mask.size()).map(move |tk| (tj, tk)))
            .filter(|&(tj, tk)| mask.allowed(tj, tk))
            .collect();
        let (tj, tk) = feasible[rng.gen_range(0..feasible.len())];
        PairAction {
            request,
            after_pickup: mask.nodes()[tj],
            after_delivery: mask.nodes()[tk],
        }
    }

    #[test]
    fn rewards_telescope_to_total_incumbent_drop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let variant = if trial % 2 == 0 { Variant::Pdtsp } else { Variant::PdtspLifo };
            let inst = Instance::generate(5, trial, variant).unwrap();
            let route = random_initial_solution(&inst, variant, trial + 1000);
            let mut state = SearchState::new(&inst, route, inst.node_count());
            let start_best = state.best_cost;
            let mut total = 0.0;
            for _ in 0..100 {
                let action = random_action(&state, &inst, &mut rng);
                total += state.step(&inst, action).unwrap().reward;
            }
            assert!(
                (total - (start_best - state.best_cost)).abs() <= 1e-9,
                "telescoping broke: {total} vs {}",
                start_best - state.best_cost
            );
        }
    }

    #[test]
    fn best_cost_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = Instance::generate(4, 3, Variant::PdtspLifo).unwrap();
        let route = random_initial_solution(&inst, Variant::PdtspLifo, 0);
        let mut state = SearchState::new(&inst, route, 8);
        let mut prev = state.best_cost;
        for _ in 0..200 {
            let action = random_action(&state, &inst, &mut rng);
            state.step(&inst, action).unwrap();
            assert!(state.best_cost <= prev + 1e-15);
            assert!(state.best_cost <= state.current_cost(&inst) + 1e-9);
            prev = state.best_cost;
        }
    }
}
