//! Hand-crafted removal/reinsertion decoders (ablation baselines): uniform
//! random over the feasible set, and epsilon-greedy on incremental tour cost.

use rand::Rng;

use pdp_core::{reinsertion_mask, Instance, PairAction, ReinsertionMask, Route};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Random,
    EpsGreedy,
}

/// A policy assembled from hand-crafted decoders, one per role.
#[derive(Debug, Clone, Copy)]
pub struct HandcraftedPolicy {
    pub removal: DecoderKind,
    pub reinsertion: DecoderKind,
    /// Exploration probability of the epsilon-greedy decoders.
    pub eps: f64,
}

impl HandcraftedPolicy {
    pub fn random() -> Self {
        Self { removal: DecoderKind::Random, reinsertion: DecoderKind::Random, eps: 0.0 }
    }

    pub fn eps_greedy(eps: f64) -> Self {
        assert!((0.0..=1.0).contains(&eps));
        Self { removal: DecoderKind::EpsGreedy, reinsertion: DecoderKind::EpsGreedy, eps }
    }

    /// Pick a full action for the current route.
    pub fn select_action<R: Rng>(
        &self,
        instance: &Instance,
        route: &Route,
        rng: &mut R,
    ) -> PairAction {
        let request = match self.removal {
            DecoderKind::Random => rng.gen_range(1..=instance.n),
            DecoderKind::EpsGreedy => {
                if rng.gen::<f64>() < 1.0 - self.eps {
                    greedy_removal(instance, route)
                } else {
                    rng.gen_range(1..=instance.n)
                }
            }
        };
        let reduced = route.remove_pair(request, instance.n);
        let mask = reinsertion_mask(&reduced, request, instance.n, instance.variant)
            .expect("pair was removed");
        let (t_j, t_k) = match self.reinsertion {
            DecoderKind::Random => sample_uniform_feasible(&mask, rng),
            DecoderKind::EpsGreedy => {
                if rng.gen::<f64>() < 1.0 - self.eps {
                    greedy_reinsertion(instance, &reduced, request, &mask)
                } else {
                    sample_uniform_feasible(&mask, rng)
                }
            }
        };
        PairAction {
            request,
            after_pickup: mask.nodes()[t_j],
            after_delivery: mask.nodes()[t_k],
        }
    }
}

/// Exact probabilities a `Random` reinsertion decoder uses: uniform over the
/// feasible anchor pairs, zero elsewhere.
pub fn random_reinsertion_probs(mask: &ReinsertionMask) -> Vec<f64> {
    let feasible = mask.count_allowed();
    mask.allowed_flat()
        .iter()
        .map(|&ok| if ok { 1.0 / feasible as f64 } else { 0.0 })
        .collect()
}

fn sample_uniform_feasible<R: Rng>(mask: &ReinsertionMask, rng: &mut R) -> (usize, usize) {
    let feasible = mask.count_allowed();
    debug_assert!(feasible > 0);
    let target = rng.gen_range(0..feasible);
    let size = mask.size();
    let mut seen = 0;
    for t_j in 0..size {
        for t_k in 0..size {
            if mask.allowed(t_j, t_k) {
                if seen == target {
                    return (t_j, t_k);
                }
                seen += 1;
            }
        }
    }
    unreachable!("target within feasible count")
}

/// Request whose removal shortens the tour the most, smallest id on ties.
pub fn greedy_removal(instance: &Instance, route: &Route) -> usize {
    let mut best_req = 1;
    let mut best_gain = f64::NEG_INFINITY;
    for request in 1..=instance.n {
        let gain = removal_gain(instance, route, request);
        if gain > best_gain + 1e-15 {
            best_gain = gain;
            best_req = request;
        }
    }
    best_req
}

/// Tour length saved by deleting the request's pickup and delivery.
pub fn removal_gain(instance: &Instance, route: &Route, request: usize) -> f64 {
    let d = |a, b| instance.distance(a, b);
    let pickup = request;
    let delivery = request + instance.n;
    let (pp, sp) = (route.pred(pickup), route.succ(pickup));
    let (pd, sd) = (route.pred(delivery), route.succ(delivery));
    if sp == delivery {
        // adjacent pair: one bridge replaces three edges
        d(pp, pickup) + d(pickup, delivery) + d(delivery, sd) - d(pp, sd)
    } else {
        d(pp, pickup) + d(pickup, sp) - d(pp, sp) + d(pd, delivery) + d(delivery, sd) - d(pd, sd)
    }
}

/// Feasible anchor pair with the cheapest insertion, scanning row-major so
/// ties resolve to the smallest `(t_j, t_k)`.
pub fn greedy_reinsertion(
    instance: &Instance,
    reduced: &Route,
    request: usize,
    mask: &ReinsertionMask,
) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_delta = f64::INFINITY;
    for t_j in 0..mask.size() {
        for t_k in 0..mask.size() {
            if !mask.allowed(t_j, t_k) {
                continue;
            }
            let delta = insertion_delta(
                instance,
                reduced,
                request,
                mask.nodes()[t_j],
                mask.nodes()[t_k],
            );
            if delta < best_delta - 1e-15 {
                best_delta = delta;
                best = (t_j, t_k);
            }
        }
    }
    best
}

/// Tour length added by inserting the pair after `(j, k)` in the reduced
/// route.
pub fn insertion_delta(
    instance: &Instance,
    reduced: &Route,
    request: usize,
    j: usize,
    k: usize,
) -> f64 {
    let d = |a, b| instance.distance(a, b);
    let pickup = request;
    let delivery = request + instance.n;
    let sj = reduced.succ(j);
    if j == k {
        d(j, pickup) + d(pickup, delivery) + d(delivery, sj) - d(j, sj)
    } else {
        let sk = reduced.succ(k);
        d(j, pickup) + d(pickup, sj) - d(j, sj) + d(k, delivery) + d(delivery, sk) - d(k, sk)
    }
}
