//! Randomized invariants of the problem model.

use pdp_core::construct::random_initial_solution;
use pdp_core::feasibility::{is_feasible, reinsertion_mask};
use pdp_core::instance::{Instance, Variant};
use pdp_core::route::{apply_action, PairAction, Route};
use proptest::prelude::*;

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Pdtsp), Just(Variant::PdtspLifo)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Removing any request pair from a feasible route leaves it feasible.
    #[test]
    fn removal_closure(n in 1usize..=8, seed in 0u64..1000, variant in variant_strategy()) {
        let inst = Instance::generate(n, seed, variant).unwrap();
        let route = random_initial_solution(&inst, variant, seed ^ 0xabcd);
        for request in 1..=n {
            let reduced = route.remove_pair(request, n);
            prop_assert!(is_feasible(&reduced, n, variant));
        }
    }

    /// The reinsertion mask equals splice-then-check feasibility everywhere.
    #[test]
    fn mask_soundness_and_completeness(
        n in 2usize..=7,
        seed in 0u64..500,
        variant in variant_strategy(),
    ) {
        let inst = Instance::generate(n, seed, variant).unwrap();
        let route = random_initial_solution(&inst, variant, seed.wrapping_add(17));
        let request = (seed as usize % n) + 1;
        let reduced = route.remove_pair(request, n);
        let mask = reinsertion_mask(&reduced, request, n, variant).unwrap();
        for t_j in 0..mask.size() {
            for t_k in 0..mask.size() {
                let (j, k) = (mask.nodes()[t_j], mask.nodes()[t_k]);
                let spliced = reduced.insert_pair(request, j, k, n).unwrap();
                prop_assert_eq!(mask.allowed(t_j, t_k), is_feasible(&spliced, n, variant));
            }
        }
    }

    /// Applying an action keeps the node multiset and the depot at the front.
    #[test]
    fn apply_action_preserves_nodes(
        n in 2usize..=8,
        seed in 0u64..500,
        variant in variant_strategy(),
    ) {
        let inst = Instance::generate(n, seed, variant).unwrap();
        let route = random_initial_solution(&inst, variant, seed.wrapping_add(3));
        let request = (seed as usize % n) + 1;
        let reduced = route.remove_pair(request, n);
        let mask = reinsertion_mask(&reduced, request, n, variant).unwrap();
        let (mut t_j, mut t_k) = (0, 0);
        'outer: for a in 0..mask.size() {
            for b in 0..mask.size() {
                if mask.allowed(a, b) && (seed as usize + a + b) % 3 == 0 {
                    t_j = a;
                    t_k = b;
                    break 'outer;
                }
            }
        }
        if !mask.allowed(t_j, t_k) {
            // (0,0) is always feasible: inserting right after the depot
            prop_assert!(mask.allowed(0, 0));
        }
        let action = PairAction {
            request,
            after_pickup: mask.nodes()[t_j],
            after_delivery: mask.nodes()[t_k],
        };
        let next = apply_action(&route, action, &inst).unwrap();
        prop_assert_eq!(next.order()[0], 0);
        let mut a: Vec<usize> = route.order().to_vec();
        let mut b: Vec<usize> = next.order().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    /// Tour length does not depend on how requests are numbered.
    #[test]
    fn objective_invariant_under_request_relabeling(
        n in 2usize..=6,
        seed in 0u64..500,
    ) {
        let inst = Instance::generate(n, seed, Variant::Pdtsp).unwrap();
        let route = random_initial_solution(&inst, Variant::Pdtsp, seed);

        // rotate request ids: i -> i % n + 1
        let relabel = |req: usize| req % n + 1;
        let mut coords = vec![[0.0; 2]; 2 * n + 1];
        coords[0] = inst.coords[0];
        for i in 1..=n {
            coords[relabel(i)] = inst.coords[i];
            coords[relabel(i) + n] = inst.coords[i + n];
        }
        let permuted = Instance::new(n, coords, Variant::Pdtsp).unwrap();
        let order: Vec<usize> = route
            .order()
            .iter()
            .map(|&x| {
                if x == 0 {
                    0
                } else if x <= n {
                    relabel(x)
                } else {
                    relabel(x - n) + n
                }
            })
            .collect();
        let mapped = Route::new(order, 2 * n + 1).unwrap();
        prop_assert!((route.objective(&inst) - mapped.objective(&permuted)).abs() < 1e-12);
    }
}
