use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::instance::{Instance, Variant};
use crate::route::Route;

/// Build a random feasible tour left to right, deterministic per seed.
///
/// At each step the next node is sampled uniformly among the choices that
/// keep the prefix extendable: any unplaced pickup, plus deliveries whose
/// pickup is already placed (and, under LIFO, whose goods top the stack).
/// Construction never dead-ends under these rules.
pub fn random_initial_solution(instance: &Instance, variant: Variant, seed: u64) -> Route {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_initial_solution_with(instance, variant, &mut rng)
}

/// Same as [`random_initial_solution`] but drawing from a caller-owned RNG.
pub fn random_initial_solution_with<R: Rng>(
    instance: &Instance,
    variant: Variant,
    rng: &mut R,
) -> Route {
    let n = instance.n;
    let mut order = Vec::with_capacity(2 * n + 1);
    order.push(0);
    let mut pickup_placed = vec![false; n + 1];
    let mut delivery_placed = vec![false; n + 1];
    let mut stack: Vec<usize> = Vec::new();

    let mut candidates = Vec::with_capacity(2 * n);
    while order.len() < 2 * n + 1 {
        candidates.clear();
        for i in 1..=n {
            if !pickup_placed[i] {
                candidates.push(i);
            }
        }
        match variant {
            Variant::Pdtsp => {
                for i in 1..=n {
                    if pickup_placed[i] && !delivery_placed[i] {
                        candidates.push(i + n);
                    }
                }
            }
            Variant::PdtspLifo => {
                if let Some(&top) = stack.last() {
                    candidates.push(top + n);
                }
            }
        }
        let node = candidates[rng.gen_range(0..candidates.len())];
        if node <= n {
            pickup_placed[node] = true;
            stack.push(node);
        } else {
            delivery_placed[node - n] = true;
            stack.pop();
        }
        order.push(node);
    }
    Route::new(order, 2 * n + 1).expect("construction yields a valid permutation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::is_feasible;

    #[test]
    fn single_request_has_unique_tour() {
        let inst = Instance::generate(1, 4, Variant::Pdtsp).unwrap();
        for seed in 0..10 {
            let r = random_initial_solution(&inst, Variant::Pdtsp, seed);
            assert_eq!(r.order(), &[0, 1, 2]);
        }
    }

    #[test]
    fn lifo_samples_are_always_feasible() {
        let inst = Instance::generate(6, 8, Variant::PdtspLifo).unwrap();
        for seed in 0..1000 {
            let r = random_initial_solution(&inst, Variant::PdtspLifo, seed);
            assert!(is_feasible(&r, 6, Variant::PdtspLifo), "seed {seed}");
        }
    }

    #[test]
    fn pdtsp_samples_are_always_feasible() {
        let inst = Instance::generate(6, 8, Variant::Pdtsp).unwrap();
        for seed in 0..200 {
            let r = random_initial_solution(&inst, Variant::Pdtsp, seed);
            assert!(is_feasible(&r, 6, Variant::Pdtsp), "seed {seed}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_route() {
        let inst = Instance::generate(5, 1, Variant::PdtspLifo).unwrap();
        let a = random_initial_solution(&inst, Variant::PdtspLifo, 42);
        let b = random_initial_solution(&inst, Variant::PdtspLifo, 42);
        assert_eq!(a.order(), b.order());
    }
}
