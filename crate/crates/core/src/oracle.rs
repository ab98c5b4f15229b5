//! Exhaustive exact solver for tiny instances, used as a test reference.

use crate::error::{Error, Result};
use crate::instance::{Instance, Variant};
use crate::route::Route;

/// Hard cap on the request count the exhaustive solver accepts.
pub const BRUTE_FORCE_LIMIT: usize = 5;

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub cost: f64,
    pub route: Route,
    /// Number of feasible complete tours enumerated.
    pub feasible_count: u64,
}

/// Enumerate every feasible tour and return the cheapest. Extensions are
/// explored in ascending node order, so cost ties resolve to the
/// lexicographically smallest visiting sequence.
pub fn brute_force_solve(instance: &Instance, variant: Variant) -> Result<BruteForceResult> {
    let n = instance.n;
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimit(n, BRUTE_FORCE_LIMIT));
    }
    let mut search = Search {
        instance,
        variant,
        order: vec![0],
        pickup_placed: vec![false; n + 1],
        stack: Vec::new(),
        partial_cost: 0.0,
        best_cost: f64::INFINITY,
        best_order: Vec::new(),
        feasible_count: 0,
    };
    search.run();
    let route = Route::new(search.best_order, instance.node_count())
        .expect("enumeration produces valid permutations");
    Ok(BruteForceResult { cost: search.best_cost, route, feasible_count: search.feasible_count })
}

struct Search<'a> {
    instance: &'a Instance,
    variant: Variant,
    order: Vec<usize>,
    pickup_placed: Vec<bool>,
    stack: Vec<usize>,
    partial_cost: f64,
    best_cost: f64,
    best_order: Vec<usize>,
    feasible_count: u64,
}

impl Search<'_> {
    fn run(&mut self) {
        let n = self.instance.n;
        if self.order.len() == 2 * n + 1 {
            let total =
                self.partial_cost + self.instance.distance(*self.order.last().unwrap(), 0);
            self.feasible_count += 1;
            // strict improvement keeps the first (lexicographically
            // smallest) tour on ties
            if total < self.best_cost {
                self.best_cost = total;
                self.best_order = self.order.clone();
            }
            return;
        }
        let mut candidates: Vec<usize> = Vec::new();
        for i in 1..=n {
            if !self.pickup_placed[i] {
                candidates.push(i);
            }
        }
        match self.variant {
            Variant::Pdtsp => {
                for &open in &self.stack {
                    candidates.push(open + n);
                }
            }
            Variant::PdtspLifo => {
                if let Some(&top) = self.stack.last() {
                    candidates.push(top + n);
                }
            }
        }
        candidates.sort_unstable();
        for node in candidates {
            let prev = *self.order.last().unwrap();
            let edge = self.instance.distance(prev, node);
            self.partial_cost += edge;
            self.order.push(node);
            let popped = if node <= n {
                self.pickup_placed[node] = true;
                self.stack.push(node);
                None
            } else {
                let request = node - n;
                let idx = self.stack.iter().position(|&x| x == request).unwrap();
                Some((idx, self.stack.remove(idx)))
            };
            self.run();
            match popped {
                Some((idx, request)) => self.stack.insert(idx, request),
                None => {
                    self.stack.pop();
                    self.pickup_placed[node] = false;
                }
            }
            self.order.pop();
            self.partial_cost -= edge;
        }
    }
}
