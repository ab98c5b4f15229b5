//! Feasibility rules for both tour variants.
//!
//! Precedence: every pickup before its delivery. LIFO additionally requires
//! that a delivery only happens while its goods sit on top of the loading
//! stack, which is equivalent to all request intervals along the tour being
//! pairwise nested or disjoint.

use crate::error::{Error, Result};
use crate::instance::Variant;
use crate::route::Route;

/// First position at which the stack discipline (or precedence) breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LifoViolation {
    /// Position in the stored order whose delivery is not the stack top.
    pub position: usize,
    /// The delivery node at that position.
    pub node: usize,
}

/// Simulate loading along the route: push at each pickup, pop at each
/// delivery. Returns the stack contents (request ids, bottom first) after
/// every position, or the first position whose delivery is illegal — either
/// because its goods are buried or because they were never picked up.
pub fn lifo_stack_trace(
    route: &Route,
    n: usize,
) -> std::result::Result<Vec<Vec<usize>>, LifoViolation> {
    let mut stacks = Vec::with_capacity(route.len());
    let mut stack: Vec<usize> = Vec::new();
    for (t, &node) in route.order().iter().enumerate() {
        if node == 0 {
            // depot: nothing loaded or unloaded
        } else if node <= n {
            stack.push(node);
        } else {
            let request = node - n;
            if stack.last() != Some(&request) {
                return Err(LifoViolation { position: t, node });
            }
            stack.pop();
        }
        stacks.push(stack.clone());
    }
    Ok(stacks)
}

/// Precedence check: every pickup visited before its delivery. Requests
/// absent from the route (removed pairs) are skipped.
pub fn is_precedence_feasible(route: &Route, n: usize) -> bool {
    (1..=n).all(|i| match (route.position(i), route.position(i + n)) {
        (Some(p), Some(d)) => p < d,
        (None, None) => true,
        _ => false,
    })
}

/// Interval predicate equivalent to the stack simulation: precedence holds
/// and any two request intervals `[pos(i+), pos(i-)]` are nested or disjoint,
/// never properly crossing.
pub fn intervals_nested_or_disjoint(route: &Route, n: usize) -> bool {
    if !is_precedence_feasible(route, n) {
        return false;
    }
    let spans: Vec<(usize, usize)> = (1..=n)
        .filter_map(|i| Some((route.position(i)?, route.position(i + n)?)))
        .collect();
    for (idx, &(a0, a1)) in spans.iter().enumerate() {
        for &(b0, b1) in &spans[idx + 1..] {
            let disjoint = a1 < b0 || b1 < a0;
            let nested = (a0 < b0 && b1 < a1) || (b0 < a0 && a1 < b1);
            if !(disjoint || nested) {
                return false;
            }
        }
    }
    true
}

/// Variant feasibility of a full tour.
pub fn is_feasible(route: &Route, n: usize, variant: Variant) -> bool {
    match variant {
        Variant::Pdtsp => is_precedence_feasible(route, n),
        Variant::PdtspLifo => {
            is_precedence_feasible(route, n) && lifo_stack_trace(route, n).is_ok()
        }
    }
}

/// Feasible reinsertion anchors for one removed request.
///
/// Entries are indexed by positions `(t_j, t_k)` in the reduced route; the
/// anchor nodes themselves are `nodes()[t_j]` and `nodes()[t_k]`.
#[derive(Debug, Clone)]
pub struct ReinsertionMask {
    size: usize,
    nodes: Vec<usize>,
    allowed: Vec<bool>,
}

impl ReinsertionMask {
    /// Number of anchor candidates per side (`2n - 1`).
    pub fn size(&self) -> usize {
        self.size
    }

    /// Reduced-route visiting order the position indices refer to.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn allowed(&self, t_j: usize, t_k: usize) -> bool {
        self.allowed[t_j * self.size + t_k]
    }

    pub fn allowed_flat(&self) -> &[bool] {
        &self.allowed
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&b| b).count()
    }

    /// Whether inserting the pair after nodes `(j, k)` is feasible.
    pub fn allowed_nodes(&self, j: usize, k: usize) -> Option<bool> {
        let t_j = self.nodes.iter().position(|&x| x == j)?;
        let t_k = self.nodes.iter().position(|&x| x == k)?;
        Some(self.allowed(t_j, t_k))
    }
}

/// Compute which anchor pairs `(j, k)` admit a feasible reinsertion of
/// `request` into `reduced` (the tour with the pair already removed).
///
/// Precedence rule: `pos(j) <= pos(k)` (equality means the pair goes in
/// consecutively). LIFO additionally requires the stretch strictly between
/// the two insertion points to be balanced: every pickup in it is delivered
/// in it and vice versa. Removing a pair never breaks feasibility, so the
/// reduced route is assumed feasible.
pub fn reinsertion_mask(
    reduced: &Route,
    request: usize,
    n: usize,
    variant: Variant,
) -> Result<ReinsertionMask> {
    let pickup = request;
    let delivery = request + n;
    if request < 1 || request > n {
        return Err(Error::InvalidArgument(format!("request id {request} out of range")));
    }
    if reduced.contains(pickup) || reduced.contains(delivery) {
        return Err(Error::InvalidArgument(format!(
            "request {request} is still present in the reduced route"
        )));
    }
    let size = reduced.len();
    let nodes = reduced.order().to_vec();
    let mut allowed = vec![false; size * size];

    // depth[t] = number of open requests after visiting position t
    let mut depth = vec![0i32; size];
    let mut d = 0i32;
    for (t, &node) in nodes.iter().enumerate() {
        if node >= 1 && node <= n {
            d += 1;
        } else if node > n {
            d -= 1;
        }
        depth[t] = d;
    }

    for t_j in 0..size {
        let base = depth[t_j];
        let mut min_depth = i32::MAX;
        for t_k in t_j..size {
            let ok = if t_k == t_j {
                true
            } else {
                min_depth = min_depth.min(depth[t_k]);
                match variant {
                    Variant::Pdtsp => true,
                    // balanced stretch: never dips below the level at t_j and
                    // returns to it
                    Variant::PdtspLifo => min_depth >= base && depth[t_k] == base,
                }
            };
            allowed[t_j * size + t_k] = ok;
        }
    }

    Ok(ReinsertionMask { size, nodes, allowed })
}
