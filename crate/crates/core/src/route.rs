use crate::error::{Error, Result};
use crate::feasibility::is_feasible;
use crate::instance::Instance;

const ABSENT: usize = usize::MAX;

/// A tour stored as the visiting order, always starting at the depot.
///
/// The closing depot of the cycle is implicit: the edge from the last stored
/// node back to node 0 is part of the objective but never materialized.
/// Routes with a request pair removed are represented the same way (the
/// node-position map simply has two holes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    order: Vec<usize>,
    /// Inverse map node id -> position in `order` (`usize::MAX` if absent).
    pos: Vec<usize>,
}

impl Route {
    /// Build a route from a visiting order over node ids `0..node_count`.
    /// The order must start at the depot and contain no duplicates; it may
    /// omit nodes (reduced routes used during reinsertion).
    pub fn new(order: Vec<usize>, node_count: usize) -> Result<Self> {
        if order.first() != Some(&0) {
            return Err(Error::InvalidArgument("route must start at the depot".into()));
        }
        let mut pos = vec![ABSENT; node_count];
        for (t, &node) in order.iter().enumerate() {
            if node >= node_count {
                return Err(Error::InvalidArgument(format!("node id {node} out of range")));
            }
            if pos[node] != ABSENT {
                return Err(Error::InvalidArgument(format!("node {node} appears twice")));
            }
            pos[node] = t;
        }
        Ok(Self { order, pos })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn node_at(&self, position: usize) -> usize {
        self.order[position]
    }

    pub fn contains(&self, node: usize) -> bool {
        node < self.pos.len() && self.pos[node] != ABSENT
    }

    /// Position of `node` in the stored order (0-based).
    pub fn position(&self, node: usize) -> Option<usize> {
        if self.contains(node) {
            Some(self.pos[node])
        } else {
            None
        }
    }

    /// Capacity of the node-id space this route was built over.
    pub fn node_space(&self) -> usize {
        self.pos.len()
    }

    /// Predecessor along the cyclic tour (the depot's predecessor is the
    /// last stored node).
    pub fn pred(&self, node: usize) -> usize {
        let t = self.pos[node];
        debug_assert_ne!(t, ABSENT);
        self.order[(t + self.order.len() - 1) % self.order.len()]
    }

    /// Successor along the cyclic tour (the last node's successor is the depot).
    pub fn succ(&self, node: usize) -> usize {
        let t = self.pos[node];
        debug_assert_ne!(t, ABSENT);
        self.order[(t + 1) % self.order.len()]
    }

    /// Total Euclidean tour length, including the closing edge to the depot.
    pub fn objective(&self, instance: &Instance) -> f64 {
        let mut total = 0.0;
        for w in self.order.windows(2) {
            total += instance.distance(w[0], w[1]);
        }
        total + instance.distance(*self.order.last().unwrap(), self.order[0])
    }

    /// Route with request `request`'s pickup and delivery removed.
    pub fn remove_pair(&self, request: usize, n: usize) -> Route {
        let pickup = request;
        let delivery = request + n;
        let order: Vec<usize> =
            self.order.iter().copied().filter(|&x| x != pickup && x != delivery).collect();
        let mut pos = vec![ABSENT; self.pos.len()];
        for (t, &node) in order.iter().enumerate() {
            pos[node] = t;
        }
        Route { order, pos }
    }

    /// Insert request `request`'s pickup immediately after node `j` and its
    /// delivery immediately after node `k`, both relative to this (reduced)
    /// route. With `j == k` the pair goes in consecutively as `(j, i+, i-)`.
    /// Purely mechanical: the result is not checked for variant feasibility.
    pub fn insert_pair(&self, request: usize, j: usize, k: usize, n: usize) -> Result<Route> {
        let pickup = request;
        let delivery = request + n;
        if j == pickup || j == delivery || k == pickup || k == delivery {
            return Err(Error::InvalidArgument(
                "insertion anchors must differ from the inserted pair".into(),
            ));
        }
        if !self.contains(j) || !self.contains(k) {
            return Err(Error::InvalidArgument("insertion anchor not in route".into()));
        }
        if self.contains(pickup) || self.contains(delivery) {
            return Err(Error::InvalidArgument("pair to insert is still in the route".into()));
        }
        let mut order = Vec::with_capacity(self.order.len() + 2);
        for &node in &self.order {
            order.push(node);
            if node == j {
                order.push(pickup);
            }
            if node == k {
                order.push(delivery);
            }
        }
        let mut pos = vec![ABSENT; self.pos.len()];
        for (t, &node) in order.iter().enumerate() {
            pos[node] = t;
        }
        Ok(Route { order, pos })
    }
}

/// One improvement step: extract a request pair and splice it back after the
/// given anchor nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairAction {
    /// Request id `i`, i.e. the node pair `(i, i + n)`.
    pub request: usize,
    /// Node the pickup is reinserted after (in the reduced route).
    pub after_pickup: usize,
    /// Node the delivery is reinserted after (in the reduced route).
    pub after_delivery: usize,
}

/// Apply a removal-reinsertion action and validate the result against the
/// instance's variant. Callers that sample from a feasibility mask never see
/// the `ConstraintViolation` branch; it guards direct use.
pub fn apply_action(route: &Route, action: PairAction, instance: &Instance) -> Result<Route> {
    let reduced = route.remove_pair(action.request, instance.n);
    let next =
        reduced.insert_pair(action.request, action.after_pickup, action.after_delivery, instance.n)?;
    if !is_feasible(&next, instance.n, instance.variant) {
        return Err(Error::ConstraintViolation(format!(
            "reinserting request {} after ({}, {}) breaks the {} rules",
            action.request, action.after_pickup, action.after_delivery, instance.variant
        )));
    }
    Ok(next)
}
