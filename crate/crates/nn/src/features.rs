//! Batched state featurization.
//!
//! A batch groups states of the same node count; instances may differ (the
//! augmented-inference path batches transformed copies of one instance, the
//! trainer batches independent instances).

use ndarray::{Array2, Array3};
use pdp_core::{Instance, SearchState, Variant};

/// No request chosen in a history slot.
pub const NO_REQUEST: i64 = -1;

#[derive(Debug, Clone)]
pub struct StateBatch {
    /// Node coordinates, `[batch, nodes, 2]`.
    pub coords: Array3<f64>,
    /// Visiting order per batch element, `order[b][t] = node`.
    pub order: Vec<Vec<usize>>,
    /// Inverse: `pos[b][node] = t`.
    pub pos: Vec<Vec<usize>>,
    /// Removal frequency of each request within the history window, `[batch, n]`.
    pub hist_count: Array2<f64>,
    /// Requests chosen at the 1st/2nd/3rd most recent step (`NO_REQUEST` if none).
    pub hist_last: Vec<[i64; 3]>,
    /// Objective of the best incumbent per batch element.
    pub best_cost: Vec<f64>,
    pub n: usize,
    pub variant: Variant,
}

impl StateBatch {
    pub fn from_states(instances: &[&Instance], states: &[&SearchState]) -> Self {
        assert_eq!(instances.len(), states.len());
        assert!(!states.is_empty());
        let n = instances[0].n;
        let v = instances[0].node_count();
        let b = states.len();
        let mut coords = Array3::zeros((b, v, 2));
        let mut order = Vec::with_capacity(b);
        let mut pos = Vec::with_capacity(b);
        let mut hist_count = Array2::zeros((b, n));
        let mut hist_last = Vec::with_capacity(b);
        let mut best_cost = Vec::with_capacity(b);
        for (bi, (inst, st)) in instances.iter().zip(states).enumerate() {
            assert_eq!(inst.n, n, "mixed instance sizes in one batch");
            for (node, c) in inst.coords.iter().enumerate() {
                coords[[bi, node, 0]] = c[0];
                coords[[bi, node, 1]] = c[1];
            }
            let ord = st.route.order().to_vec();
            let mut p = vec![0usize; v];
            for (t, &node) in ord.iter().enumerate() {
                p[node] = t;
            }
            order.push(ord);
            pos.push(p);
            for req in 1..=n {
                hist_count[[bi, req - 1]] = st.history.count(req) as f64;
            }
            hist_last.push([
                st.history.last(1).map_or(NO_REQUEST, |r| r as i64),
                st.history.last(2).map_or(NO_REQUEST, |r| r as i64),
                st.history.last(3).map_or(NO_REQUEST, |r| r as i64),
            ]);
            best_cost.push(st.best_cost);
        }
        Self {
            coords,
            order,
            pos,
            hist_count,
            hist_last,
            best_cost,
            n,
            variant: instances[0].variant,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.order.len()
    }

    pub fn node_count(&self) -> usize {
        2 * self.n + 1
    }
}
