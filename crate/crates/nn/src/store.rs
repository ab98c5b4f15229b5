//! Flat named parameter storage shared by the networks.
//!
//! Parameters are registered in a fixed order at construction; gradients and
//! optimizer moments reuse the same indexing, which keeps update loops and
//! serialization trivial.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, IxDyn};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    vals: Vec<ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self { names: Vec::new(), vals: Vec::new() }
    }

    /// Register a weight matrix initialized uniformly in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in = rows`.
    pub fn push_weight<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> usize {
        let bound = 1.0 / (rows as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push_raw(name, ArrayD::from_shape_vec(IxDyn(&[rows, cols]), data).unwrap())
    }

    /// Register a bias vector, initialized with the owning layer's fan-in rule.
    pub fn push_bias<R: Rng>(&mut self, name: &str, len: usize, fan_in: usize, rng: &mut R) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push_raw(name, ArrayD::from_shape_vec(IxDyn(&[len]), data).unwrap())
    }

    /// Register an affine scale (ones) or shift (zeros) vector.
    pub fn push_const(&mut self, name: &str, len: usize, value: f64) -> usize {
        self.push_raw(name, ArrayD::from_elem(IxDyn(&[len]), value))
    }

    fn push_raw(&mut self, name: &str, val: ArrayD<f64>) -> usize {
        debug_assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.vals.push(val);
        self.vals.len() - 1
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn raw(&self, idx: usize) -> &ArrayD<f64> {
        &self.vals[idx]
    }

    pub fn raw_mut(&mut self, idx: usize) -> &mut ArrayD<f64> {
        &mut self.vals[idx]
    }

    pub fn a2(&self, idx: usize) -> ArrayView2<'_, f64> {
        self.vals[idx].view().into_dimensionality().expect("2-d parameter")
    }

    pub fn a1(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.vals[idx].view().into_dimensionality().expect("1-d parameter")
    }

    pub fn a2_mut(&mut self, idx: usize) -> ArrayViewMut2<'_, f64> {
        self.vals[idx].view_mut().into_dimensionality().expect("2-d parameter")
    }

    pub fn a1_mut(&mut self, idx: usize) -> ArrayViewMut1<'_, f64> {
        self.vals[idx].view_mut().into_dimensionality().expect("1-d parameter")
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.vals.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads(self.vals.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.vals.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.vals.iter_mut())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers with the same indexing as the owning [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<ArrayD<f64>>);

impl Grads {
    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.fill(0.0);
        }
    }

    pub fn a2_mut(&mut self, idx: usize) -> ArrayViewMut2<'_, f64> {
        self.0[idx].view_mut().into_dimensionality().expect("2-d gradient")
    }

    pub fn a1_mut(&mut self, idx: usize) -> ArrayViewMut1<'_, f64> {
        self.0[idx].view_mut().into_dimensionality().expect("1-d gradient")
    }

    pub fn add_bias(&mut self, idx: usize, delta: &Array1<f64>) {
        let mut v = self.a1_mut(idx);
        v += delta;
    }

    pub fn add_weight(&mut self, idx: usize, delta: &Array2<f64>) {
        let mut v = self.a2_mut(idx);
        v += delta;
    }

    /// Euclidean norm over all entries.
    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale so the global norm does not exceed `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.0 {
                g.mapv_inplace(|x| x * s);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let w = store.push_weight("w", 64, 32, &mut rng);
        let bound = 1.0 / 8.0;
        assert!(store.raw(w).iter().all(|&x| x.abs() < bound));
        assert_eq!(store.param_count(), 64 * 32);
    }

    #[test]
    fn clip_bounds_global_norm() {
        let mut store = ParamStore::new();
        store.push_const("a", 4, 3.0);
        let mut g = store.zeros_like();
        g.0[0].fill(2.0);
        let before = g.clip_global_norm(1.0);
        assert!((before - 4.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
