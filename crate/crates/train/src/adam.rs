use ndarray::ArrayD;

use pdp_nn::{Grads, ParamStore};

/// Adaptive-moment gradient descent with the usual default coefficients.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = store.zeros_like().0;
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One descent step along `grads` with step size `lr`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for idx in 0..grads.0.len() {
            let g = &grads.0[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = params.raw_mut(idx);
            for ((pv, gv), (mv, vv)) in
                p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
