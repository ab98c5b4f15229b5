//! Cyclic positional encoding.
//!
//! Sinusoidal position embeddings adapted to cyclic sequences: each dimension
//! uses a period derived from the sequence length, and positions are folded
//! through a triangle-shaped phase so that the encoding wraps smoothly around
//! the tour. Row `i` embeds sequence position `i` (0-based); the implicit
//! closing depot is never embedded.

use ndarray::Array2;
use std::f64::consts::PI;

/// Encoding table of shape `[num_nodes, dim]`, entries in `[-1, 1]`.
pub fn cyclic_positional_encoding(num_nodes: usize, dim: usize) -> Array2<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "encoding dim must be even");
    assert!(num_nodes >= 3, "cyclic encoding needs at least 3 positions");
    let nv = num_nodes as f64;
    let half = (dim / 2) as f64;
    let mut table = Array2::zeros((num_nodes, dim));
    for d in 0..dim {
        let period = if d < dim / 2 {
            let root = nv.powf(1.0 / half);
            ((3 * (d / 3) + 1) as f64 / dim as f64) * (nv - root) + root
        } else {
            nv
        };
        let omega = 2.0 * PI / period;
        let wraps = (nv / period).ceil();
        for i in 0..num_nodes {
            let z = i as f64 / nv * period * wraps;
            let arg = omega * (z.rem_euclid(2.0 * period) - period).abs();
            table[[i, d]] = if d % 2 == 0 { arg.sin() } else { arg.cos() };
        }
    }
    table
}
