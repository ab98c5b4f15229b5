use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which pickup-and-delivery variant a tour must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Variant {
    /// Precedence only: each pickup before its delivery.
    Pdtsp,
    /// Precedence plus rear-only loading: a delivery is legal only while its
    /// goods are on top of the stack.
    PdtspLifo,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Pdtsp => write!(f, "PDTSP"),
            Variant::PdtspLifo => write!(f, "PDTSP_LIFO"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdtsp" => Ok(Variant::Pdtsp),
            "pdtsp_lifo" | "pdtsp-lifo" | "pdtspl" => Ok(Variant::PdtspLifo),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

/// One problem instance: a depot plus `n` pickup-delivery requests.
///
/// Node indexing convention: node 0 is the depot, nodes `1..=n` are pickups
/// and node `i + n` is the delivery partner of pickup `i`. Coordinates live
/// in the unit square for generated data; loaded benchmark data is normalized
/// into it and `scale` records the factor needed to map tour lengths back to
/// the raw geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub coords: Vec<[f64; 2]>,
    pub variant: Variant,
    pub scale: f64,
}

impl Instance {
    pub fn new(n: usize, coords: Vec<[f64; 2]>, variant: Variant) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument(format!("request count must be >= 1, got {n}")));
        }
        if coords.len() != 2 * n + 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates for n = {}, got {}",
                2 * n + 1,
                n,
                coords.len()
            )));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(Self { n, coords, variant, scale: 1.0 })
    }

    /// Uniform random instance in the unit square, deterministic per seed.
    pub fn generate(n: usize, seed: u64, variant: Variant) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument(format!("request count must be >= 1, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..2 * n + 1).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        Self::new(n, coords, variant)
    }

    pub fn node_count(&self) -> usize {
        2 * self.n + 1
    }

    pub fn pickup(&self, request: usize) -> usize {
        debug_assert!(request >= 1 && request <= self.n);
        request
    }

    pub fn delivery(&self, request: usize) -> usize {
        debug_assert!(request >= 1 && request <= self.n);
        request + self.n
    }

    pub fn is_pickup(&self, node: usize) -> bool {
        node >= 1 && node <= self.n
    }

    pub fn is_delivery(&self, node: usize) -> bool {
        node > self.n && node <= 2 * self.n
    }

    /// Request a node belongs to (`None` for the depot).
    pub fn request_of(&self, node: usize) -> Option<usize> {
        if self.is_pickup(node) {
            Some(node)
        } else if self.is_delivery(node) {
            Some(node - self.n)
        } else {
            None
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let [ax, ay] = self.coords[a];
        let [bx, by] = self.coords[b];
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }
}
