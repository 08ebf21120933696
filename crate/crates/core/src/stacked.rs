//! Stacked opinion vectors and layer-major indexing.
//!
//! A state holds the opinions of `n` agents across `q` layers in layer-major
//! order: the block for layer `l` occupies indices `l*n .. (l+1)*n`, so the
//! (layer `l`, agent `i`) coordinate lives at `l*n + i` (0-based; file formats
//! and logs use 1-based indices).

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Index of (layer, agent) in a layer-major stacked vector over `n` agents.
#[inline]
pub fn stacked_index(n: usize, layer: usize, agent: usize) -> usize {
    layer * n + agent
}

/// Extracts agent `i`'s per-layer vector from a stacked vector (the role of H_i).
pub fn agent_component(x: &DVector<f64>, n: usize, q: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(q, |l, _| x[stacked_index(n, l, i)])
}

/// Extracts source `k`'s per-layer vector from a stacked vector (the role of T_k).
pub fn source_component(y: &DVector<f64>, m: usize, q: usize, k: usize) -> DVector<f64> {
    DVector::from_fn(q, |l, _| y[stacked_index(m, l, k)])
}

/// A stacked opinion state in `[0,1]^(n*q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    values: DVector<f64>,
    n: usize,
    q: usize,
}

impl StackedState {
    /// Wraps a stacked vector, checking length and the unit-interval invariant.
    pub fn new(values: DVector<f64>, n: usize, q: usize) -> Result<Self> {
        if values.len() != n * q {
            return Err(Error::DimensionMismatch {
                what: "stacked state".into(),
                expected: n * q,
                actual: values.len(),
            });
        }
        for (idx, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfUnitInterval {
                    what: "stacked state".into(),
                    index: idx,
                    value: v,
                });
            }
        }
        Ok(Self { values, n, q })
    }

    pub fn from_slice(values: &[f64], n: usize, q: usize) -> Result<Self> {
        Self::new(DVector::from_column_slice(values), n, q)
    }

    /// Constant state with every coordinate equal to `v`.
    pub fn constant(v: f64, n: usize, q: usize) -> Result<Self> {
        Self::new(DVector::from_element(n * q, v), n, q)
    }

    pub(crate) fn from_unchecked(values: DVector<f64>, n: usize, q: usize) -> Self {
        debug_assert_eq!(values.len(), n * q);
        Self { values, n, q }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coordinate of (layer, agent), 0-based.
    pub fn get(&self, layer: usize, agent: usize) -> f64 {
        self.values[stacked_index(self.n, layer, agent)]
    }

    /// Agent `i`'s opinion vector across layers (H_i x).
    pub fn agent(&self, i: usize) -> DVector<f64> {
        agent_component(&self.values, self.n, self.q, i)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Max-norm distance to another state.
    pub fn distance(&self, other: &StackedState) -> f64 {
        (&self.values - &other.values).amax()
    }
}

/// Draws `count` uniform states from `[0,1]^(n*q)` with a fixed-stream RNG.
pub fn sample_uniform(n: usize, q: usize, count: usize, seed: u64) -> Vec<StackedState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = DVector::from_fn(n * q, |_, _| rng.random_range(0.0..=1.0));
            StackedState::from_unchecked(v, n, q)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_major_indexing() {
        // 2 layers, 3 agents: layer 1 block first.
        let x = StackedState::from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3, 2).unwrap();
        assert_eq!(x.get(0, 2), 0.3);
        assert_eq!(x.get(1, 0), 0.4);
        let a1 = x.agent(1);
        assert_eq!(a1.as_slice(), &[0.2, 0.5]);
    }

    #[test]
    fn rejects_out_of_interval() {
        assert!(StackedState::from_slice(&[0.0, 1.2], 2, 1).is_err());
        assert!(StackedState::from_slice(&[-0.1, 0.5], 2, 1).is_err());
        assert!(StackedState::from_slice(&[0.0, 0.5, 0.5], 2, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_uniform(3, 2, 4, 7);
        let b = sample_uniform(3, 2, 4, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for st in &a {
            assert!(st.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
