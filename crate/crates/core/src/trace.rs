//! Hutchinson trace estimation with Rademacher probes.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::precond::rng;

/// Probe vectors with entries in `{-1, +1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    probes: Vec<Vec<f64>>,
    seed: u64,
}

impl ProbeSet {
    /// Builds a probe set from explicit vectors, checking the Rademacher property.
    pub fn from_vectors(probes: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let n = probes.first().map(Vec::len).ok_or_else(|| Error::InvalidData("no probes".into()))?;
        for p in &probes {
            check_dim(n, p.len())?;
            if !p.iter().all(|&v| v == 1.0 || v == -1.0) {
                return Err(Error::InvalidData("probe entries must be ±1".into()));
            }
        }
        Ok(Self { probes, seed })
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.probes[0].len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// `nr` i.i.d. Rademacher vectors of length `n`. Zero sizes are bumped to one.
pub fn sample_probes(n: usize, nr: usize, seed: u64) -> ProbeSet {
    let mut rng = rng(seed);
    let probes = (0..nr.max(1))
        .map(|_| (0..n.max(1)).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    ProbeSet { probes, seed }
}

/// `(1/N_r) Σ rᵀ A r` with `apply_a` evaluated concurrently over the probes.
pub fn estimate_trace<F>(apply_a: F, probes: &ProbeSet) -> f64
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let total: Vec<f64> = probes.probes.par_iter().map(|r| dot(r, &apply_a(r))).collect();
    total.iter().sum::<f64>() / probes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_rademacher() {
        let a = sample_probes(50, 3, 11);
        assert_eq!(a, sample_probes(50, 3, 11));
        assert_ne!(a, sample_probes(50, 3, 12));
        assert!(a.probes().iter().flatten().all(|v| v * v == 1.0));
    }

    #[test]
    fn identity_gives_n() {
        let p = sample_probes(17, 2, 4);
        assert_eq!(estimate_trace(|r| r.to_vec(), &p), 17.0);
    }

    #[test]
    fn rejects_non_rademacher() {
        assert!(ProbeSet::from_vectors(vec![vec![1.0, 0.5]], 0).is_err());
        assert!(ProbeSet::from_vectors(vec![], 0).is_err());
    }
}
