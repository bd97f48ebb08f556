//! ADAGRAD ascent on the log marginal likelihood.

use crate::error::{check_dim, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub step_size: f64,
    /// Running `Σ g²` per coordinate.
    pub accumulated_sq: Vec<f64>,
    pub iteration: usize,
    pub epsilon_div: f64,
}

impl AdagradState {
    pub fn new(dim: usize, step_size: f64) -> Self {
        Self {
            step_size,
            accumulated_sq: vec![0.0; dim],
            iteration: 0,
            epsilon_div: 1e-8,
        }
    }

    /// In-place version of [`adagrad_step`].
    pub fn step(&mut self, g: &[f64], theta: &mut [f64]) -> Result<()> {
        check_dim(self.accumulated_sq.len(), g.len())?;
        check_dim(g.len(), theta.len())?;
        for ((acc, &gi), t) in self.accumulated_sq.iter_mut().zip(g).zip(theta.iter_mut()) {
            *acc += gi * gi;
            *t += self.step_size * gi / (acc.sqrt() + self.epsilon_div);
        }
        self.iteration += 1;
        Ok(())
    }
}

/// `acc += g∘g; θ += η g / (√acc + ε)`.
pub fn adagrad_step(state: &AdagradState, g: &[f64], theta: &[f64]) -> Result<(AdagradState, Vec<f64>)> {
    let mut next = state.clone();
    let mut t = theta.to_vec();
    next.step(g, &mut t)?;
    Ok((next, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_normalized() {
        let s = AdagradState::new(3, 1.0);
        let (s, t) = adagrad_step(&s, &[2.0, -0.5, 0.0], &[0.0; 3]).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-8);
        assert!((t[1] + 1.0).abs() < 1e-7);
        assert_eq!(t[2], 0.0);
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn second_identical_step_shrinks_by_root_two() {
        let s = AdagradState::new(1, 1.0);
        let (s, t1) = adagrad_step(&s, &[3.0], &[0.0]).unwrap();
        let (_, t2) = adagrad_step(&s, &[3.0], &t1).unwrap();
        assert!(((t2[0] - t1[0]) - 1.0 / 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn dimension_checked() {
        assert!(adagrad_step(&AdagradState::new(2, 1.0), &[1.0], &[0.0, 0.0]).is_err());
    }
}
