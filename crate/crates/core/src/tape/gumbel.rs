use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Temperature schedule for Gumbel-softmax feeding:
/// `tau(epoch) = max(floor, start - decrement * (epoch - 1))` for epochs from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GumbelConfig {
    pub start: f64,
    pub decrement: f64,
    pub floor: f64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        Self {
            start: 5.0,
            decrement: 0.5,
            floor: 1.0,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0) || !(self.start >= self.floor) || !(self.decrement >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "bad temperature schedule {self:?}: need floor > 0, start >= floor, decrement >= 0"
            )));
        }
        Ok(())
    }

    pub fn tau(&self, epoch: usize) -> f64 {
        let steps = epoch.saturating_sub(1) as f64;
        (self.start - self.decrement * steps).max(self.floor)
    }
}

/// Standard Gumbel samples `-ln(-ln U)`.
pub fn gumbel_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let g = GumbelConfig::default();
        assert_eq!(g.tau(1), 5.0);
        assert_eq!(g.tau(2), 4.5);
        assert_eq!(g.tau(9), 1.0);
        assert_eq!(g.tau(50), 1.0);
        assert!(g.validate().is_ok());
        let bad = GumbelConfig {
            floor: 0.0,
            ..g
        };
        assert!(bad.validate().is_err());
    }
}
