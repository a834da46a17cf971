//! The omitted-covariate toy dataset: `log lambda_i = 0.1 + x1_i + c x2_i`
//! with `x1, x2 ~ N(0, 1)`, fitted with `x2` left out.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{domain, Result};
use crate::model::{PoissonLgm, DEFAULT_BETA_VARIANCE};

pub const TOY_INTERCEPT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub y: Vec<u64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub c: f64,
}

impl ToyData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Intercept and `x1` only (the misspecified fit when `c != 0`).
    pub fn omitted_model(&self) -> Result<PoissonLgm> {
        let x = DMatrix::from_fn(self.len(), 2, |i, j| if j == 0 { 1.0 } else { self.x1[i] });
        PoissonLgm::new(self.y.clone(), None, x, vec![], None)
    }

    /// Intercept, `x1` and `x2`.
    pub fn full_model(&self) -> Result<PoissonLgm> {
        let x = DMatrix::from_fn(self.len(), 3, |i, j| match j {
            0 => 1.0,
            1 => self.x1[i],
            _ => self.x2[i],
        });
        PoissonLgm::new(self.y.clone(), None, x, vec![], Some(DMatrix::identity(3, 3) * DEFAULT_BETA_VARIANCE))
    }
}

/// Draws `n` observations; per observation `x1`, `x2`, then `y`.
pub fn simulate_toy(n: usize, c: f64, seed: u64) -> Result<ToyData> {
    if n == 0 {
        return Err(domain("toy dataset needs n >= 1"));
    }
    if !c.is_finite() {
        return Err(domain(format!("coefficient c must be finite, got {c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = ToyData { y: Vec::with_capacity(n), x1: Vec::with_capacity(n), x2: Vec::with_capacity(n), c };
    for _ in 0..n {
        let x1: f64 = StandardNormal.sample(&mut rng);
        let x2: f64 = StandardNormal.sample(&mut rng);
        let lambda = (TOY_INTERCEPT + x1 + c * x2).exp();
        let y = Poisson::new(lambda).map_err(|e| domain(format!("rate {lambda}: {e}")))?.sample(&mut rng);
        data.x1.push(x1);
        data.x2.push(x2);
        data.y.push(y as u64);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_draws_repeat() {
        assert_eq!(simulate_toy(30, 1.2, 4).unwrap(), simulate_toy(30, 1.2, 4).unwrap());
        assert_ne!(simulate_toy(30, 1.2, 4).unwrap(), simulate_toy(30, 1.2, 5).unwrap());
        assert!(simulate_toy(0, 0.0, 1).is_err());
    }

    #[test]
    fn counts_track_the_rate() {
        let d = simulate_toy(20_000, 0.0, 9).unwrap();
        // E[y] = exp(0.1 + 1/2)
        let mean = d.y.iter().sum::<u64>() as f64 / d.len() as f64;
        assert!((mean - (0.6f64).exp()).abs() < 0.06, "mean {mean}");
    }
}
