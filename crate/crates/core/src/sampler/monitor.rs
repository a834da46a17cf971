//! Tail-excursion monitoring during the training phase.

use crate::error::{contract, Result};
use crate::model::ResidualLaws;

use super::Algorithm;

/// Per-row counts of monitored iterations whose residual fell above the
/// upper cut-off (`kappa_U`) or below the lower one (`kappa_L`).
#[derive(Debug, Clone, PartialEq)]
pub struct TailMonitor {
    xi_lower: Vec<f64>,
    xi_upper: Vec<f64>,
    track_lower: bool,
    pub upper_hits: Vec<u64>,
    pub lower_hits: Vec<u64>,
    pub iterations: u64,
}

impl TailMonitor {
    pub fn new(xi_lower: Vec<f64>, xi_upper: Vec<f64>, track_lower: bool) -> Result<Self> {
        if xi_lower.len() != xi_upper.len() {
            return Err(contract("lower and upper cut-offs differ in length"));
        }
        let n = xi_upper.len();
        Ok(Self { xi_lower, xi_upper, track_lower, upper_hits: vec![0; n], lower_hits: vec![0; n], iterations: 0 })
    }

    /// Cut-offs of each row's shape.
    pub fn for_laws(laws: &ResidualLaws, track_lower: bool) -> Self {
        let (lo, hi) = (0..laws.len())
            .map(|r| {
                let t = &laws.law(r).thresholds;
                (t.xi_lower, t.xi_upper)
            })
            .unzip();
        Self::new(lo, hi, track_lower).expect("matching lengths")
    }

    pub fn len(&self) -> usize {
        self.xi_upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi_upper.is_empty()
    }

    pub fn tracks_lower(&self) -> bool {
        self.track_lower
    }

    /// Records one monitored iteration.
    pub fn observe(&mut self, residuals: &[f64]) -> Result<()> {
        if residuals.len() != self.len() {
            return Err(contract(format!("{} residuals for {} monitored rows", residuals.len(), self.len())));
        }
        for (r, &e) in residuals.iter().enumerate() {
            if e > self.xi_upper[r] {
                self.upper_hits[r] += 1;
            }
            if self.track_lower && e < self.xi_lower[r] {
                self.lower_hits[r] += 1;
            }
        }
        self.iterations += 1;
        Ok(())
    }

    fn proportion(&self, hits: u64) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            hits as f64 / self.iterations as f64
        }
    }

    pub fn kappa_upper(&self) -> Vec<f64> {
        self.upper_hits.iter().map(|&h| self.proportion(h)).collect()
    }

    pub fn kappa_lower(&self) -> Vec<f64> {
        self.lower_hits.iter().map(|&h| self.proportion(h)).collect()
    }

    /// Rows whose upper excursion rate exceeds `p_upper` (strictly).
    pub fn flags(&self, p_upper: f64) -> Vec<bool> {
        self.kappa_upper().into_iter().map(|k| k > p_upper).collect()
    }

    /// RIAMS if any upper rate exceeds `p_upper`; otherwise MH-IAMS if any
    /// lower rate exceeds `p_lower`; otherwise IAMS.
    pub fn select(&self, p_lower: f64, p_upper: f64) -> Algorithm {
        if self.kappa_upper().iter().any(|&k| k > p_upper) {
            Algorithm::Riams
        } else if self.track_lower && self.kappa_lower().iter().any(|&k| k > p_lower) {
            Algorithm::MhIams
        } else {
            Algorithm::Iams
        }
    }
}
