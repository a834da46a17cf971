//! Gaussian-mixture approximations of the NLG residual law.
//!
//! A mixture is fitted per shape by minimizing the Kullback-Leibler
//! divergence from the exact density on a quadrature grid
//! ([`fit_mixture`]). Its tail cut-offs ([`compute_tail_thresholds`]) mark
//! where the log-density gap to the exact law first exceeds one, and
//! [`build_adjusted_mixture`] appends low-weight components past the upper
//! cut-off so the approximation follows the slow exponential decay of the
//! right tail.

mod adjust;
mod bank;
mod cache;
mod fit;
mod tail;

pub use adjust::{build_adjusted_mixture, build_adjusted_mixture_with, tail_reach, TailWeightRule, TAIL_COMPONENTS};
pub use bank::{components_for_shape, MixtureBank, ShapeLaw, MOMENT_MATCH_ABOVE};
pub use cache::{read_cache_file, write_cache_file, CacheEntry};
pub use fit::{assess, central_error, fit_mixture, moment_matched, FitConfig, FitFailure, FitReport, FittedMixture};
pub use tail::{compute_tail_thresholds, log_gap, TailThresholds, GAP_THRESHOLD};

use crate::error::{domain, Result};
use crate::nlg::NlgShape;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance on the total weight of a mixture.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    pub fn new(weight: f64, mean: f64, variance: f64) -> Self {
        Self { weight, mean, variance }
    }

    /// `ln(w * phi(z; m, s2))`
    #[inline]
    pub fn log_weighted_density(&self, z: f64) -> f64 {
        let d = z - self.mean;
        self.weight.ln() - 0.5 * (LN_2PI + self.variance.ln()) - 0.5 * d * d / self.variance
    }
}

/// Precomputed terms for fast evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EvalTerm {
    /// ln w - ln(2 pi s2) / 2
    pub log_scale: f64,
    pub mean: f64,
    /// 1 / (2 s2)
    pub half_precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<Component>,
    target: NlgShape,
    /// Number of leading components that came from the fit; the rest are tail additions.
    base_len: usize,
    terms: Vec<EvalTerm>,
}

impl GaussianMixture {
    /// Validates the invariants: at least one component, non-negative
    /// weights summing to one, positive finite variances.
    pub fn new(components: Vec<Component>, target: NlgShape) -> Result<Self> {
        let base_len = components.len();
        Self::with_tail(components, target, base_len)
    }

    pub(crate) fn with_tail(components: Vec<Component>, target: NlgShape, base_len: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(domain("a mixture needs at least one component"));
        }
        if base_len == 0 || base_len > components.len() {
            return Err(domain("base component count out of range"));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(domain(format!("component {k} has invalid weight {}", c.weight)));
            }
            if !(c.variance > 0.0) || !c.variance.is_finite() {
                return Err(domain(format!("component {k} has invalid variance {}", c.variance)));
            }
            if !c.mean.is_finite() {
                return Err(domain(format!("component {k} has non-finite mean")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(domain(format!("mixture weights sum to {total}, not 1")));
        }
        // zero-weight components keep a (-inf) term so that labels index
        // components and terms alike
        let terms = components
            .iter()
            .map(|c| EvalTerm {
                log_scale: c.weight.ln() - 0.5 * (LN_2PI + c.variance.ln()),
                mean: c.mean,
                half_precision: 0.5 / c.variance,
            })
            .collect();
        Ok(Self { components, target, base_len, terms })
    }

    /// Rescales weights to sum to one before validating.
    pub fn normalized(mut components: Vec<Component>, target: NlgShape) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(domain(format!("cannot normalize weights summing to {total}")));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Self::new(components, target)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn target(&self) -> NlgShape {
        self.target
    }

    /// True when tail components were appended to a fitted base.
    pub fn is_adjusted(&self) -> bool {
        self.base_len < self.components.len()
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    /// Total weight carried by the appended tail components.
    pub fn tail_weight(&self) -> f64 {
        self.components[self.base_len..].iter().map(|c| c.weight).sum()
    }

    pub(crate) fn terms(&self) -> &[EvalTerm] {
        &self.terms
    }

    /// `ln sum_k w_k phi(z; m_k, s2_k)` via log-sum-exp. Unchecked.
    #[inline]
    pub fn ln_pdf(&self, z: f64) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for t in &self.terms {
            let d = z - t.mean;
            let v = t.log_scale - d * d * t.half_precision;
            if v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let mut acc = 0.0;
        for t in &self.terms {
            let d = z - t.mean;
            acc += (t.log_scale - d * d * t.half_precision - max).exp();
        }
        max + acc.ln()
    }

    pub fn log_density(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(domain(format!("mixture log-density at non-finite point {z}")));
        }
        Ok(self.ln_pdf(z))
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - mean).powi(2)))
            .sum()
    }
}

/// Free-function form of [`GaussianMixture::log_density`].
pub fn mixture_log_density(mix: &GaussianMixture, z: f64) -> Result<f64> {
    mix.log_density(z)
}
