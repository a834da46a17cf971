//! The Negative Log-Gamma law `NLG(nu, 1)`: the distribution of `-ln G` for
//! `G ~ Gamma(nu, 1)`.
//!
//! Every residual of the augmented regression follows this law exactly: shape
//! one for inter-arrival residuals, shape `y_i` for the second residual of the
//! improved scheme. Its density is
//!
//! ```text
//! f(u) = exp(-nu * u - exp(-u)) / Gamma(nu)
//! ```
//!
//! with the mode at `-ln nu`, a double-exponential left tail and an
//! exponential right tail.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{domain, Result};
use crate::special::{self, Tail};

/// Shape parameter of an NLG law.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NlgShape(f64);

impl NlgShape {
    pub fn new(nu: f64) -> Result<Self> {
        if nu.is_finite() && nu > 0.0 {
            Ok(Self(nu))
        } else {
            Err(domain(format!("NLG shape must be positive and finite, got {nu}")))
        }
    }

    /// Shape of the residual attached to an observed count.
    pub fn from_count(count: u64) -> Result<Self> {
        if count == 0 {
            return Err(domain("NLG shape from a zero count"));
        }
        Ok(Self(count as f64))
    }

    /// Shape one: inter-arrival residuals.
    pub const fn unit() -> Self {
        Self(1.0)
    }

    #[inline]
    pub fn nu(self) -> f64 {
        self.0
    }

    /// Location of the density maximum, `-ln nu`.
    #[inline]
    pub fn mode(self) -> f64 {
        -self.0.ln()
    }

    pub(crate) fn key(self) -> u64 {
        self.0.to_bits()
    }
}

impl std::fmt::Display for NlgShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NLG({}, 1)", self.0)
    }
}

/// Log-density with `ln Gamma(nu)` supplied by the caller; used in hot loops
/// where the shape is fixed per residual.
#[inline]
pub(crate) fn log_density_with_norm(u: f64, nu: f64, ln_gamma_nu: f64) -> f64 {
    -u * nu - (-u).exp() - ln_gamma_nu
}

pub fn log_density(u: f64, shape: NlgShape) -> Result<f64> {
    if !u.is_finite() {
        return Err(domain(format!("NLG log-density at non-finite point {u}")));
    }
    Ok(log_density_with_norm(u, shape.nu(), special::ln_gamma(shape.nu())))
}

/// Mean and variance: `-digamma(nu)` and `trigamma(nu)`.
pub fn moments(shape: NlgShape) -> (f64, f64) {
    (-special::digamma(shape.nu()), special::trigamma(shape.nu()))
}

/// `P(U <= u) = Q(nu, e^{-u})`.
pub fn cdf(u: f64, shape: NlgShape) -> f64 {
    if u == f64::NEG_INFINITY {
        return 0.0;
    }
    if u == f64::INFINITY {
        return 1.0;
    }
    special::gamma_q(shape.nu(), (-u).exp())
}

/// `P(U > u) = P(nu, e^{-u})`, accurate deep in the right tail.
pub fn survival(u: f64, shape: NlgShape) -> f64 {
    if u == f64::NEG_INFINITY {
        return 1.0;
    }
    if u == f64::INFINITY {
        return 0.0;
    }
    special::gamma_p(shape.nu(), (-u).exp())
}

/// Quantile of order `p`: `-ln(gamma_quantile(1 - p))`, evaluated without
/// forming `1 - p`.
pub fn quantile(p: f64, shape: NlgShape) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("quantile order must lie in (0, 1), got {p}")));
    }
    // U <= u  <=>  G >= e^{-u}
    Ok(-special::gamma_quantile(shape.nu(), Tail::Upper(p))?.ln())
}

/// The point exceeded with probability `tail`, i.e. the quantile of order
/// `1 - tail`. Use this for orders such as `1 - 1e-16` that are not
/// representable as `f64`.
pub fn upper_quantile(tail: f64, shape: NlgShape) -> Result<f64> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(domain(format!("tail probability must lie in (0, 1), got {tail}")));
    }
    Ok(-special::gamma_quantile(shape.nu(), Tail::Lower(tail))?.ln())
}

/// Deterministic kernel of the sampler: `-ln g` for a Gamma draw `g`.
#[inline]
pub fn from_gamma_draw(g: f64) -> f64 {
    -g.ln()
}

/// Draws one NLG variate from the caller's stream.
pub fn sample<R: Rng + ?Sized>(shape: NlgShape, rng: &mut R) -> f64 {
    let g = if shape.nu() == 1.0 {
        rng.sample::<f64, _>(rand_distr::Exp1)
    } else {
        Gamma::new(shape.nu(), 1.0).expect("validated shape").sample(rng)
    };
    from_gamma_draw(g)
}
