//! Tail cut-offs: where a fitted mixture stops tracking the exact density.

use super::GaussianMixture;
use crate::error::{domain, Error, Result};
use crate::nlg::{self, NlgShape};
use crate::special;

/// Absolute log-density gap that defines a cut-off.
pub const GAP_THRESHOLD: f64 = 1.0;

/// Tail probability bounding the scan on each side.
const SCAN_TAIL: f64 = 1e-14;
/// March step as a fraction of the NLG standard deviation.
const STEPS_PER_SD: f64 = 64.0;
const BISECTION_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailThresholds {
    pub xi_lower: f64,
    pub xi_upper: f64,
    /// No crossing below the mode; `xi_lower` is the scan boundary.
    pub lower_open: bool,
    /// No crossing above the mode; `xi_upper` is the scan boundary.
    pub upper_open: bool,
    pub shape: NlgShape,
}

/// `|ln f(u) - ln g(u)|`
pub fn log_gap(mix: &GaussianMixture, u: f64) -> f64 {
    let shape = mix.target();
    let lf = nlg::log_density_with_norm(u, shape.nu(), special::ln_gamma(shape.nu()));
    (lf - mix.ln_pdf(u)).abs()
}

/// Locates the cut-offs by marching outward from the mode in steps of
/// `sd / 64` and bisecting the first bracket where the gap exceeds one.
pub fn compute_tail_thresholds(shape: NlgShape, mix: &GaussianMixture) -> Result<TailThresholds> {
    if mix.target() != shape {
        return Err(domain(format!("mixture targets {} but thresholds requested for {shape}", mix.target())));
    }
    let ln_gamma = special::ln_gamma(shape.nu());
    let gap = |u: f64| (nlg::log_density_with_norm(u, shape.nu(), ln_gamma) - mix.ln_pdf(u)).abs();
    let mode = shape.mode();
    if gap(mode) > GAP_THRESHOLD {
        return Err(Error::Numerical(format!(
            "mixture for {shape} misses the exact density by more than {GAP_THRESHOLD} at the mode"
        )));
    }
    let lo = nlg::quantile(SCAN_TAIL, shape)?;
    let hi = nlg::upper_quantile(SCAN_TAIL, shape)?;
    let step = nlg::moments(shape).1.sqrt() / STEPS_PER_SD;

    let march = |limit: f64, direction: f64| -> (f64, bool) {
        let mut inside = mode;
        loop {
            let next = inside + direction * step;
            let beyond = (next - limit) * direction >= 0.0;
            let probe = if beyond { limit } else { next };
            if gap(probe) > GAP_THRESHOLD {
                return (bisect(&gap, inside, probe), false);
            }
            if beyond {
                return (limit, true);
            }
            inside = next;
        }
    };
    let (xi_upper, upper_open) = march(hi, 1.0);
    let (xi_lower, lower_open) = march(lo, -1.0);
    Ok(TailThresholds { xi_lower, xi_upper, lower_open, upper_open, shape })
}

/// `inside` has gap <= threshold, `outside` has gap > threshold.
fn bisect(gap: &impl Fn(f64) -> f64, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        if gap(mid) > GAP_THRESHOLD {
            outside = mid;
        } else {
            inside = mid;
        }
        if (outside - inside).abs() < 1e-13 * (1.0 + mid.abs()) {
            break;
        }
        if (gap(mid) - GAP_THRESHOLD).abs() <= BISECTION_TOLERANCE {
            return mid;
        }
    }
    0.5 * (inside + outside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::Component;

    #[test]
    fn crude_gaussian_crosses_on_both_sides() {
        let shape = NlgShape::unit();
        let (m, v) = nlg::moments(shape);
        let mix = GaussianMixture::new(vec![Component::new(1.0, m, v)], shape).unwrap();
        let t = compute_tail_thresholds(shape, &mix).unwrap();
        assert!(!t.lower_open && !t.upper_open);
        assert!(t.xi_lower < shape.mode() && shape.mode() < t.xi_upper);
        assert!((log_gap(&mix, t.xi_upper) - 1.0).abs() <= 1e-3);
        assert!((log_gap(&mix, t.xi_lower) - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn wrong_target_rejected() {
        let mix = GaussianMixture::new(vec![Component::new(1.0, 0.0, 1.0)], NlgShape::unit()).unwrap();
        assert!(compute_tail_thresholds(NlgShape::new(2.0).unwrap(), &mix).is_err());
    }

    #[test]
    fn far_off_mixture_is_a_numerical_error() {
        let mix = GaussianMixture::new(vec![Component::new(1.0, 30.0, 0.01)], NlgShape::unit()).unwrap();
        assert!(matches!(compute_tail_thresholds(NlgShape::unit(), &mix), Err(Error::Numerical(_))));
    }
}
