//! Right-tail repair of a fitted mixture.
//!
//! Thirty components are appended past the upper cut-off: the first centered
//! at `xi_U`, the rest equally spaced up to
//! `R = 2.5 * q_{1 - 1e-16}(nu) + 1.5 * ln(nu)`. Each new component's
//! weight is the exact NLG probability of the segment it starts, and its
//! variance is tuned on the log scale (coarse scan, then golden-section) so
//! that the largest log-density gap over the segment up to the following
//! knot is as small as possible. Weights are renormalized after every
//! addition.

use super::{Component, GaussianMixture, TailThresholds, LN_2PI};
use crate::error::{domain, Result};
use crate::nlg::{self, NlgShape};
use crate::special;

/// Number of appended tail components.
pub const TAIL_COMPONENTS: usize = 30;

/// Smallest admissible variance of a tail component, in units of the NLG
/// variance once that drops below one.
const MIN_VARIANCE: f64 = 1e-4;
/// Evaluation points per segment in the variance objective.
const SEGMENT_PROBES: usize = 16;
/// Coarse log-variance grid used to bracket the variance search.
const SCAN_POINTS: usize = 64;

/// How the (pre-normalization) weight of each tail component is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailWeightRule {
    /// Exact NLG probability of the segment the component covers:
    /// `P(c_j < U <= c_{j+1})`, and the survival beyond `R` for the last one.
    #[default]
    SegmentMass,
    /// Weight that makes the mixture equal the exact density at the
    /// component's own center, given its variance.
    KnotMatch,
}

/// Far end of the tail knots, `2.5 * q_{1 - 1e-16}(nu) + 1.5 ln nu`.
pub fn tail_reach(shape: NlgShape) -> Result<f64> {
    Ok(2.5 * nlg::upper_quantile(1e-16, shape)? + 1.5 * shape.nu().ln())
}

/// Appends [`TAIL_COMPONENTS`] components past `thresholds.xi_upper`.
///
/// When the upper threshold is open (no crossing found) the base mixture
/// is returned unchanged.
pub fn build_adjusted_mixture(
    shape: NlgShape,
    base: &GaussianMixture,
    thresholds: &TailThresholds,
) -> Result<GaussianMixture> {
    build_adjusted_mixture_with(shape, base, thresholds, TailWeightRule::default())
}

pub fn build_adjusted_mixture_with(
    shape: NlgShape,
    base: &GaussianMixture,
    thresholds: &TailThresholds,
    rule: TailWeightRule,
) -> Result<GaussianMixture> {
    if base.target() != shape || thresholds.shape != shape {
        return Err(domain(format!("tail adjustment for {shape} given inputs for another shape")));
    }
    if thresholds.upper_open {
        return Ok(base.clone());
    }
    if !thresholds.xi_upper.is_finite() {
        return Err(domain("upper threshold must be finite"));
    }
    let start = thresholds.xi_upper;
    let reach = tail_reach(shape)?;
    if !(reach > start) {
        return Err(domain(format!("tail reach {reach} does not exceed the upper threshold {start}")));
    }
    let spacing = (reach - start) / (TAIL_COMPONENTS - 1) as f64;
    let knots: Vec<f64> = (0..=TAIL_COMPONENTS).map(|j| start + spacing * j as f64).collect();
    let span = reach - start;
    let min_variance = MIN_VARIANCE * nlg::moments(shape).1.min(1.0);
    let ln_gamma = special::ln_gamma(shape.nu());
    let log_f = |u: f64| nlg::log_density_with_norm(u, shape.nu(), ln_gamma);

    let segment_mass = |j: usize| -> f64 {
        if j >= TAIL_COMPONENTS {
            return 0.0;
        }
        let upper = if j + 1 == TAIL_COMPONENTS { 0.0 } else { nlg::survival(knots[j + 1], shape) };
        (nlg::survival(knots[j], shape) - upper).max(0.0)
    };

    let mut comps: Vec<Component> = base.components().to_vec();
    let base_len = comps.len();
    for j in 0..TAIL_COMPONENTS {
        let center = knots[j];
        // knots[TAIL_COMPONENTS] is the virtual knot one spacing beyond R
        let next = knots[j + 1];
        let current = GaussianMixture::with_tail(comps.clone(), shape, base_len)?;
        let probes: Vec<(f64, f64, f64)> = (0..=SEGMENT_PROBES)
            .map(|i| {
                let u = center + (next - center) * i as f64 / SEGMENT_PROBES as f64;
                (u, log_f(u), current.ln_pdf(u).exp())
            })
            .collect();
        let g_center = probes[0].2;
        let weight_for = |variance: f64| -> f64 {
            match rule {
                TailWeightRule::SegmentMass => segment_mass(j),
                TailWeightRule::KnotMatch => {
                    let peak = (-0.5 * (LN_2PI + variance.ln())).exp();
                    ((log_f(center).exp() - g_center) / peak).max(0.0)
                }
            }
        };
        // The following component enters the objective with its own weight
        // at the trial variance; under knot matching that weight is not yet
        // known and is taken as zero.
        let next_weight = match rule {
            TailWeightRule::SegmentMass => segment_mass(j + 1),
            TailWeightRule::KnotMatch => 0.0,
        };
        let miss = |log_variance: f64| -> f64 {
            let variance = log_variance.exp();
            let w = weight_for(variance);
            let norm = -0.5 * (LN_2PI + variance.ln());
            probes
                .iter()
                .map(|&(u, lf, g)| {
                    let d0 = u - center;
                    let d1 = u - next;
                    let added = w * (norm - 0.5 * d0 * d0 / variance).exp()
                        + next_weight * (norm - 0.5 * d1 * d1 / variance).exp();
                    (lf - ((g + added) / (1.0 + w)).ln()).abs()
                })
                .fold(0.0, f64::max)
        };
        let log_variance = bracketed_minimum(miss, min_variance.ln(), (span * span).max(min_variance * 4.0).ln());
        let variance = log_variance.exp();
        let weight = weight_for(variance);
        let total = 1.0 + weight;
        for c in &mut comps {
            c.weight /= total;
        }
        comps.push(Component::new(weight / total, center, variance));
        let sum: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= sum;
        }
    }
    GaussianMixture::with_tail(comps, shape, base_len)
}

/// Coarse scan to pick the basin, then golden-section refinement in it.
fn bracketed_minimum(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let step = (b - a) / SCAN_POINTS as f64;
    let best = (0..=SCAN_POINTS)
        .map(|i| (i, f(a + step * i as f64)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc })
        .0;
    let lo = a + step * best.saturating_sub(1) as f64;
    let hi = a + step * (best + 1).min(SCAN_POINTS) as f64;
    golden_section(f, lo, hi)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..100 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}
