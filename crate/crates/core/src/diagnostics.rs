//! Approximation and chain diagnostics: the per-row log-density gap
//! `Delta`, effective sample sizes and acceptance summaries.

use crate::error::{domain, Error, Result};
use crate::mixture::MixtureBank;
use crate::nlg::{self, NlgShape};
use crate::sampler::{ChainOutput, ResidualTrace};

/// Approximate law compared with the exact NLG density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaLaw {
    /// Fitted mixture `g` on every row.
    Mixture,
    /// Law in force after training: `g*` on flagged rows, `g` elsewhere.
    InForce,
    /// Tail-adjusted mixture `g*` on every row.
    Adjusted,
    /// The exact density itself; every gap is zero.
    Exact,
}

impl std::str::FromStr for DeltaLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mixture" => Ok(DeltaLaw::Mixture),
            "in-force" | "inforce" | "in_force" => Ok(DeltaLaw::InForce),
            "adjusted" => Ok(DeltaLaw::Adjusted),
            "exact" => Ok(DeltaLaw::Exact),
            _ => Err(Error::Usage(format!("unknown law {s:?}; expected mixture, in-force, adjusted or exact"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyReport {
    /// `(observation, slot)` of each row.
    pub rows: Vec<(usize, usize)>,
    /// Mean of `ln g(eps) - ln f(eps)` over the finite recorded terms.
    pub delta: Vec<f64>,
    /// Non-finite terms left out of each row's mean.
    pub nonfinite: Vec<usize>,
    /// Recorded iterations averaged over.
    pub iterations: usize,
    /// Row indices by decreasing `|delta|`.
    pub extremes: Vec<usize>,
}

impl DiscrepancyReport {
    pub fn max_abs(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// `sum_r delta_r * B`, equal to the summed log-likelihood differences
    /// when no term was left out.
    pub fn total(&self) -> f64 {
        self.delta.iter().sum::<f64>() * self.iterations as f64
    }
}

/// `Delta_r = (1/B) sum_b [ln g(eps_r^(b)) - ln f(eps_r^(b))]` over the
/// recorded (kept, strided) iterations of `chain`.
pub fn delta_discrepancy(chain: &ChainOutput, law: DeltaLaw, bank: &MixtureBank) -> Result<DiscrepancyReport> {
    let trace = chain
        .trace
        .as_ref()
        .ok_or_else(|| Error::Usage("chain has no residual trace; rerun with residual storage enabled".into()))?;
    let flagged: std::collections::HashSet<(usize, usize)> = chain.flagged.iter().copied().collect();
    let mut laws = Vec::with_capacity(trace.rows.len());
    for (r, &nu) in trace.shapes.iter().enumerate() {
        let shape = NlgShape::new(nu)?;
        let adjusted = match law {
            DeltaLaw::Mixture | DeltaLaw::Exact => false,
            DeltaLaw::InForce => flagged.contains(&trace.rows[r]),
            DeltaLaw::Adjusted => true,
        };
        laws.push((shape, bank.get(shape)?, adjusted));
    }
    delta_from_trace(trace, |r, e| {
        let (shape, ref l, adjusted) = laws[r];
        let f = nlg::log_density(e, shape).unwrap_or(f64::NAN);
        let g = match law {
            DeltaLaw::Exact => f,
            _ if adjusted => l.adjusted().map(|m| m.ln_pdf(e)).unwrap_or(f64::NAN),
            _ => l.mixture.ln_pdf(e),
        };
        g - f
    })
}

/// Averages `gap(row, eps)` over every recorded iteration of `trace`.
pub fn delta_from_trace(trace: &ResidualTrace, gap: impl Fn(usize, f64) -> f64) -> Result<DiscrepancyReport> {
    let iterations = trace.residuals.len();
    if iterations == 0 {
        return Err(Error::Usage("residual trace holds no iterations".into()));
    }
    let n = trace.rows.len();
    let mut sums = vec![0.0; n];
    let mut finite = vec![0usize; n];
    for res in &trace.residuals {
        for (r, &e) in res.iter().enumerate() {
            let d = gap(r, e);
            if d.is_finite() {
                sums[r] += d;
                finite[r] += 1;
            }
        }
    }
    let delta: Vec<f64> = sums.iter().zip(&finite).map(|(s, &k)| if k > 0 { s / k as f64 } else { f64::NAN }).collect();
    let mut extremes: Vec<usize> = (0..n).filter(|&r| delta[r].is_finite()).collect();
    extremes.sort_by(|&a, &b| delta[b].abs().total_cmp(&delta[a].abs()).then(a.cmp(&b)));
    Ok(DiscrepancyReport {
        rows: trace.rows.clone(),
        delta,
        nonfinite: finite.iter().map(|&k| iterations - k).collect(),
        iterations,
        extremes,
    })
}

/// Relative difference between `sum_r Delta_r B` and the accumulated
/// difference of base-mixture and exact augmented log-likelihoods.
pub fn delta_additivity_error(report: &DiscrepancyReport, trace: &ResidualTrace) -> Result<f64> {
    if trace.mixture_loglik.len() != report.iterations {
        return Err(Error::Contract(format!(
            "report covers {} iterations, trace {}",
            report.iterations,
            trace.mixture_loglik.len()
        )));
    }
    let accumulated: f64 = trace.mixture_loglik.iter().zip(&trace.exact_loglik).map(|(g, f)| g - f).sum();
    let lhs = report.total();
    Ok((lhs - accumulated).abs() / accumulated.abs().max(lhs.abs()).max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub ess: f64,
    /// Zero-variance trace; `ess` is reported as the trace length.
    pub degenerate: bool,
    /// The estimate exceeded the trace length and was capped.
    pub capped: bool,
}

/// Minimum trace length accepted by [`effective_sample_size`].
pub const ESS_MIN_LEN: usize = 10;

/// Geyer's initial monotone sequence estimator, capped at the trace length.
pub fn effective_sample_size(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < ESS_MIN_LEN {
        return Err(domain(format!("ESS needs at least {ESS_MIN_LEN} draws, got {n}")));
    }
    if trace.iter().any(|x| !x.is_finite()) {
        return Err(domain("trace contains non-finite values"));
    }
    let nf = n as f64;
    let mean = trace.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let autocov = |k: usize| -> f64 { centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / nf };
    let g0 = autocov(0);
    let scale = trace.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if g0 <= (1e-14 * scale).powi(2) {
        return Ok(Ess { ess: nf, degenerate: true, capped: false });
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (-g0 + 2.0 * sum) / g0;
    if tau <= 1.0 {
        return Ok(Ess { ess: nf, degenerate: false, capped: tau < 1.0 });
    }
    Ok(Ess { ess: nf / tau, degenerate: false, capped: false })
}

/// One line per block: `block accepted/proposed rate`.
pub fn acceptance_summary(chain: &ChainOutput) -> Vec<(String, u64, u64, f64)> {
    chain
        .acceptance
        .iter()
        .chain(&chain.sigma2_acceptance)
        .map(|a| (a.block.clone(), a.accepted, a.proposed, a.rate()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn trace(residuals: Vec<Vec<f64>>) -> ResidualTrace {
        let n = residuals[0].len();
        ResidualTrace {
            stride: 1,
            rows: (0..n).map(|i| (i, 0)).collect(),
            shapes: vec![1.0; n],
            residuals,
            exact_loglik: vec![],
            mixture_loglik: vec![],
        }
    }

    #[test]
    fn constant_trace_gives_the_pointwise_gap() {
        let t = trace(vec![vec![0.3, -1.0]; 7]);
        let rep = delta_from_trace(&t, |r, e| e * (r as f64 + 1.0)).unwrap();
        assert_eq!(rep.delta, vec![0.3, -2.0]);
        assert_eq!(rep.extremes, vec![1, 0]);
        assert_eq!(rep.iterations, 7);
    }

    #[test]
    fn nonfinite_terms_are_counted_apart() {
        let t = trace(vec![vec![1.0], vec![f64::INFINITY], vec![3.0]]);
        let rep = delta_from_trace(&t, |_, e| e).unwrap();
        assert_eq!(rep.delta, vec![2.0]);
        assert_eq!(rep.nonfinite, vec![1]);
    }

    #[test]
    fn iid_normal_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = effective_sample_size(&xs).unwrap();
        assert!((8_000.0..=12_000.0).contains(&e.ess), "{e:?}");
    }

    #[test]
    fn ar1_ess_matches_its_autocorrelation_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let rho: f64 = 0.9;
        let mut x = 0.0;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + (1.0 - rho * rho).sqrt() * z;
                x
            })
            .collect();
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        let e = effective_sample_size(&xs).unwrap();
        assert!((e.ess / expected - 1.0).abs() < 0.3, "{} vs {expected}", e.ess);
        // affine invariance
        let ys: Vec<f64> = xs.iter().map(|v| 3.0 * v - 7.0).collect();
        let f = effective_sample_size(&ys).unwrap();
        assert!((f.ess / e.ess - 1.0).abs() < 1e-9);
    }

    #[test]
    fn alternating_and_constant_traces() {
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = effective_sample_size(&alt).unwrap();
        assert_eq!(e.ess, 1000.0);
        assert!(e.capped);
        let flat = vec![2.5; 50];
        let e = effective_sample_size(&flat).unwrap();
        assert!(e.degenerate && e.ess == 50.0);
        assert!(effective_sample_size(&[1.0; 9]).is_err());
    }
}
