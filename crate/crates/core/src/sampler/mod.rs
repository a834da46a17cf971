//! Chain drivers: AMS, IAMS, MH-IAMS, RIAMS and the automatic selector.

mod chain;
mod monitor;

pub use chain::{automatic_pretrain, chain_rng, gibbs_sweep, mh_accept_block, run_chain, run_chains, MhOutcome, Pretrained, SweepMode};
pub use monitor::TailMonitor;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ams,
    Iams,
    MhIams,
    Riams,
    Auto,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Ams, Algorithm::Iams, Algorithm::MhIams, Algorithm::Riams, Algorithm::Auto];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ams => "AMS",
            Algorithm::Iams => "IAMS",
            Algorithm::MhIams => "MH-IAMS",
            Algorithm::Riams => "RIAMS",
            Algorithm::Auto => "AUTO",
        }
    }

    /// Whether the algorithm runs the T1/T2 training phase.
    pub fn pretrains(self) -> bool {
        matches!(self, Algorithm::Riams | Algorithm::Auto)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        match key.as_str() {
            "AMS" => Ok(Algorithm::Ams),
            "IAMS" => Ok(Algorithm::Iams),
            "MHIAMS" => Ok(Algorithm::MhIams),
            "RIAMS" => Ok(Algorithm::Riams),
            "AUTO" | "AUTOMATIC" => Ok(Algorithm::Auto),
            _ => Err(Error::Config(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    /// Total iterations B, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// IAMS warm-up iterations of the training phase.
    pub t1: usize,
    /// Monitored iterations of the training phase.
    pub t2: usize,
    pub p_lower: f64,
    pub p_upper: f64,
    pub seed: u64,
    /// Random stream of this chain under `seed`.
    pub chain: u64,
    /// Keep every k-th kept iteration's residuals (None: no traces).
    pub residual_stride: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Iams,
            iterations: 2000,
            burn_in: 1000,
            thinning: 1,
            t1: 500,
            t2: 250,
            p_lower: 0.05,
            p_upper: 0.05,
            seed: 1,
            chain: 0,
            residual_stride: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations <= self.burn_in {
            return bad(format!("iterations ({}) must exceed burn-in ({})", self.iterations, self.burn_in));
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1".into());
        }
        if !(self.p_lower > 0.0 && self.p_lower < 1.0) || !(self.p_upper > 0.0 && self.p_upper < 1.0) {
            return bad(format!("p_lower and p_upper must lie in (0, 1), got {} and {}", self.p_lower, self.p_upper));
        }
        if self.algorithm.pretrains() {
            if self.t1 == 0 || self.t2 == 0 {
                return bad("t1 and t2 must be at least 1 for RIAMS and AUTO".into());
            }
            if self.burn_in < self.t1 + self.t2 {
                return bad(format!(
                    "burn-in ({}) must cover the training phase t1 + t2 = {}",
                    self.burn_in,
                    self.t1 + self.t2
                ));
            }
        }
        if self.residual_stride == Some(0) {
            return bad("residual stride must be at least 1".into());
        }
        Ok(())
    }

    /// Rows in the draw matrix: `floor((B - burn_in) / thinning)`.
    pub fn kept_rows(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }

    /// True when iteration `b` (0-based) is stored.
    pub fn keeps(&self, b: usize) -> bool {
        b >= self.burn_in && (b - self.burn_in + 1).is_multiple_of(self.thinning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAcceptance {
    pub block: String,
    pub accepted: u64,
    pub proposed: u64,
}

impl BlockAcceptance {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub training: Duration,
    pub sampling: Duration,
    pub total: Duration,
    /// Iterations timed in `sampling`.
    pub sampling_iterations: usize,
}

impl Timings {
    /// Mean wall-clock per post-training iteration, in seconds.
    pub fn per_iteration(&self) -> f64 {
        if self.sampling_iterations == 0 {
            0.0
        } else {
            self.sampling.as_secs_f64() / self.sampling_iterations as f64
        }
    }
}

/// Residuals `eps = y* - ln t - eta` after each recorded sweep, plus the
/// augmented log-likelihoods evaluated on them.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    pub stride: usize,
    /// `(observation, slot)` of each row.
    pub rows: Vec<(usize, usize)>,
    pub shapes: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
    /// Exact NLG augmented log-likelihood per recorded iteration.
    pub exact_loglik: Vec<f64>,
    /// Base-mixture augmented log-likelihood per recorded iteration.
    pub mixture_loglik: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub requested: Algorithm,
    /// Algorithm run after training (equal to `requested` except for AUTO).
    pub used: Algorithm,
    pub chain: u64,
    pub names: Vec<String>,
    /// Row-major `rows x names.len()`.
    pub draws: Vec<f64>,
    pub rows: usize,
    pub acceptance: Vec<BlockAcceptance>,
    pub sigma2_acceptance: Vec<BlockAcceptance>,
    pub monitor: Option<TailMonitor>,
    /// Rows switched to the tail-adjusted mixture, as `(observation, slot)`.
    pub flagged: Vec<(usize, usize)>,
    pub timings: Timings,
    pub trace: Option<ResidualTrace>,
    pub label_fallbacks: u64,
    /// MH steps rejected because the ratio was not finite.
    pub nonfinite_ratios: u64,
}

impl ChainOutput {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let d = self.dim();
        (0..self.rows).map(|r| self.draws[r * d + j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.dim();
        &self.draws[r * d..(r + 1) * d]
    }

    /// Acceptance rate of the fixed-effect block.
    pub fn beta_acceptance(&self) -> f64 {
        self.acceptance.first().map_or(f64::NAN, BlockAcceptance::rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("mh_iams".parse::<Algorithm>().unwrap(), Algorithm::MhIams);
        assert!("gibbs".parse::<Algorithm>().is_err());
    }

    #[test]
    fn bookkeeping_of_kept_rows() {
        for (b, burn, thin) in [(11, 10, 1), (100, 10, 3), (1000, 0, 7), (50, 49, 2), (64, 16, 16)] {
            let cfg = SamplerConfig { iterations: b, burn_in: burn, thinning: thin, ..SamplerConfig::default() };
            let counted = (0..b).filter(|&i| cfg.keeps(i)).count();
            assert_eq!(counted, cfg.kept_rows(), "B={b} burn={burn} thin={thin}");
            assert_eq!(cfg.kept_rows(), (b - burn) / thin);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = SamplerConfig { iterations: 2000, burn_in: 1000, ..SamplerConfig::default() };
        assert!(base.validate().is_ok());
        assert!(SamplerConfig { burn_in: 2000, ..base.clone() }.validate().is_err());
        assert!(SamplerConfig { thinning: 0, ..base.clone() }.validate().is_err());
        assert!(SamplerConfig { p_upper: 1.0, ..base.clone() }.validate().is_err());
        assert!(SamplerConfig { algorithm: Algorithm::Auto, burn_in: 600, ..base.clone() }.validate().is_err());
        assert!(SamplerConfig { algorithm: Algorithm::Riams, t2: 0, ..base.clone() }.validate().is_err());
        assert!(SamplerConfig { algorithm: Algorithm::Auto, ..base }.validate().is_ok());
    }
}
