//! Run configuration: one TOML file with a versioned schema.

use std::path::{Path, PathBuf};

use auxmix::model::Sigma2Prior;
use auxmix::sampler::{Algorithm, SamplerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_error, CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: DataSpec,
    #[serde(default)]
    pub random_effects: Vec<RandomEffectSpec>,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: PathBuf,
    #[serde(default = "default_response")]
    pub response: String,
    /// Exposure column; every `t_i = 1` when absent.
    #[serde(default)]
    pub offset: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default = "default_beta_variance")]
    pub beta_variance: f64,
}

/// A random-effect block: either an indicator design built from a grouping
/// column or explicit design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEffectSpec {
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub columns: Option<Vec<String>>,
    /// Structure matrix file; the identity when absent.
    #[serde(default)]
    pub precision: Option<PathBuf>,
    #[serde(default)]
    pub prior: PriorSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    InverseGamma { shape: f64, scale: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl Default for PriorSpec {
    fn default() -> Self {
        match Sigma2Prior::default() {
            Sigma2Prior::InverseGamma { shape, scale } => PriorSpec::InverseGamma { shape, scale },
            Sigma2Prior::Gamma { shape, rate } => PriorSpec::Gamma { shape, rate },
        }
    }
}

impl From<PriorSpec> for Sigma2Prior {
    fn from(p: PriorSpec) -> Self {
        match p {
            PriorSpec::InverseGamma { shape, scale } => Sigma2Prior::InverseGamma { shape, scale },
            PriorSpec::Gamma { shape, rate } => Sigma2Prior::Gamma { shape, rate },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub algorithm: String,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub t1: usize,
    pub t2: usize,
    pub p_lower: f64,
    pub p_upper: f64,
    pub seed: u64,
    pub residual_stride: Option<usize>,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        let d = SamplerConfig { algorithm: Algorithm::Auto, ..Default::default() };
        Self {
            algorithm: d.algorithm.name().to_ascii_lowercase(),
            iterations: d.iterations,
            burn_in: d.burn_in,
            thinning: d.thinning,
            t1: d.t1,
            t2: d.t2,
            p_lower: d.p_lower,
            p_upper: d.p_upper,
            seed: d.seed,
            residual_stride: d.residual_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub chains: usize,
    pub workers: Option<usize>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("auxmix-out"), chains: 1, workers: None }
    }
}

fn default_response() -> String {
    "y".into()
}

fn yes() -> bool {
    true
}

fn default_beta_variance() -> f64 {
    auxmix::model::DEFAULT_BETA_VARIANCE
}

impl RunConfig {
    /// Reads and validates `path`; relative file names inside are taken
    /// relative to the config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_error(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.data.path);
        for re in &mut self.random_effects {
            if let Some(p) = re.precision.as_mut() {
                join(p);
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.sampler_config(0)?;
        if self.output.chains == 0 {
            return Err(config_error("output.chains must be at least 1"));
        }
        if self.output.workers == Some(0) {
            return Err(config_error("output.workers must be at least 1"));
        }
        if !(self.data.beta_variance > 0.0 && self.data.beta_variance.is_finite()) {
            return Err(config_error("data.beta_variance must be positive"));
        }
        if !self.data.intercept && self.data.covariates.is_empty() {
            return Err(config_error("the model needs an intercept or at least one covariate"));
        }
        for (q, re) in self.random_effects.iter().enumerate() {
            match (&re.group, &re.columns) {
                (Some(_), None) => {}
                (None, Some(c)) if !c.is_empty() => {}
                _ => return Err(config_error(format!("random_effects[{q}] needs exactly one of `group` or `columns`"))),
            }
            Sigma2Prior::from(re.prior).validate().map_err(|e| config_error(format!("random_effects[{q}]: {e}")))?;
        }
        Ok(())
    }

    pub fn algorithm(&self) -> CliResult<Algorithm> {
        self.sampler.algorithm.parse().map_err(|e: auxmix::Error| config_error(e.to_string()))
    }

    /// Core sampler settings for chain `chain`.
    pub fn sampler_config(&self, chain: u64) -> CliResult<SamplerConfig> {
        let s = &self.sampler;
        let cfg = SamplerConfig {
            algorithm: self.algorithm()?,
            iterations: s.iterations,
            burn_in: s.burn_in,
            thinning: s.thinning,
            t1: s.t1,
            t2: s.t2,
            p_lower: s.p_lower,
            p_upper: s.p_upper,
            seed: s.seed,
            chain,
            residual_stride: s.residual_stride,
        };
        cfg.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&canonical)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Worker count: explicit value, then the config, then `AUXMIX_WORKERS`,
/// then the available cores.
pub fn resolve_workers(flag: Option<usize>, cfg: &RunConfig) -> CliResult<usize> {
    if let Some(w) = flag.or(cfg.output.workers) {
        return if w == 0 { Err(config_error("workers must be at least 1")) } else { Ok(w) };
    }
    if let Ok(v) = std::env::var("AUXMIX_WORKERS") {
        return match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(config_error(format!("AUXMIX_WORKERS must be a positive integer, got {v:?}"))),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[data]
path = "toy.csv"
covariates = ["x1"]
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.data.response, "y");
        assert!(cfg.data.intercept);
        assert_eq!(cfg.algorithm().unwrap(), Algorithm::Auto);
        assert_eq!(cfg.output.chains, 1);
        assert_eq!(cfg.hash(), RunConfig::parse(MINIMAL).unwrap().hash());
    }

    #[test]
    fn rejections() {
        let bad_version = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(RunConfig::parse(&bad_version).is_err());
        let burn = format!("{MINIMAL}[sampler]\niterations = 100\nburn_in = 100\n");
        assert_eq!(RunConfig::parse(&burn).unwrap_err().exit_code(), 2);
        let unknown = format!("{MINIMAL}[sampler]\nitertions = 100\n");
        assert!(RunConfig::parse(&unknown).is_err());
        let both = format!("{MINIMAL}[[random_effects]]\ngroup = \"g\"\ncolumns = [\"a\"]\n");
        assert!(RunConfig::parse(&both).is_err());
        let prior = format!("{MINIMAL}[[random_effects]]\ngroup = \"g\"\nprior = {{ kind = \"gamma\", shape = -1.0, rate = 1.0 }}\n");
        assert!(RunConfig::parse(&prior).is_err());
    }

    #[test]
    fn random_effect_prior_parses() {
        let text = format!("{MINIMAL}[[random_effects]]\ngroup = \"site\"\nprior = {{ kind = \"gamma\", shape = 2.0, rate = 0.5 }}\n");
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.random_effects[0].prior, PriorSpec::Gamma { shape: 2.0, rate: 0.5 });
    }
}
