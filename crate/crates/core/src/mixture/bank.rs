//! Per-shape memo of fitted mixtures, cut-offs and tail-adjusted mixtures.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use rayon::prelude::*;

use super::cache::{read_cache_file, write_cache_file, CacheEntry};
use super::{
    assess, build_adjusted_mixture, compute_tail_thresholds, fit_mixture, moment_matched, FitConfig, FitReport,
    GaussianMixture, TailThresholds,
};
use crate::error::{Error, Result};
use crate::nlg::NlgShape;

/// Shapes above this use the moment-matched Gaussian.
pub const MOMENT_MATCH_ABOVE: f64 = 1e4;

/// Central error a fit must certify before it is accepted.
const CENTRAL_ERROR_TARGET: f64 = 0.05;
/// Largest component count tried when refitting.
const MAX_COMPONENTS: usize = 14;

/// Component count used for a shape: 10 up to 10, 7 up to 100, 4 up to
/// 1e4, a single moment-matched Gaussian above.
pub fn components_for_shape(shape: NlgShape) -> usize {
    let nu = shape.nu();
    if nu <= 10.0 {
        10
    } else if nu <= 100.0 {
        7
    } else if nu <= MOMENT_MATCH_ABOVE {
        4
    } else {
        1
    }
}

/// Everything the samplers need for one residual shape.
#[derive(Debug)]
pub struct ShapeLaw {
    pub shape: NlgShape,
    pub mixture: GaussianMixture,
    pub report: FitReport,
    pub thresholds: TailThresholds,
    adjusted: OnceLock<GaussianMixture>,
}

impl ShapeLaw {
    pub fn new(mixture: GaussianMixture, report: FitReport) -> Result<Self> {
        let shape = mixture.target();
        let thresholds = compute_tail_thresholds(shape, &mixture)?;
        Ok(Self { shape, mixture, report, thresholds, adjusted: OnceLock::new() })
    }

    /// The tail-adjusted mixture, built on first use.
    pub fn adjusted(&self) -> Result<&GaussianMixture> {
        if let Some(m) = self.adjusted.get() {
            return Ok(m);
        }
        let built = build_adjusted_mixture(self.shape, &self.mixture, &self.thresholds)?;
        Ok(self.adjusted.get_or_init(|| built))
    }
}

/// Fits each shape once; readers share the results.
///
/// With a cache path, fits found in the file (same shape and fit
/// configuration hash) are reused and new fits are appended to it.
#[derive(Debug)]
pub struct MixtureBank {
    config: FitConfig,
    hash: String,
    laws: RwLock<HashMap<u64, Arc<ShapeLaw>>>,
    cache_path: Option<PathBuf>,
    /// Serializes cache file rewrites.
    writer: Mutex<()>,
}

impl MixtureBank {
    pub fn new(config: FitConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash_hex();
        Ok(Self { config, hash, laws: RwLock::new(HashMap::new()), cache_path: None, writer: Mutex::new(()) })
    }

    /// Bank backed by a cache file; missing files are created on first fit.
    pub fn with_cache(config: FitConfig, path: impl AsRef<Path>) -> Result<Self> {
        let mut bank = Self::new(config)?;
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            let mut laws = HashMap::new();
            for entry in read_cache_file(&path)? {
                if entry.fit_hash != bank.hash {
                    continue;
                }
                let law = entry.into_law()?;
                laws.insert(law.shape.key(), Arc::new(law));
            }
            bank.laws = RwLock::new(laws);
        }
        bank.cache_path = Some(path);
        Ok(bank)
    }

    /// Process-wide bank with the default configuration. When the
    /// `AUXMIX_MIXTURE_CACHE` environment variable names a file, it backs
    /// the bank.
    pub fn shared() -> &'static MixtureBank {
        static BANK: OnceLock<MixtureBank> = OnceLock::new();
        BANK.get_or_init(|| {
            let cfg = FitConfig::default();
            match std::env::var_os("AUXMIX_MIXTURE_CACHE") {
                Some(path) => MixtureBank::with_cache(cfg.clone(), PathBuf::from(path)).unwrap_or_else(|e| {
                    log::warn!("ignoring mixture cache: {e}");
                    MixtureBank::new(cfg).expect("default fit config is valid")
                }),
                None => MixtureBank::new(cfg).expect("default fit config is valid"),
            }
        })
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn get(&self, shape: NlgShape) -> Result<Arc<ShapeLaw>> {
        if let Some(law) = self.laws.read().expect("mixture bank lock").get(&shape.key()) {
            return Ok(Arc::clone(law));
        }
        // Fitting is deterministic, so a concurrent duplicate fit is harmless;
        // the first insertion wins.
        let fitted = Arc::new(self.fit_law(shape)?);
        let law = {
            let mut laws = self.laws.write().expect("mixture bank lock");
            Arc::clone(laws.entry(shape.key()).or_insert(fitted))
        };
        if let Some(path) = &self.cache_path {
            let _guard = self.writer.lock().expect("mixture cache writer lock");
            let mut entries: Vec<CacheEntry> = if path.exists() { read_cache_file(path)? } else { Vec::new() };
            entries.retain(|e| !(e.fit_hash == self.hash && e.nu.to_bits() == shape.nu().to_bits()));
            entries.push(CacheEntry::from_law(&law, &self.hash));
            write_cache_file(path, &entries)?;
        }
        Ok(law)
    }

    /// Fits all missing shapes, several at a time.
    pub fn prefetch(&self, shapes: &[NlgShape]) -> Result<()> {
        let mut missing: Vec<NlgShape> = {
            let laws = self.laws.read().expect("mixture bank lock");
            shapes.iter().copied().filter(|s| !laws.contains_key(&s.key())).collect()
        };
        missing.sort_by(|a, b| a.nu().total_cmp(&b.nu()));
        missing.dedup();
        missing.par_iter().try_for_each(|&s| self.get(s).map(|_| ()))
    }

    /// Number of shapes currently held.
    pub fn len(&self) -> usize {
        self.laws.read().expect("mixture bank lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fit_law(&self, shape: NlgShape) -> Result<ShapeLaw> {
        let k = components_for_shape(shape);
        if k == 1 && shape.nu() > MOMENT_MATCH_ABOVE {
            let mixture = moment_matched(shape);
            let report = assess(&mixture, &self.config)?;
            return ShapeLaw::new(mixture, report);
        }
        let mut best: Option<(GaussianMixture, FitReport)> = None;
        let mut k = k;
        while k <= MAX_COMPONENTS {
            let fitted = match fit_mixture(shape, k, &self.config) {
                Ok(f) => f,
                Err(Error::Fit(failure)) => {
                    log::warn!("{failure}");
                    failure.best
                }
                Err(e) => return Err(e),
            };
            let err = fitted.report.central_error;
            if best.as_ref().is_none_or(|(_, r)| err < r.central_error) {
                best = Some((fitted.mixture, fitted.report));
            }
            if err <= CENTRAL_ERROR_TARGET {
                break;
            }
            log::info!("{shape}: K={k} certified central error {err:.3e}, refitting with more components");
            k += 2;
        }
        let (mixture, report) = best.expect("at least one fit");
        if report.central_error > CENTRAL_ERROR_TARGET {
            log::warn!("{shape}: best certified central error {:.3e} exceeds target", report.central_error);
        }
        ShapeLaw::new(mixture, report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let s = |nu: f64| components_for_shape(NlgShape::new(nu).unwrap());
        assert_eq!(s(1.0), 10);
        assert_eq!(s(10.0), 10);
        assert_eq!(s(11.0), 7);
        assert_eq!(s(100.0), 7);
        assert_eq!(s(101.0), 4);
        assert_eq!(s(1e4), 4);
        assert_eq!(s(1e5), 1);
    }

    #[test]
    fn huge_shape_is_moment_matched() {
        let bank = MixtureBank::new(FitConfig::default()).unwrap();
        let shape = NlgShape::new(1e5).unwrap();
        let law = bank.get(shape).unwrap();
        assert_eq!(law.mixture, moment_matched(shape));
        assert!(law.report.central_error <= 0.05);
        assert_eq!(bank.len(), 1);
        assert!(Arc::ptr_eq(&law, &bank.get(shape).unwrap()));
    }
}
