//! KL fitting of Gaussian mixtures to an NLG density.
//!
//! The target is discretized on a uniform quadrature grid spanning the
//! `1e-6` and `1 - 1e-6` quantiles. The objective is the cross-entropy
//! `-sum_i c_i ln g(z_i)` (the KL divergence up to a constant) plus a small
//! penalty `rho * h^2 / s2_k` that keeps components from collapsing onto a
//! single grid node. Each deterministic start runs a block of weighted EM
//! iterations and is then polished by L-BFGS in unconstrained coordinates
//! (softmax logits, means, log-variances).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Component, GaussianMixture};
use crate::error::{domain, Error, Result};
use crate::nlg::{self, NlgShape};
use crate::special;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Quadrature nodes for the KL objective.
    pub grid_points: usize,
    /// Tail mass left outside the quadrature grid on each side.
    pub grid_tail: f64,
    /// Tail mass excluded from the certified central region on each side.
    pub central_tail: f64,
    /// Nodes of the independent certification grid.
    pub certify_points: usize,
    pub em_iterations: usize,
    pub max_iterations: usize,
    /// Relative objective change regarded as converged.
    pub tolerance: f64,
    pub gradient_tolerance: f64,
    pub variance_penalty: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid_points: 2048,
            grid_tail: 1e-6,
            central_tail: 0.005,
            certify_points: 4001,
            em_iterations: 400,
            max_iterations: 3000,
            tolerance: 1e-12,
            gradient_tolerance: 1e-10,
            variance_penalty: 1e-4,
            starts: 4,
            seed: 0x0005_eed0_fa11,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 16 || self.certify_points < 16 {
            return Err(Error::Config("fit grids need at least 16 points".into()));
        }
        if !(self.grid_tail > 0.0 && self.grid_tail < 0.5)
            || !(self.central_tail > 0.0 && self.central_tail < 0.5)
        {
            return Err(Error::Config("fit tail probabilities must lie in (0, 0.5)".into()));
        }
        if self.starts == 0 {
            return Err(Error::Config("at least one optimizer start is required".into()));
        }
        if !(self.variance_penalty >= 0.0) {
            return Err(Error::Config("variance penalty must be non-negative".into()));
        }
        Ok(())
    }

    /// Stable 64-bit digest of every field, used to key cached fits.
    pub fn hash_hex(&self) -> String {
        let canonical = format!(
            "grid_points={};grid_tail={:e};central_tail={:e};certify_points={};em_iterations={};\
             max_iterations={};tolerance={:e};gradient_tolerance={:e};variance_penalty={:e};starts={};seed={}",
            self.grid_points,
            self.grid_tail,
            self.central_tail,
            self.certify_points,
            self.em_iterations,
            self.max_iterations,
            self.tolerance,
            self.gradient_tolerance,
            self.variance_penalty,
            self.starts,
            self.seed
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// KL(f || g) on the quadrature grid, target renormalized to the grid.
    pub kl: f64,
    pub objective: f64,
    /// Max |ln f - ln g| over the central certification grid.
    pub central_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedMixture {
    pub mixture: GaussianMixture,
    pub report: FitReport,
}

/// Best iterate of a fit that ran out of iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub best: FittedMixture,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} with K={} hit the iteration budget; best certified central error {:.3e}",
            self.best.mixture.target(),
            self.best.mixture.len(),
            self.best.report.central_error
        )
    }
}

struct Quadrature {
    nodes: Vec<f64>,
    /// Normalized quadrature weights c_i (sum to one).
    mass: Vec<f64>,
    /// ln of the normalized target density at the nodes.
    log_target: Vec<f64>,
    spacing: f64,
}

impl Quadrature {
    fn new(shape: NlgShape, cfg: &FitConfig) -> Result<Self> {
        let lo = nlg::quantile(cfg.grid_tail, shape)?;
        let hi = nlg::upper_quantile(cfg.grid_tail, shape)?;
        let n = cfg.grid_points;
        let spacing = (hi - lo) / (n - 1) as f64;
        let ln_gamma = special::ln_gamma(shape.nu());
        let nodes: Vec<f64> = (0..n).map(|i| lo + spacing * i as f64).collect();
        let log_f: Vec<f64> = nodes
            .iter()
            .map(|&z| nlg::log_density_with_norm(z, shape.nu(), ln_gamma))
            .collect();
        let mut mass: Vec<f64> = log_f
            .iter()
            .enumerate()
            .map(|(i, lf)| {
                let end = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                end * lf.exp() * spacing
            })
            .collect();
        let total: f64 = mass.iter().sum();
        for m in &mut mass {
            *m /= total;
        }
        let log_target = log_f.iter().map(|lf| lf - total.ln()).collect();
        Ok(Self { nodes, mass, log_target, spacing })
    }
}

/// Unconstrained parameterization: [logits | means | log-variances].
#[derive(Clone)]
struct Params {
    k: usize,
    theta: Vec<f64>,
}

impl Params {
    fn from_components(comps: &[Component]) -> Self {
        let k = comps.len();
        let mut theta = Vec::with_capacity(3 * k);
        theta.extend(comps.iter().map(|c| c.weight.max(1e-300).ln()));
        theta.extend(comps.iter().map(|c| c.mean));
        theta.extend(comps.iter().map(|c| c.variance.ln()));
        Self { k, theta }
    }

    fn to_components(&self) -> Vec<Component> {
        let k = self.k;
        let logits = &self.theta[..k];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        (0..k)
            .map(|j| Component::new(exps[j] / total, self.theta[k + j], self.theta[2 * k + j].exp()))
            .collect()
    }
}

struct Objective<'a> {
    quad: &'a Quadrature,
    penalty: f64,
}

impl Objective<'_> {
    /// Objective value; fills `grad` (same layout as theta) when provided.
    fn eval(&self, p: &Params, grad: Option<&mut [f64]>) -> f64 {
        let comps = p.to_components();
        let k = p.k;
        let h2 = self.quad.spacing * self.quad.spacing;
        let log_scale: Vec<f64> = comps
            .iter()
            .map(|c| c.weight.ln() - 0.5 * (super::LN_2PI + c.variance.ln()))
            .collect();
        let mut value = 0.0;
        let mut resp_mass = vec![0.0; k];
        let mut first = vec![0.0; k];
        let mut second = vec![0.0; k];
        let mut lw = vec![0.0; k];
        let want_grad = grad.is_some();
        for ((&z, &c), _) in self.quad.nodes.iter().zip(&self.quad.mass).zip(&self.quad.log_target) {
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                let d = z - comps[j].mean;
                lw[j] = log_scale[j] - 0.5 * d * d / comps[j].variance;
                max = max.max(lw[j]);
            }
            let mut acc = 0.0;
            for v in lw.iter_mut() {
                *v = (*v - max).exp();
                acc += *v;
            }
            let log_g = max + acc.ln();
            value -= c * log_g;
            if want_grad {
                for j in 0..k {
                    let r = c * lw[j] / acc;
                    let d = z - comps[j].mean;
                    resp_mass[j] += r;
                    first[j] += r * d;
                    second[j] += r * d * d;
                }
            }
        }
        for c in &comps {
            value += self.penalty * h2 / c.variance;
        }
        if let Some(g) = grad {
            for j in 0..k {
                let s2 = comps[j].variance;
                g[j] = -(resp_mass[j] - comps[j].weight);
                g[k + j] = -first[j] / s2;
                g[2 * k + j] = -0.5 * (second[j] / s2 - resp_mass[j]) - self.penalty * h2 / s2;
            }
        }
        value
    }
}

fn em_step(quad: &Quadrature, comps: &mut [Component], penalty: f64) {
    let k = comps.len();
    let h2 = quad.spacing * quad.spacing;
    let log_scale: Vec<f64> = comps
        .iter()
        .map(|c| c.weight.max(1e-300).ln() - 0.5 * (super::LN_2PI + c.variance.ln()))
        .collect();
    let mut r_mass = vec![0.0; k];
    let mut r_z = vec![0.0; k];
    let mut r_zz = vec![0.0; k];
    let mut lw = vec![0.0; k];
    for (&z, &c) in quad.nodes.iter().zip(&quad.mass) {
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let d = z - comps[j].mean;
            lw[j] = log_scale[j] - 0.5 * d * d / comps[j].variance;
            max = max.max(lw[j]);
        }
        let mut acc = 0.0;
        for v in lw.iter_mut() {
            *v = (*v - max).exp();
            acc += *v;
        }
        for j in 0..k {
            let r = c * lw[j] / acc;
            r_mass[j] += r;
            r_z[j] += r * z;
            r_zz[j] += r * z * z;
        }
    }
    for j in 0..k {
        if r_mass[j] < 1e-300 {
            continue;
        }
        let mean = r_z[j] / r_mass[j];
        let scatter = (r_zz[j] - r_mass[j] * mean * mean).max(0.0);
        comps[j] = Component::new(r_mass[j], mean, (scatter + 2.0 * penalty * h2) / r_mass[j]);
    }
}

struct Polished {
    params: Params,
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Limited-memory BFGS with Armijo backtracking.
fn lbfgs(obj: &Objective<'_>, start: Params, cfg: &FitConfig) -> Polished {
    const MEMORY: usize = 10;
    let n = start.theta.len();
    let mut x = start;
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, Some(&mut g));
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut g_new = vec![0.0; n];
    let mut resets = 0;
    for iter in 0..cfg.max_iterations {
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax <= cfg.gradient_tolerance {
            return Polished { params: x, value: f, iterations: iter, converged: true };
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &d);
            axpy(-alpha[i], &y_hist[i], &mut d);
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / gmax.max(1.0)
        };
        for v in d.iter_mut() {
            *v *= gamma;
        }
        for i in 0..m {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            axpy(alpha[i] - beta, &s_hist[i], &mut d);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v / gmax.max(1.0)).collect();
            slope = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = x.clone();
            axpy(step, &d, &mut trial.theta);
            let ft = obj.eval(&trial, Some(&mut g_new));
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            // No decrease along a descent direction: numerically stationary,
            // unless the curvature memory was stale.
            if resets == 0 && !s_hist.is_empty() {
                resets += 1;
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            return Polished { params: x, value: f, iterations: iter, converged: true };
        };
        resets = 0;
        let s: Vec<f64> = trial.theta.iter().zip(&x.theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let change = (f - ft).abs();
        x = trial;
        std::mem::swap(&mut g, &mut g_new);
        let previous = f;
        f = ft;
        if dot(&s, &y) > 1e-300 {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        if change <= cfg.tolerance * (1.0 + previous.abs()) {
            return Polished { params: x, value: f, iterations: iter + 1, converged: true };
        }
    }
    Polished { params: x, value: f, iterations: cfg.max_iterations, converged: false }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Max `|ln f - ln g|` over `points` equally spaced nodes between the
/// `tail` and `1 - tail` quantiles of the target.
pub fn central_error(mix: &GaussianMixture, tail: f64, points: usize) -> Result<f64> {
    let shape = mix.target();
    let lo = nlg::quantile(tail, shape)?;
    let hi = nlg::quantile(1.0 - tail, shape)?;
    let ln_gamma = special::ln_gamma(shape.nu());
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    Ok((0..points.max(2))
        .map(|i| {
            let z = lo + step * i as f64;
            (nlg::log_density_with_norm(z, shape.nu(), ln_gamma) - mix.ln_pdf(z)).abs()
        })
        .fold(0.0, f64::max))
}

fn quality(quad: &Quadrature, mixture: &GaussianMixture, cfg: &FitConfig) -> Result<(f64, f64)> {
    let kl = quad
        .mass
        .iter()
        .zip(&quad.log_target)
        .zip(&quad.nodes)
        .map(|((&c, &lf), &z)| if c > 0.0 { c * (lf - mixture.ln_pdf(z)) } else { 0.0 })
        .sum();
    Ok((kl, central_error(mixture, cfg.central_tail, cfg.certify_points)?))
}

/// Report for a mixture built without optimization (e.g. moment matching).
pub fn assess(mixture: &GaussianMixture, cfg: &FitConfig) -> Result<FitReport> {
    let quad = Quadrature::new(mixture.target(), cfg)?;
    let (kl, central_error) = quality(&quad, mixture, cfg)?;
    Ok(FitReport { kl, objective: f64::NAN, central_error, iterations: 0, converged: true, start: 0 })
}

/// Single Gaussian with the exact NLG mean and variance.
pub fn moment_matched(shape: NlgShape) -> GaussianMixture {
    let (mean, variance) = nlg::moments(shape);
    GaussianMixture::new(vec![Component::new(1.0, mean, variance)], shape).expect("valid single component")
}

fn initial_starts(shape: NlgShape, k: usize, cfg: &FitConfig) -> Result<Vec<Vec<Component>>> {
    let (mean, var) = nlg::moments(shape);
    if k == 1 {
        return Ok(vec![vec![Component::new(1.0, mean, var)]]);
    }
    let sd = var.sqrt();
    let mut starts = Vec::new();

    // quantile-spaced means
    let levels: Vec<f64> = (0..k).map(|j| (j as f64 + 0.5) / k as f64).collect();
    let means = levels.iter().map(|&p| nlg::quantile(p, shape)).collect::<Result<Vec<_>>>()?;
    let spread = (means[k - 1] - means[0]) / (k - 1) as f64;
    starts.push(means.iter().map(|&m| Component::new(1.0 / k as f64, m, spread * spread)).collect());

    // means spread over +-3 normal scores, reaching further into the tails
    let means = (0..k)
        .map(|j| {
            let z = -3.0 + 6.0 * (j as f64 + 0.5) / k as f64;
            nlg::quantile(normal_cdf(z).clamp(1e-9, 1.0 - 1e-9), shape)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = means
        .iter()
        .map(|&m| nlg::log_density(m, shape).map(f64::exp))
        .collect::<Result<Vec<_>>>()?;
    let wsum: f64 = weights.iter().sum();
    starts.push(
        means
            .iter()
            .zip(&weights)
            .map(|(&m, &w)| Component::new(w / wsum, m, (0.5 * sd).powi(2)))
            .collect(),
    );

    // uniform placement across the central support
    let lo = nlg::quantile(1e-4, shape)?;
    let hi = nlg::upper_quantile(1e-4, shape)?;
    let step = (hi - lo) / (k - 1) as f64;
    let means: Vec<f64> = (0..k).map(|j| lo + step * j as f64).collect();
    let weights: Vec<f64> = means
        .iter()
        .map(|&m| nlg::log_density(m, shape).map(f64::exp))
        .collect::<Result<Vec<_>>>()?;
    let wsum: f64 = weights.iter().sum();
    starts.push(
        means
            .iter()
            .zip(&weights)
            .map(|(&m, &w)| Component::new(w / wsum, m, step * step))
            .collect(),
    );

    // seeded perturbations of the first start
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ shape.key().rotate_left(17) ^ k as u64);
    while starts.len() < cfg.starts {
        let base: &Vec<Component> = &starts[0];
        let perturbed = base
            .iter()
            .map(|c| {
                let jitter: f64 = rng.random_range(-0.5..0.5);
                let scale: f64 = rng.random_range(0.5..2.0);
                Component::new(c.weight, c.mean + jitter * spread, c.variance * scale)
            })
            .collect();
        starts.push(perturbed);
    }
    starts.truncate(cfg.starts.max(1));
    Ok(starts)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Fits a `k`-component mixture to `NLG(shape, 1)`.
///
/// Returns [`Error::Fit`] carrying the best iterate when no start met the
/// convergence criterion within `max_iterations`.
pub fn fit_mixture(shape: NlgShape, k: usize, cfg: &FitConfig) -> Result<FittedMixture> {
    if k == 0 {
        return Err(domain("mixture fit needs at least one component"));
    }
    cfg.validate()?;
    let quad = Quadrature::new(shape, cfg)?;
    let obj = Objective { quad: &quad, penalty: cfg.variance_penalty };
    let mut best: Option<(usize, Polished)> = None;
    for (index, mut comps) in initial_starts(shape, k, cfg)?.into_iter().enumerate() {
        for _ in 0..cfg.em_iterations {
            em_step(&quad, &mut comps, cfg.variance_penalty);
        }
        let polished = lbfgs(&obj, Params::from_components(&comps), cfg);
        let better = match &best {
            None => true,
            Some((_, b)) => polished.value < b.value,
        };
        if better {
            best = Some((index, polished));
        }
    }
    let (start, polished) = best.expect("at least one start");
    let mixture = GaussianMixture::normalized(polished.params.to_components(), shape)?;
    let (kl, central_error) = quality(&quad, &mixture, cfg)?;
    let report = FitReport {
        kl,
        objective: polished.value,
        central_error,
        iterations: polished.iterations,
        converged: polished.converged,
        start,
    };
    let fitted = FittedMixture { mixture, report };
    if fitted.report.converged {
        Ok(fitted)
    } else {
        Err(Error::Fit(Box::new(FitFailure { best: fitted })))
    }
}
