//! Exact-posterior references: grid quadrature for one or two fixed
//! effects and an adaptive random-walk Metropolis chain on the exact
//! Poisson posterior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, domain, Error, Result};
use crate::model::{penalized_mode, poisson_loglik_eta, PoissonLgm};
use crate::sampler::chain_rng;

/// Half-width of the quadrature grid in posterior standard deviations.
const GRID_HALF_WIDTH: f64 = 10.0;

/// Normalized posterior of one scalar on an equally spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    /// Unnormalized log posterior at each node.
    pub log_post: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl GridPosterior {
    fn from_log_density(grid: Vec<f64>, log_post: Vec<f64>) -> Result<Self> {
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical("log posterior is not finite anywhere on the grid".into()));
        }
        let raw: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
        let mut cdf = vec![0.0; grid.len()];
        for k in 1..grid.len() {
            cdf[k] = cdf[k - 1] + 0.5 * (raw[k] + raw[k - 1]) * (grid[k] - grid[k - 1]);
        }
        let total = cdf[grid.len() - 1];
        let density = raw.iter().map(|r| r / total).collect();
        for c in &mut cdf {
            *c /= total;
        }
        Ok(Self { grid, log_post, density, cdf })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Piecewise-linear CDF, 0 below and 1 above the grid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return 0.0;
        }
        if x >= g[g.len() - 1] {
            return 1.0;
        }
        let k = g.partition_point(|&v| v <= x) - 1;
        let w = (x - g[k]) / (g[k + 1] - g[k]);
        self.cdf[k] + w * (self.cdf[k + 1] - self.cdf[k])
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(domain(format!("probability {p} outside [0, 1]")));
        }
        let k = self.cdf.partition_point(|&c| c < p).clamp(1, self.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        Ok(self.grid[k - 1] + w * (self.grid[k] - self.grid[k - 1]))
    }

    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for k in 1..self.len() {
            let a = f(self.grid[k - 1]) * self.density[k - 1];
            let b = f(self.grid[k]) * self.density[k];
            acc += 0.5 * (a + b) * (self.grid[k] - self.grid[k - 1]);
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.moment(|x| x)
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        self.moment(|x| (x - m) * (x - m)).sqrt()
    }

    /// Grid node with the largest density.
    pub fn mode(&self) -> f64 {
        let k = (0..self.len()).max_by(|&a, &b| self.density[a].total_cmp(&self.density[b])).unwrap_or(0);
        self.grid[k]
    }
}

fn check_fixed_only(model: &PoissonLgm, p: usize) -> Result<()> {
    if model.p() != p || !model.blocks().is_empty() {
        return Err(contract(format!(
            "grid oracle needs exactly {p} fixed effect(s) and no random effects, got p = {} with {} block(s)",
            model.p(),
            model.blocks().len()
        )));
    }
    Ok(())
}

/// Posterior of the intercept of an intercept-only model under the prior
/// `N(prior_mean, prior_var)`, on `resolution` nodes spanning ten posterior
/// standard deviations either side of the mode.
pub fn grid_posterior_1d(model: &PoissonLgm, prior_mean: f64, prior_var: f64, resolution: usize) -> Result<GridPosterior> {
    check_fixed_only(model, 1)?;
    if !(prior_var > 0.0 && prior_var.is_finite()) {
        return Err(domain(format!("prior variance must be positive, got {prior_var}")));
    }
    if resolution < 3 {
        return Err(domain("grid resolution must be at least 3"));
    }
    let x: Vec<f64> = model.x().column(0).iter().copied().collect();
    let log_post = |mu: f64| -> f64 {
        let eta: Vec<f64> = x.iter().map(|v| v * mu).collect();
        poisson_loglik_eta(model, &eta) - 0.5 * (mu - prior_mean).powi(2) / prior_var
    };
    // moment pre-pass: Newton to the mode, curvature for the scale
    let mut mu = prior_mean;
    let mut curvature = 1.0 / prior_var;
    for _ in 0..200 {
        let mut grad = -(mu - prior_mean) / prior_var;
        curvature = 1.0 / prior_var;
        for ((&y, &t), &xi) in model.y().iter().zip(model.offset()).zip(&x) {
            let rate = t * (xi * mu).exp();
            grad += xi * (y as f64 - rate);
            curvature += xi * xi * rate;
        }
        let mut step = grad / curvature;
        let here = log_post(mu);
        while log_post(mu + step) < here && step.abs() > 1e-14 {
            step *= 0.5;
        }
        mu += step;
        if step.abs() < 1e-12 * (1.0 + mu.abs()) {
            break;
        }
    }
    let sd = curvature.sqrt().recip();
    let (lo, hi) = (mu - GRID_HALF_WIDTH * sd, mu + GRID_HALF_WIDTH * sd);
    let grid: Vec<f64> = (0..resolution).map(|k| lo + (hi - lo) * k as f64 / (resolution - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&g| log_post(g)).collect();
    if let Some(k) = values[1..resolution - 1].iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("log posterior not finite at grid node {}", grid[k + 1])));
    }
    GridPosterior::from_log_density(grid, values)
}

/// Marginal posteriors of both coefficients of a two-covariate fixed-effect
/// model under its `N(0, V0)` prior, from a `resolution x resolution` grid
/// aligned with the coordinate axes around the mode.
pub fn grid_posterior_2d(model: &PoissonLgm, resolution: usize) -> Result<[GridPosterior; 2]> {
    check_fixed_only(model, 2)?;
    if resolution < 3 {
        return Err(domain("grid resolution must be at least 3"));
    }
    let (mode, _) = penalized_mode(model)?;
    let eta = model.linear_predictor(&mode, &[]);
    let rate = DVector::from_iterator(model.n(), eta.iter().zip(model.offset()).map(|(e, t)| t * e.exp()));
    let hess = model.v0_inv() + model.x().transpose() * DMatrix::from_diagonal(&rate) * model.x();
    let cov = hess.try_inverse().ok_or_else(|| Error::Numerical("singular curvature at the mode".into()))?;
    let axes: Vec<Vec<f64>> = (0..2)
        .map(|k| {
            let s = cov[(k, k)].sqrt();
            let (lo, hi) = (mode[k] - GRID_HALF_WIDTH * s, mode[k] + GRID_HALF_WIDTH * s);
            (0..resolution).map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64).collect()
        })
        .collect();
    let v0_inv = model.v0_inv();
    let mut table = vec![0.0; resolution * resolution];
    let mut eta = vec![0.0; model.n()];
    for (i, &b0) in axes[0].iter().enumerate() {
        for (j, &b1) in axes[1].iter().enumerate() {
            for (r, e) in eta.iter_mut().enumerate() {
                *e = model.x()[(r, 0)] * b0 + model.x()[(r, 1)] * b1;
            }
            let prior = v0_inv[(0, 0)] * b0 * b0 + 2.0 * v0_inv[(0, 1)] * b0 * b1 + v0_inv[(1, 1)] * b1 * b1;
            let v = poisson_loglik_eta(model, &eta) - 0.5 * prior;
            if !v.is_finite() && i > 0 && j > 0 && i + 1 < resolution && j + 1 < resolution {
                return Err(Error::Numerical(format!("log posterior not finite at ({b0}, {b1})")));
            }
            table[i * resolution + j] = v;
        }
    }
    let max = table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let marginal = |along_first: bool| -> Vec<f64> {
        (0..resolution)
            .map(|a| {
                // trapezoid over the other axis, on the log scale
                let mut acc = 0.0;
                for b in 0..resolution {
                    let (i, j) = if along_first { (a, b) } else { (b, a) };
                    let w = if b == 0 || b + 1 == resolution { 0.5 } else { 1.0 };
                    acc += w * (table[i * resolution + j] - max).exp();
                }
                acc.ln() + max
            })
            .collect()
    };
    Ok([
        GridPosterior::from_log_density(axes[0].clone(), marginal(true))?,
        GridPosterior::from_log_density(axes[1].clone(), marginal(false))?,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwmhConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub chain: u64,
}

impl Default for RwmhConfig {
    fn default() -> Self {
        Self { iterations: 20_000, burn_in: 5_000, thinning: 1, seed: 1, chain: 0 }
    }
}

/// Largest parameter dimension the reference chain accepts.
pub const RWMH_MAX_DIM: usize = 50;
const RWMH_TARGET: f64 = 0.234;
const ADAPT_START: usize = 200;

/// Draws of the reference chain. Variances are reported on their natural
/// scale even though the chain moves on `ln sigma2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceChain {
    pub names: Vec<String>,
    pub draws: Vec<f64>,
    pub rows: usize,
    pub accepted: u64,
    pub proposed: u64,
    /// Proposal covariance in force after burn-in.
    pub proposal: DMatrix<f64>,
    /// Acceptance after burn-in fell outside `[0.05, 0.7]`.
    pub warning: bool,
}

impl ReferenceChain {
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

    pub fn acceptance(&self) -> f64 {
        self.accepted as f64 / self.proposed.max(1) as f64
    }
}

/// Exact log posterior over `(beta, gamma, ln sigma2)`, Jacobian included.
pub fn exact_log_posterior(model: &PoissonLgm, theta: &[f64]) -> f64 {
    let p = model.p();
    let beta = DVector::from_column_slice(&theta[..p]);
    let mut at = p;
    let mut gamma = Vec::with_capacity(model.blocks().len());
    for b in model.blocks() {
        gamma.push(DVector::from_column_slice(&theta[at..at + b.len()]));
        at += b.len();
    }
    let eta = model.linear_predictor(&beta, &gamma);
    let mut lp = poisson_loglik_eta(model, &eta) - 0.5 * (beta.transpose() * model.v0_inv() * &beta)[(0, 0)];
    for (q, b) in model.blocks().iter().enumerate() {
        let log_s = theta[at + q];
        let s = log_s.exp();
        lp += -0.5 * b.rank as f64 * log_s - 0.5 * b.quadratic_form(&gamma[q]) / s + b.prior.log_density(s) + log_s;
    }
    lp
}

/// Adaptive random-walk Metropolis on the exact posterior. During burn-in
/// the proposal is `scale^2 Sigma` with `Sigma` the running covariance of the
/// chain and `scale` steered towards 0.234 acceptance; both are frozen at the
/// end of burn-in.
pub fn rwmh_reference(model: &PoissonLgm, config: &RwmhConfig) -> Result<ReferenceChain> {
    if config.iterations <= config.burn_in || config.thinning == 0 {
        return Err(Error::Config(format!(
            "reference chain needs iterations > burn-in and thinning >= 1, got {} / {} / {}",
            config.iterations, config.burn_in, config.thinning
        )));
    }
    let d = model.dim();
    if d > RWMH_MAX_DIM {
        return Err(Error::Config(format!("reference chain supports at most {RWMH_MAX_DIM} parameters, got {d}")));
    }
    let mut rng = chain_rng(config.seed, config.chain);
    let (beta, gamma) = penalized_mode(model)?;
    let mut theta: Vec<f64> = beta.iter().copied().collect();
    for g in &gamma {
        theta.extend(g.iter());
    }
    theta.extend(std::iter::repeat_n(0.0, model.blocks().len()));
    let mut current = exact_log_posterior(model, &theta);
    if !current.is_finite() {
        return Err(Error::Numerical("exact log posterior not finite at the starting point".into()));
    }

    let mut log_scale = (2.38 / (d as f64).sqrt()).ln();
    let mut cov = DMatrix::identity(d, d) * 0.01;
    let mut factor = cov.clone().cholesky().expect("identity").l();
    let mut run_mean = DVector::zeros(d);
    let mut run_m2 = DMatrix::zeros(d, d);
    let mut seen = 0.0;

    let names = model.parameter_names();
    let kept = (config.iterations - config.burn_in) / config.thinning;
    let mut draws = Vec::with_capacity(kept * d);
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let sigma_at = model.p() + model.blocks().iter().map(|b| b.len()).sum::<usize>();
    let mut z = DVector::zeros(d);
    for b in 0..config.iterations {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let step = &factor * &z * log_scale.exp();
        let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        let lp = exact_log_posterior(model, &trial);
        let log_alpha = lp - current;
        let accept = log_alpha.is_finite() && (log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha);
        if accept {
            theta = trial;
            current = lp;
        }
        if b < config.burn_in {
            let alpha = if log_alpha.is_nan() { 0.0 } else { log_alpha.min(0.0).exp() };
            log_scale += (alpha - RWMH_TARGET) / ((b + 1) as f64).powf(0.6);
            seen += 1.0;
            let x = DVector::from_column_slice(&theta);
            let delta = &x - &run_mean;
            run_mean += &delta / seen;
            run_m2 += &delta * (&x - &run_mean).transpose();
            if b >= ADAPT_START && b % 50 == 0 {
                let mut est = &run_m2 / (seen - 1.0);
                for k in 0..d {
                    est[(k, k)] += 1e-10;
                }
                if let Some(ch) = est.clone().cholesky() {
                    cov = est;
                    factor = ch.l();
                }
            }
        } else {
            proposed += 1;
            if accept {
                accepted += 1;
            }
            if (b - config.burn_in + 1).is_multiple_of(config.thinning) {
                let mut row = theta.clone();
                for v in &mut row[sigma_at..] {
                    *v = v.exp();
                }
                draws.extend(row);
            }
        }
    }
    let rate = accepted as f64 / proposed.max(1) as f64;
    let warning = !(0.05..=0.7).contains(&rate);
    if warning {
        log::warn!("reference chain acceptance {rate:.3} outside [0.05, 0.7]");
    }
    Ok(ReferenceChain {
        names,
        rows: draws.len() / d,
        draws,
        accepted,
        proposed,
        proposal: cov * (2.0 * log_scale).exp(),
        warning,
    })
}
