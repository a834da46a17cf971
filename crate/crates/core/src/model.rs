//! Poisson latent Gaussian model, its likelihoods and the residual laws used
//! by the samplers.
//!
//! ```text
//! y_i ~ Poisson(t_i exp(eta_i)),   eta_i = x_i' beta + sum_q z_iq' gamma_q
//! beta ~ N(0, V0),   gamma_q | sigma2_q ~ N(0, sigma2_q K_q^-)
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::augmentation::AugmentedDesign;
use crate::error::{contract, domain, Error, Result};
use crate::mixture::{GaussianMixture, MixtureBank, ShapeLaw};
use crate::nlg;
use crate::special::ln_gamma;

/// Default prior variance of each fixed effect.
pub const DEFAULT_BETA_VARIANCE: f64 = 1000.0;

/// Prior on a random-effect variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma2Prior {
    /// Density proportional to `s^{-shape-1} exp(-scale / s)`; conjugate.
    InverseGamma { shape: f64, scale: f64 },
    /// Density proportional to `s^{shape-1} exp(-rate * s)`; updated by
    /// random-walk Metropolis on `ln s`.
    Gamma { shape: f64, rate: f64 },
}

impl Default for Sigma2Prior {
    fn default() -> Self {
        Sigma2Prior::InverseGamma { shape: 1.0, scale: 0.001 }
    }
}

impl Sigma2Prior {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = match *self {
            Sigma2Prior::InverseGamma { shape, scale } => (shape, scale),
            Sigma2Prior::Gamma { shape, rate } => (shape, rate),
        };
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("variance prior parameters must be positive, got {self:?}")))
        }
    }

    /// Log prior density of `s > 0` up to a constant.
    pub fn log_density(&self, s: f64) -> f64 {
        match *self {
            Sigma2Prior::InverseGamma { shape, scale } => -(shape + 1.0) * s.ln() - scale / s,
            Sigma2Prior::Gamma { shape, rate } => (shape - 1.0) * s.ln() - rate * s,
        }
    }
}

/// Tolerance, relative to the largest eigenvalue, for counting the rank of
/// a structure matrix and accepting tiny negative eigenvalues.
const EIGEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomEffectBlock {
    /// `n x m` design.
    pub z: DMatrix<f64>,
    /// `m x m` prior structure (precision up to `1 / sigma2`).
    pub precision: DMatrix<f64>,
    pub rank: usize,
    pub prior: Sigma2Prior,
}

impl RandomEffectBlock {
    pub fn new(z: DMatrix<f64>, precision: DMatrix<f64>, prior: Sigma2Prior) -> Result<Self> {
        let m = z.ncols();
        if m == 0 {
            return Err(contract("random-effect block without columns"));
        }
        if precision.shape() != (m, m) {
            return Err(contract(format!("structure matrix is {:?}, expected {m}x{m}", precision.shape())));
        }
        prior.validate()?;
        let scale = precision.amax().max(1.0);
        if (&precision - precision.transpose()).amax() > 1e-12 * scale {
            return Err(domain("structure matrix is not symmetric"));
        }
        let eig = precision.clone().symmetric_eigen();
        let top = eig.eigenvalues.amax();
        if eig.eigenvalues.iter().any(|&l| l < -EIGEN_TOLERANCE * top.max(1.0)) {
            return Err(domain("structure matrix is not non-negative definite"));
        }
        let rank = eig.eigenvalues.iter().filter(|&&l| l > EIGEN_TOLERANCE * top).count();
        Ok(Self { z, precision, rank, prior })
    }

    /// Exchangeable effects: `K = I`.
    pub fn iid(z: DMatrix<f64>, prior: Sigma2Prior) -> Result<Self> {
        let m = z.ncols();
        Self::new(z, DMatrix::identity(m, m), prior)
    }

    /// Indicator design of a grouping factor with `levels` levels.
    pub fn from_groups(groups: &[usize], levels: usize, prior: Sigma2Prior) -> Result<Self> {
        if let Some(&g) = groups.iter().find(|&&g| g >= levels) {
            return Err(contract(format!("group index {g} out of range for {levels} levels")));
        }
        let z = DMatrix::from_fn(groups.len(), levels, |i, j| if groups[i] == j { 1.0 } else { 0.0 });
        Self::iid(z, prior)
    }

    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }

    /// `gamma' K gamma`
    pub fn quadratic_form(&self, gamma: &DVector<f64>) -> f64 {
        (gamma.transpose() * &self.precision * gamma)[(0, 0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonLgm {
    y: Vec<u64>,
    offset: Vec<f64>,
    x: DMatrix<f64>,
    blocks: Vec<RandomEffectBlock>,
    v0: DMatrix<f64>,
    v0_inv: DMatrix<f64>,
}

impl PoissonLgm {
    /// `offset = None` means `t_i = 1`; `v0 = None` means `1000 I`.
    pub fn new(
        y: Vec<u64>,
        offset: Option<Vec<f64>>,
        x: DMatrix<f64>,
        blocks: Vec<RandomEffectBlock>,
        v0: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        let offset = offset.unwrap_or_else(|| vec![1.0; n]);
        if offset.len() != n {
            return Err(contract(format!("{} offsets for {n} observations", offset.len())));
        }
        if let Some((i, t)) = offset.iter().enumerate().find(|(_, t)| !(**t > 0.0) || !t.is_finite()) {
            return Err(domain(format!("offset {i} must be positive and finite, got {t}")));
        }
        if x.nrows() != n {
            return Err(contract(format!("design has {} rows for {n} observations", x.nrows())));
        }
        if x.ncols() == 0 {
            return Err(contract("at least one fixed effect is required"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(domain("design matrix has non-finite entries"));
        }
        for (q, b) in blocks.iter().enumerate() {
            if b.z.nrows() != n {
                return Err(contract(format!("random-effect block {q} has {} rows for {n} observations", b.z.nrows())));
            }
        }
        let p = x.ncols();
        let v0 = v0.unwrap_or_else(|| DMatrix::identity(p, p) * DEFAULT_BETA_VARIANCE);
        if v0.shape() != (p, p) {
            return Err(contract(format!("prior covariance is {:?}, expected {p}x{p}", v0.shape())));
        }
        if (&v0 - v0.transpose()).amax() > 1e-12 * v0.amax().max(1.0) {
            return Err(domain("prior covariance is not symmetric"));
        }
        let chol = v0.clone().cholesky().ok_or_else(|| domain("prior covariance is not positive definite"))?;
        let v0_inv = chol.inverse();
        Ok(Self { y, offset, x, blocks, v0, v0_inv })
    }

    /// Intercept-only model with unit offsets.
    pub fn intercept_only(y: Vec<u64>, beta_variance: f64) -> Result<Self> {
        let n = y.len();
        Self::new(y, None, DMatrix::from_element(n, 1, 1.0), vec![], Some(DMatrix::from_element(1, 1, beta_variance)))
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn blocks(&self) -> &[RandomEffectBlock] {
        &self.blocks
    }

    pub fn v0(&self) -> &DMatrix<f64> {
        &self.v0
    }

    pub fn v0_inv(&self) -> &DMatrix<f64> {
        &self.v0_inv
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of fixed effects (intercept included).
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Length of a stored draw: beta, every gamma_q, every sigma2_q.
    pub fn dim(&self) -> usize {
        self.p() + self.blocks.iter().map(|b| b.len() + 1).sum::<usize>()
    }

    /// Column names of a stored draw: `beta0..`, `gamma_q_j`, `sigma2_q`.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.p()).map(|k| format!("beta{k}")).collect();
        for (q, b) in self.blocks.iter().enumerate() {
            names.extend((0..b.len()).map(|j| format!("gamma_{q}_{j}")));
        }
        names.extend((0..self.blocks.len()).map(|q| format!("sigma2_{q}")));
        names
    }

    /// `eta_i` without offsets.
    pub fn linear_predictor(&self, beta: &DVector<f64>, gamma: &[DVector<f64>]) -> Vec<f64> {
        let mut eta = &self.x * beta;
        for (b, g) in self.blocks.iter().zip(gamma) {
            eta += &b.z * g;
        }
        eta.as_slice().to_vec()
    }

    pub fn check_parameters(&self, beta: &DVector<f64>, gamma: &[DVector<f64>]) -> Result<()> {
        if beta.len() != self.p() {
            return Err(contract(format!("beta has length {}, expected {}", beta.len(), self.p())));
        }
        if gamma.len() != self.blocks.len() {
            return Err(contract(format!("{} gamma blocks for {} random effects", gamma.len(), self.blocks.len())));
        }
        for (q, (g, b)) in gamma.iter().zip(&self.blocks).enumerate() {
            if g.len() != b.len() {
                return Err(contract(format!("gamma block {q} has length {}, expected {}", g.len(), b.len())));
            }
        }
        Ok(())
    }
}

/// Poisson log-likelihood including `-ln y!`:
/// `sum_i y_i (eta_i + ln t_i) - t_i e^{eta_i} - ln y_i!`.
///
/// Returns `-inf` when an intensity overflows.
pub fn exact_poisson_loglik(model: &PoissonLgm, beta: &DVector<f64>, gamma: &[DVector<f64>]) -> Result<f64> {
    model.check_parameters(beta, gamma)?;
    let eta = model.linear_predictor(beta, gamma);
    Ok(poisson_loglik_eta(model, &eta))
}

pub(crate) fn poisson_loglik_eta(model: &PoissonLgm, eta: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((&y, &t), &e) in model.y.iter().zip(&model.offset).zip(eta) {
        let rate = t * e.exp();
        if !rate.is_finite() {
            log::debug!("Poisson intensity overflow at eta = {e}");
            return f64::NEG_INFINITY;
        }
        total += y as f64 * (e + t.ln()) - rate - ln_gamma(y as f64 + 1.0);
    }
    total
}

/// Maximizer of the exact log posterior over `(beta, gamma)` with every
/// `sigma2_q = 1`, by damped Newton iterations from zero. Chains start here.
pub fn penalized_mode(model: &PoissonLgm) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let dims: Vec<usize> = std::iter::once(model.p()).chain(model.blocks.iter().map(RandomEffectBlock::len)).collect();
    let total: usize = dims.iter().sum();
    let mut design = DMatrix::zeros(model.n(), total);
    let mut prior = DMatrix::zeros(total, total);
    design.columns_mut(0, model.p()).copy_from(&model.x);
    prior.view_mut((0, 0), (model.p(), model.p())).copy_from(&model.v0_inv);
    let mut at = model.p();
    for b in &model.blocks {
        design.columns_mut(at, b.len()).copy_from(&b.z);
        prior.view_mut((at, at), (b.len(), b.len())).copy_from(&b.precision);
        at += b.len();
    }
    let log_t: DVector<f64> = DVector::from_iterator(model.n(), model.offset.iter().map(|t| t.ln()));
    let y = DVector::from_iterator(model.n(), model.y.iter().map(|&v| v as f64));
    let objective = |theta: &DVector<f64>| -> f64 {
        let eta = &design * theta;
        let mut v = -0.5 * (theta.transpose() * &prior * theta)[(0, 0)];
        for i in 0..model.n() {
            v += y[i] * eta[i] - (eta[i] + log_t[i]).exp();
        }
        v
    };
    let mut theta = DVector::zeros(total);
    let mut current = objective(&theta);
    for _ in 0..100 {
        let eta = &design * &theta;
        let rate = DVector::from_fn(model.n(), |i, _| (eta[i] + log_t[i]).exp());
        let grad = design.transpose() * (&y - &rate) - &prior * &theta;
        let mut hess = &prior + design.transpose() * DMatrix::from_diagonal(&rate) * &design;
        let ridge = 1e-8 * (hess.trace() / total as f64).max(1.0);
        for k in 0..total {
            hess[(k, k)] += ridge;
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Numerical("Newton system for the starting point is not positive definite".into()))?
            .solve(&grad);
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial = &theta + &step * scale;
            let v = objective(&trial);
            if v.is_finite() && v >= current {
                theta = trial;
                improved = v > current;
                current = v;
                break;
            }
            scale *= 0.5;
        }
        if !improved || step.amax() * scale < 1e-10 {
            break;
        }
    }
    let beta = theta.rows(0, model.p()).into_owned();
    let mut gamma = Vec::with_capacity(model.blocks.len());
    let mut at = model.p();
    for b in &model.blocks {
        gamma.push(theta.rows(at, b.len()).into_owned());
        at += b.len();
    }
    Ok((beta, gamma))
}

/// Residual law in force for every auxiliary row: the fitted mixture of
/// its shape, or the tail-adjusted one for flagged rows.
#[derive(Debug, Clone)]
pub struct ResidualLaws {
    laws: Vec<Arc<ShapeLaw>>,
    adjusted: Vec<bool>,
    ln_gamma: Vec<f64>,
}

impl ResidualLaws {
    pub fn for_design(design: &AugmentedDesign, bank: &MixtureBank) -> Result<Self> {
        let mut shapes = design.shape.clone();
        shapes.sort_by(|a, b| a.nu().total_cmp(&b.nu()));
        shapes.dedup();
        bank.prefetch(&shapes)?;
        let laws = design.shape.iter().map(|&s| bank.get(s)).collect::<Result<Vec<_>>>()?;
        let ln_gamma = design.shape.iter().map(|s| ln_gamma(s.nu())).collect();
        Ok(Self { adjusted: vec![false; laws.len()], laws, ln_gamma })
    }

    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    pub fn law(&self, row: usize) -> &ShapeLaw {
        &self.laws[row]
    }

    pub fn is_adjusted(&self, row: usize) -> bool {
        self.adjusted[row]
    }

    pub fn adjusted_flags(&self) -> &[bool] {
        &self.adjusted
    }

    /// Switches `row` to the tail-adjusted mixture of its shape.
    pub fn set_adjusted(&mut self, row: usize, on: bool) -> Result<()> {
        if on {
            self.laws[row].adjusted()?;
        }
        self.adjusted[row] = on;
        Ok(())
    }

    #[inline]
    pub fn mixture(&self, row: usize) -> &GaussianMixture {
        let law = &self.laws[row];
        if self.adjusted[row] {
            law.adjusted().expect("adjusted mixture built when the flag was set")
        } else {
            &law.mixture
        }
    }

    /// Exact NLG log-density of the residual of `row`.
    #[inline]
    pub fn exact_log_density(&self, row: usize, eps: f64) -> f64 {
        nlg::log_density_with_norm(eps, self.laws[row].shape.nu(), self.ln_gamma[row])
    }
}

/// Which residual density an augmented likelihood uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugLaw {
    /// Exact NLG densities.
    Exact,
    /// The per-row mixtures (adjusted where flagged).
    Approximate,
    /// Exact densities standing in for the approximation; turns every
    /// correction into the identity.
    ExactDouble,
}

/// `sum_rows ln density(eps_row)` under `law`.
pub fn augmented_loglik(residuals: &[f64], laws: &ResidualLaws, law: AugLaw) -> Result<f64> {
    if residuals.len() != laws.len() {
        return Err(contract(format!("{} residuals for {} auxiliary rows", residuals.len(), laws.len())));
    }
    if let Some(e) = residuals.iter().find(|e| !e.is_finite()) {
        return Err(domain(format!("non-finite residual {e}")));
    }
    Ok(match law {
        AugLaw::Exact | AugLaw::ExactDouble => {
            residuals.iter().enumerate().map(|(r, &e)| laws.exact_log_density(r, e)).sum()
        }
        AugLaw::Approximate => residuals.iter().enumerate().map(|(r, &e)| laws.mixture(r).ln_pdf(e)).sum(),
    })
}

/// Draws one component index with probability proportional to
/// `w_k phi(eps; m_k, s2_k)`. Returns `(label, fell_back)`; the fallback
/// (nearest mean) is used only if every component density underflows.
#[inline]
pub fn sample_label<R: Rng + ?Sized>(mix: &GaussianMixture, eps: f64, rng: &mut R, scratch: &mut Vec<f64>) -> (usize, bool) {
    let terms = mix.terms();
    if terms.len() == 1 {
        return (0, false);
    }
    scratch.clear();
    let mut max = f64::NEG_INFINITY;
    for t in terms {
        let d = eps - t.mean;
        let v = t.log_scale - d * d * t.half_precision;
        scratch.push(v);
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY || !max.is_finite() {
        let nearest = terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.log_scale > f64::NEG_INFINITY)
            .min_by(|a, b| (eps - a.1.mean).abs().total_cmp(&(eps - b.1.mean).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        return (nearest, true);
    }
    let mut total = 0.0;
    for v in scratch.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let mut target = rng.random::<f64>() * total;
    for (k, &v) in scratch.iter().enumerate() {
        if target < v {
            return (k, false);
        }
        target -= v;
    }
    // rounding left the target at the very top: take the last live component
    (scratch.iter().rposition(|&v| v > 0.0).unwrap_or(0), false)
}

/// Samples a label for every residual; returns the number of fallbacks.
pub fn sample_labels<R: Rng + ?Sized>(
    residuals: &[f64],
    laws: &ResidualLaws,
    rng: &mut R,
    labels: &mut Vec<usize>,
) -> Result<usize> {
    if residuals.len() != laws.len() {
        return Err(contract(format!("{} residuals for {} auxiliary rows", residuals.len(), laws.len())));
    }
    labels.clear();
    let mut scratch = Vec::with_capacity(64);
    let mut fallbacks = 0;
    for (r, &e) in residuals.iter().enumerate() {
        let (k, fell) = sample_label(laws.mixture(r), e, rng, &mut scratch);
        if fell {
            fallbacks += 1;
            log::warn!("row {r}: every mixture component underflows at residual {e}; using the nearest mean");
        }
        labels.push(k);
    }
    Ok(fallbacks)
}

/// Full parameter state of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub beta: DVector<f64>,
    pub gamma: Vec<DVector<f64>>,
    pub sigma2: Vec<f64>,
    pub design: AugmentedDesign,
    pub labels: Vec<usize>,
}

impl LatentState {
    /// Zero coefficients, unit variances, auxiliary values not yet drawn.
    pub fn zeros(model: &PoissonLgm, design: AugmentedDesign) -> Self {
        let labels = vec![0; design.len()];
        Self {
            beta: DVector::zeros(model.p()),
            gamma: model.blocks().iter().map(|b| DVector::zeros(b.len())).collect(),
            sigma2: vec![1.0; model.blocks().len()],
            design,
            labels,
        }
    }

    /// Coefficients at [`penalized_mode`], unit variances.
    pub fn initial(model: &PoissonLgm, design: AugmentedDesign) -> Result<Self> {
        let (beta, gamma) = penalized_mode(model)?;
        Ok(Self { beta, gamma, ..Self::zeros(model, design) })
    }

    /// Stored-draw layout: beta, gammas, sigma2s.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.beta.iter().copied().collect();
        for g in &self.gamma {
            out.extend(g.iter());
        }
        out.extend(&self.sigma2);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::Scheme;
    use crate::mixture::{Component, FitConfig};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(y: u64, t: f64) -> PoissonLgm {
        PoissonLgm::new(vec![y], Some(vec![t]), DMatrix::from_element(1, 1, 1.0), vec![], None).unwrap()
    }

    #[test]
    fn poisson_loglik_examples() {
        let b = DVector::from_element(1, 0.0);
        assert_relative_eq!(exact_poisson_loglik(&single(0, 1.0), &b, &[]).unwrap(), -1.0, epsilon = 1e-15);
        assert_relative_eq!(
            exact_poisson_loglik(&single(2, 1.0), &b, &[]).unwrap(),
            -1.0 - 2f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn poisson_gradient_matches_finite_differences() {
        let m = PoissonLgm::new(vec![3, 0, 7], Some(vec![1.0, 2.0, 0.5]), DMatrix::from_element(3, 1, 1.0), vec![], None)
            .unwrap();
        for e0 in [-1.0, 0.2, 1.5] {
            let h = 1e-6;
            let f = |e: f64| exact_poisson_loglik(&m, &DVector::from_element(1, e), &[]).unwrap();
            let fd = (f(e0 + h) - f(e0 - h)) / (2.0 * h);
            let analytic: f64 = [3.0, 0.0, 7.0]
                .iter()
                .zip([1.0, 2.0, 0.5])
                .map(|(y, t)| y - t * f64::exp(e0))
                .sum();
            assert_relative_eq!(fd, analytic, max_relative = 1e-6);
        }
    }

    #[test]
    fn poisson_overflow_is_minus_infinity() {
        let v = exact_poisson_loglik(&single(1, 1.0), &DVector::from_element(1, 800.0), &[]).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn penalized_mode_of_intercept_only() {
        // y = {3}, t = 1, prior variance 1e6: the mode is essentially ln 3
        let m = PoissonLgm::intercept_only(vec![3], 1e6).unwrap();
        let (beta, gamma) = penalized_mode(&m).unwrap();
        assert!(gamma.is_empty());
        assert_relative_eq!(beta[0], 3f64.ln(), epsilon = 1e-5);
        // the gradient vanishes at the returned point with a grouping factor
        let block = RandomEffectBlock::from_groups(&[0, 0, 1, 1], 2, Sigma2Prior::default()).unwrap();
        let m = PoissonLgm::new(vec![0, 1, 7, 9], None, DMatrix::from_element(4, 1, 1.0), vec![block], None).unwrap();
        let (beta, gamma) = penalized_mode(&m).unwrap();
        let eta = m.linear_predictor(&beta, &gamma);
        let resid: Vec<f64> = eta.iter().zip(m.y()).map(|(e, &y)| y as f64 - e.exp()).collect();
        let g0 = resid.iter().sum::<f64>() - beta[0] / DEFAULT_BETA_VARIANCE;
        let g1 = resid[0] + resid[1] - gamma[0][0];
        assert!(g0.abs() < 1e-8 && g1.abs() < 1e-8, "{g0} {g1}");
    }

    #[test]
    fn model_validation() {
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(PoissonLgm::new(vec![1, 2], Some(vec![1.0, 0.0]), x.clone(), vec![], None).is_err());
        assert!(PoissonLgm::new(vec![1], None, x.clone(), vec![], None).is_err());
        assert!(PoissonLgm::new(vec![1, 2], None, x.clone(), vec![], Some(DMatrix::from_element(1, 1, -1.0))).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(RandomEffectBlock::new(DMatrix::identity(2, 2), bad, Sigma2Prior::default()).is_err());
        let rw1 = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let block = RandomEffectBlock::new(DMatrix::identity(2, 2), rw1, Sigma2Prior::default()).unwrap();
        assert_eq!(block.rank, 1);
    }

    #[test]
    fn parameter_names_layout() {
        let block = RandomEffectBlock::from_groups(&[0, 1, 1], 2, Sigma2Prior::default()).unwrap();
        let m = PoissonLgm::new(vec![0, 1, 2], None, DMatrix::from_element(3, 2, 1.0), vec![block], None).unwrap();
        assert_eq!(m.parameter_names(), vec!["beta0", "beta1", "gamma_0_0", "gamma_0_1", "sigma2_0"]);
        assert_eq!(m.dim(), 5);
    }

    fn shared_laws(y: &[u64]) -> (AugmentedDesign, ResidualLaws) {
        let design = AugmentedDesign::new(Scheme::Iams, y, &vec![1.0; y.len()]).unwrap();
        let bank = MixtureBank::shared();
        assert_eq!(bank.config(), &FitConfig::default());
        let laws = ResidualLaws::for_design(&design, bank).unwrap();
        (design, laws)
    }

    #[test]
    fn augmented_loglik_examples() {
        let (_, laws) = shared_laws(&[0]);
        approx::assert_abs_diff_eq!(augmented_loglik(&[0.0], &laws, AugLaw::Exact).unwrap(), -1.0, epsilon = 1e-12);
        let (_, empty) = shared_laws(&[]);
        assert_eq!(augmented_loglik(&[], &empty, AugLaw::Approximate).unwrap(), 0.0);
        assert!(augmented_loglik(&[0.0, 1.0], &laws, AugLaw::Exact).is_err());
    }

    #[test]
    fn label_examples() {
        let shape = crate::nlg::NlgShape::unit();
        let one = GaussianMixture::new(vec![Component::new(1.0, 0.0, 1.0)], shape).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut scratch = Vec::new();
        assert_eq!(sample_label(&one, 3.0, &mut rng, &mut scratch), (0, false));

        let two = GaussianMixture::new(vec![Component::new(0.5, -1.0, 1.0), Component::new(0.5, 1.0, 1.0)], shape)
            .unwrap();
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_label(&two, 0.0, &mut rng, &mut scratch).0 == 1).count();
        let sd = (0.25 / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 4.0 * sd);

        let three = GaussianMixture::new(
            vec![Component::new(0.3, -5.0, 0.5), Component::new(0.4, 0.0, 0.5), Component::new(0.3, 5.0, 0.5)],
            shape,
        )
        .unwrap();
        // posterior weight of the far components at eps = 5 is ~e^{-25}
        let hits = (0..10_000).filter(|_| sample_label(&three, 5.0, &mut rng, &mut scratch).0 == 2).count();
        assert!(hits >= 9_990);
    }

    #[test]
    fn label_fallback_to_nearest_mean() {
        let shape = crate::nlg::NlgShape::unit();
        let tight = GaussianMixture::new(
            vec![Component::new(0.5, -1e154, 1e-6), Component::new(0.5, 1e154, 1e-6)],
            shape,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut scratch = Vec::new();
        // the squared distance overflows, so every component underflows
        assert_eq!(sample_label(&tight, 3e154, &mut rng, &mut scratch), (1, true));
        assert_eq!(sample_label(&tight, -3e154, &mut rng, &mut scratch), (0, true));
        assert_eq!(sample_label(&tight, 1e154, &mut rng, &mut scratch), (1, false));
    }
}
