//! Gaussian full conditionals of the coefficient blocks and the variance
//! updates.
//!
//! Given labels, each auxiliary row is `w_row = x_row' theta + m_r + e`,
//! `e ~ N(0, s2_r)`. With prior precision `Q0` the block conditional has
//! precision `Q0 + X*' D^{-1} X*` and mean `Q^{-1} X*' D^{-1} (w - m)`.
//! Rows of one observation share a covariate row, so the cross products are
//! accumulated per observation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{contract, Error, Result};
use crate::model::{LatentState, PoissonLgm, ResidualLaws, Sigma2Prior};

/// Diagonal jitter, relative to the mean diagonal, tried in order.
pub const JITTER_LADDER: [f64; 3] = [0.0, 1e-10, 1e-8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Beta,
    Gamma(usize),
}

/// Gaussian conditional held through the Cholesky factor of its precision.
#[derive(Debug, Clone)]
pub struct FullConditional {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Relative jitter that was needed (0 for a clean factorization).
    pub jitter: f64,
}

impl FullConditional {
    /// Factorizes `precision` (with the jitter ladder) and solves for the mean.
    pub fn from_precision(precision: DMatrix<f64>, rhs: &DVector<f64>) -> Result<Self> {
        let d = precision.nrows();
        if precision.ncols() != d || rhs.len() != d {
            return Err(contract("precision must be square and match the right-hand side"));
        }
        let mean_diag = if d == 0 { 1.0 } else { precision.diagonal().mean().abs().max(f64::MIN_POSITIVE) };
        for &jitter in &JITTER_LADDER {
            let mut m = precision.clone();
            if jitter > 0.0 {
                for i in 0..d {
                    m[(i, i)] += jitter * mean_diag;
                }
            }
            if let Some(chol) = m.cholesky() {
                if chol.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
                    let mean = chol.solve(rhs);
                    if mean.iter().all(|v| v.is_finite()) {
                        if jitter > 0.0 {
                            log::warn!("full conditional needed relative jitter {jitter:e}");
                        }
                        return Ok(Self { mean, chol, jitter });
                    }
                }
            }
        }
        let diag = precision.diagonal();
        Err(Error::Numerical(format!(
            "precision of dimension {d} is not positive definite after jitter {:e}; diagonal range [{:e}, {:e}]",
            JITTER_LADDER[JITTER_LADDER.len() - 1],
            diag.min(),
            diag.max()
        )))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Lower-triangular `L` with `L L' = covariance`.
    pub fn covariance_factor(&self) -> Result<DMatrix<f64>> {
        let cov = self.covariance();
        let sym = (&cov + cov.transpose()) * 0.5;
        sym.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Numerical("covariance of the full conditional is not positive definite".into()))
    }

    /// `mean + L^{-T} z` where `precision = L L'`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let l = self.chol.l_dirty();
        let shift = l
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + shift
    }

    /// Log-density at `x`, normalization included.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let l = self.chol.l();
        let u = l.transpose() * d;
        let log_det: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * (self.dim() as f64) * (2.0 * std::f64::consts::PI).ln() + log_det - 0.5 * u.norm_squared()
    }
}

/// `mean + factor * z` with `z` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, factor: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if factor.nrows() != mean.len() || factor.ncols() != mean.len() {
        return Err(contract("covariance factor does not match the mean"));
    }
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + factor * z)
}

/// Per-observation accumulation of `D^{-1}` and `D^{-1}(w - m)` for a
/// working response `w_row = y*_row - ln t_row - (other blocks)_obs`.
pub(crate) struct RowWeights {
    pub precision: Vec<f64>,
    pub response: Vec<f64>,
}

pub(crate) fn row_weights(state: &LatentState, laws: &ResidualLaws, other: &[f64]) -> RowWeights {
    let design = &state.design;
    let n = design.row_start.len() - 1;
    let mut precision = vec![0.0; n];
    let mut response = vec![0.0; n];
    for r in 0..design.len() {
        let c = laws.mixture(r).components()[state.labels[r]];
        let i = design.obs[r];
        let w = design.y_star[r] - design.log_offset[r] - other[i] - c.mean;
        precision[i] += 1.0 / c.variance;
        response[i] += w / c.variance;
    }
    RowWeights { precision, response }
}

fn weighted_cross(m: &DMatrix<f64>, weights: &RowWeights, prior: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let d = m.ncols();
    let mut q = prior;
    let mut rhs = DVector::zeros(d);
    for i in 0..m.nrows() {
        let a = weights.precision[i];
        let b = weights.response[i];
        if a == 0.0 && b == 0.0 {
            continue;
        }
        for j in 0..d {
            let mij = m[(i, j)];
            if mij == 0.0 {
                continue;
            }
            rhs[j] += mij * b;
            for k in 0..=j {
                q[(j, k)] += a * mij * m[(i, k)];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            q[(k, j)] = q[(j, k)];
        }
    }
    (q, rhs)
}

/// Linear predictor of every block except `skip`.
pub(crate) fn other_blocks(model: &PoissonLgm, state: &LatentState, skip: Block) -> Vec<f64> {
    let mut eta = if skip == Block::Beta { DVector::zeros(model.n()) } else { model.x() * &state.beta };
    for (q, (b, g)) in model.blocks().iter().zip(&state.gamma).enumerate() {
        if skip != Block::Gamma(q) {
            eta += &b.z * g;
        }
    }
    eta.as_slice().to_vec()
}

/// Conditional of one coefficient block given labels, auxiliary values and
/// every other block.
pub fn gaussian_full_conditional(
    block: Block,
    state: &LatentState,
    model: &PoissonLgm,
    laws: &ResidualLaws,
) -> Result<FullConditional> {
    if state.labels.len() != state.design.len() || laws.len() != state.design.len() {
        return Err(contract("labels and residual laws must cover every auxiliary row"));
    }
    let other = other_blocks(model, state, block);
    let weights = row_weights(state, laws, &other);
    let (matrix, prior) = match block {
        Block::Beta => (model.x(), model.v0_inv().clone()),
        Block::Gamma(q) => {
            let b = model
                .blocks()
                .get(q)
                .ok_or_else(|| contract(format!("no random-effect block {q}")))?;
            (&b.z, &b.precision / state.sigma2[q])
        }
    };
    let (precision, rhs) = weighted_cross(matrix, &weights, prior);
    FullConditional::from_precision(precision, &rhs)
}

/// Random-walk state for variance blocks with a gamma prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma2Walk {
    pub log_step: f64,
    pub accepted: u64,
    pub proposed: u64,
    adapt_calls: u64,
}

/// Acceptance rate the log-variance walk is tuned toward during burn-in.
pub const SIGMA2_TARGET_ACCEPTANCE: f64 = 0.44;

impl Default for Sigma2Walk {
    fn default() -> Self {
        Self { log_step: 0.0, accepted: 0, proposed: 0, adapt_calls: 0 }
    }
}

impl Sigma2Walk {
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Log conditional density of `theta = ln sigma2` (Jacobian included).
pub fn log_sigma2_conditional(theta: f64, quad: f64, rank: usize, prior: &Sigma2Prior) -> f64 {
    let s = theta.exp();
    prior.log_density(s) + theta - 0.5 * rank as f64 * theta - 0.5 * quad / s
}

/// New `sigma2_q`: conjugate inverse-gamma draw or one random-walk step on
/// `ln sigma2` whose step size adapts while `adapt` is set.
pub fn sigma2_update<R: Rng + ?Sized>(
    current: f64,
    quad: f64,
    rank: usize,
    prior: &Sigma2Prior,
    walk: &mut Sigma2Walk,
    adapt: bool,
    rng: &mut R,
) -> Result<f64> {
    if quad < -1e-10 * (1.0 + current) {
        return Err(Error::Numerical(format!("negative quadratic form {quad} in a variance update")));
    }
    let quad = quad.max(0.0);
    match *prior {
        Sigma2Prior::InverseGamma { shape, scale } => {
            let a = shape + 0.5 * rank as f64;
            let b = scale + 0.5 * quad;
            let g = Gamma::new(a, 1.0 / b).map_err(|e| Error::Numerical(format!("inverse-gamma update: {e}")))?;
            Ok(1.0 / g.sample(rng))
        }
        Sigma2Prior::Gamma { .. } => {
            let theta = current.ln();
            let step = walk.log_step.exp();
            let proposal = theta + step * rng.sample::<f64, _>(StandardNormal);
            let log_ratio = log_sigma2_conditional(proposal, quad, rank, prior)
                - log_sigma2_conditional(theta, quad, rank, prior);
            let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
            walk.proposed += 1;
            if accept {
                walk.accepted += 1;
            }
            if adapt {
                walk.adapt_calls += 1;
                let rate = 1.0 / (walk.adapt_calls as f64).sqrt().max(1.0);
                let hit = if accept { 1.0 } else { 0.0 };
                walk.log_step += rate * (hit - SIGMA2_TARGET_ACCEPTANCE);
            }
            Ok(if accept { proposal.exp() } else { current })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_precision_addition() {
        // one row, x = 1, s2 = 1, prior variance 1, working response 2
        let fc = FullConditional::from_precision(DMatrix::from_element(1, 1, 2.0), &DVector::from_element(1, 2.0))
            .unwrap();
        assert_relative_eq!(fc.mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(fc.covariance()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn jitter_ladder_rescues_semidefinite_precision() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let fc = FullConditional::from_precision(p, &DVector::zeros(2)).unwrap();
        assert!(fc.jitter > 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(FullConditional::from_precision(bad, &DVector::zeros(2)), Err(Error::Numerical(_))));
    }

    #[test]
    fn covariance_factor_reproduces_covariance() {
        let p = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let fc = FullConditional::from_precision(p.clone(), &DVector::from_vec(vec![1.0, -1.0, 0.5])).unwrap();
        let l = fc.covariance_factor().unwrap();
        let back = &l * l.transpose();
        let inv = p.try_inverse().unwrap();
        assert!((back - inv).amax() < 1e-12);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn mvn_with_zero_factor_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let v = sample_mvn(&mean, &DMatrix::zeros(2, 2), &mut rng).unwrap();
        assert_eq!(v, mean);
    }

    #[test]
    fn mvn_identity_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mean = DVector::zeros(2);
        let id = DMatrix::identity(2, 2);
        let mut sum2 = [0.0; 2];
        for _ in 0..n {
            let v = sample_mvn(&mean, &id, &mut rng).unwrap();
            sum2[0] += v[0] * v[0];
            sum2[1] += v[1] * v[1];
        }
        // Var(z^2) = 2
        let se = (2.0 / n as f64).sqrt();
        for s in sum2 {
            assert!((s / n as f64 - 1.0).abs() < 4.0 * se);
        }
    }

    #[test]
    fn mvn_correlation_from_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]);
        // implied covariance [[1, .6], [.6, 1]]
        let n = 100_000;
        let mean = DVector::zeros(2);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let v = sample_mvn(&mean, &l, &mut rng).unwrap();
            sxy += v[0] * v[1];
            sxx += v[0] * v[0];
            syy += v[1] * v[1];
        }
        let r = sxy / (sxx * syy).sqrt();
        let se = (1.0 - 0.36) / (n as f64).sqrt();
        assert!((r - 0.6).abs() < 4.0 * se, "r = {r}");
    }

    #[test]
    fn sampling_from_precision_matches_covariance() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, -0.8, -0.8, 1.0]);
        let fc = FullConditional::from_precision(p.clone(), &DVector::from_vec(vec![0.3, 0.1])).unwrap();
        let cov = p.try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let d = fc.sample(&mut rng) - &fc.mean;
            acc += &d * d.transpose();
        }
        acc /= n as f64;
        for i in 0..2 {
            for j in 0..2 {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((acc[(i, j)] - cov[(i, j)]).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn conjugate_update_with_zero_effects() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let prior = Sigma2Prior::InverseGamma { shape: 3.0, scale: 2.0 };
        let mut walk = Sigma2Walk::default();
        let m = 4;
        let n = 100_000;
        let draws: Vec<f64> =
            (0..n).map(|_| sigma2_update(1.0, 0.0, m, &prior, &mut walk, false, &mut rng).unwrap()).collect();
        // InvGamma(a + m/2, b): mean b / (a' - 1), variance mean^2 / (a' - 2)
        let a = 3.0 + 0.5 * m as f64;
        let mean = 2.0 / (a - 1.0);
        let sd = mean / (a - 2.0).sqrt();
        let got = draws.iter().sum::<f64>() / n as f64;
        assert!((got - mean).abs() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn negative_quadratic_form_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut walk = Sigma2Walk::default();
        assert!(sigma2_update(1.0, -1.0, 2, &Sigma2Prior::default(), &mut walk, false, &mut rng).is_err());
    }
}
