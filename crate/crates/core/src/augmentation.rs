//! First-stage data augmentation.
//!
//! For an observation with count `y` and intensity `lambda`, the arrival
//! times of a unit-rate-per-`lambda` Poisson process on `[0, 1]` and the
//! first arrival after 1 give residuals `-ln tau - ln lambda` that follow an
//! NLG law exactly. The original scheme (AMS) keeps all `y + 1`
//! inter-arrival times; the improved scheme (IAMS) keeps only the `y`-th
//! arrival time and the following gap.
//!
//! The deterministic kernels take their raw random inputs as arguments; the
//! wrappers in this module own the random stream.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{contract, domain, Result};
use crate::nlg::NlgShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// `y + 1` inter-arrival times per observation.
    Ams,
    /// At most two latent times per observation.
    Iams,
}

impl Scheme {
    /// Auxiliary variables attached to an observation with count `y`.
    pub fn slots(self, y: u64) -> usize {
        match self {
            Scheme::Ams => y as usize + 1,
            Scheme::Iams => 1 + usize::from(y > 0),
        }
    }

    /// Residual law of a slot (0-based).
    pub fn slot_shape(self, y: u64, slot: usize) -> NlgShape {
        match (self, slot) {
            (Scheme::Iams, 1) => NlgShape::from_count(y).expect("second IAMS slot requires y > 0"),
            _ => NlgShape::unit(),
        }
    }

    /// Total auxiliary count for a data set: `n + sum y` or `2n - n0`.
    pub fn total(self, y: &[u64]) -> usize {
        y.iter().map(|&v| self.slots(v)).sum()
    }
}

/// One auxiliary variable and the law of its residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxiliaryVariable {
    pub obs_index: usize,
    /// 0-based slot within the observation.
    pub slot: usize,
    pub y_star: f64,
    pub shape: NlgShape,
}

fn check_rate(lambda: f64, zeta: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("intensity must be positive and finite, got {lambda}")));
    }
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(domain(format!("exponential draw must be positive and finite, got {zeta}")));
    }
    Ok(())
}

/// AMS kernel: `-ln` of the `y + 1` inter-arrival times given the sorted
/// arrival times `uniforms` and the exponential draw `zeta` that places the
/// first arrival after time 1.
pub fn ams_augment_det(y: u64, lambda: f64, uniforms: &[f64], zeta: f64) -> Result<Vec<f64>> {
    check_rate(lambda, zeta)?;
    if uniforms.len() as u64 != y {
        return Err(contract(format!("expected {y} arrival times, got {}", uniforms.len())));
    }
    let mut out = Vec::with_capacity(uniforms.len() + 1);
    let mut previous = 0.0;
    for &u in uniforms {
        if !(u > previous && u < 1.0) {
            return Err(contract("arrival times must be strictly increasing inside (0, 1)"));
        }
        out.push(-(u - previous).ln());
        previous = u;
    }
    out.push(-(1.0 - previous + zeta / lambda).ln());
    Ok(out)
}

/// IAMS kernel. For `y = 0` only the first slot exists:
/// `tau_1 = 1 + zeta / lambda`. Otherwise `tau_2 = beta_draw` (the `y`-th
/// arrival time, a Beta(y, 1) variate) and `tau_1 = 1 - tau_2 + zeta / lambda`.
pub fn iams_augment_det(y: u64, lambda: f64, beta_draw: Option<f64>, zeta: f64) -> Result<(f64, Option<f64>)> {
    check_rate(lambda, zeta)?;
    if y == 0 {
        return Ok((-(1.0 + zeta / lambda).ln(), None));
    }
    let tau2 = beta_draw.ok_or_else(|| contract("a positive count needs its Beta(y, 1) arrival time"))?;
    if !(tau2 > 0.0 && tau2 < 1.0) {
        return Err(domain(format!("arrival time must lie in (0, 1), got {tau2}")));
    }
    Ok((-(1.0 - tau2 + zeta / lambda).ln(), Some(-tau2.ln())))
}

/// Beta(y, 1) from one uniform: `u^{1/y}`.
#[inline]
pub fn beta_y1_from_uniform(u: f64, y: u64) -> f64 {
    u.powf(1.0 / y as f64)
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws the auxiliary values of one observation into `out`
/// (length `scheme.slots(y)`).
pub fn augment_observation<R: Rng + ?Sized>(scheme: Scheme, y: u64, lambda: f64, rng: &mut R, out: &mut [f64]) {
    let zeta: f64 = rng.sample(Exp1);
    let tail = zeta / lambda;
    match scheme {
        Scheme::Iams => {
            if y == 0 {
                out[0] = -(1.0 + tail).ln();
            } else {
                let tau2 = beta_y1_from_uniform(open_uniform(rng), y);
                out[0] = -(1.0 - tau2 + tail).ln();
                out[1] = -tau2.ln();
            }
        }
        Scheme::Ams => {
            let n = y as usize;
            for v in out[..n].iter_mut() {
                *v = open_uniform(rng);
            }
            out[..n].sort_by(f64::total_cmp);
            let mut previous = 0.0;
            for v in out[..n].iter_mut() {
                let u = *v;
                // ties have probability zero; guard the logarithm anyway
                *v = -(u - previous).max(f64::MIN_POSITIVE).ln();
                previous = u;
            }
            out[n] = -(1.0 - previous + tail).ln();
        }
    }
}

/// Row-expanded layout of the augmented linear model.
///
/// Row `(i, j)` repeats observation `i`'s covariates; rows are ordered by
/// observation, then slot. The structure depends only on the counts, so it is
/// built once and the `y_star` values are refreshed every sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDesign {
    pub scheme: Scheme,
    /// Observation index of each row.
    pub obs: Vec<usize>,
    pub slot: Vec<usize>,
    pub shape: Vec<NlgShape>,
    /// `ln t_i` per row.
    pub log_offset: Vec<f64>,
    pub y_star: Vec<f64>,
    /// First row of each observation, plus a final end marker.
    pub row_start: Vec<usize>,
}

impl AugmentedDesign {
    pub fn new(scheme: Scheme, y: &[u64], offset: &[f64]) -> Result<Self> {
        if y.len() != offset.len() {
            return Err(contract("counts and offsets differ in length"));
        }
        let total = scheme.total(y);
        let mut obs = Vec::with_capacity(total);
        let mut slot = Vec::with_capacity(total);
        let mut shape = Vec::with_capacity(total);
        let mut log_offset = Vec::with_capacity(total);
        let mut row_start = Vec::with_capacity(y.len() + 1);
        for (i, (&yi, &ti)) in y.iter().zip(offset).enumerate() {
            if !(ti > 0.0) || !ti.is_finite() {
                return Err(domain(format!("offset {i} must be positive, got {ti}")));
            }
            row_start.push(obs.len());
            for j in 0..scheme.slots(yi) {
                obs.push(i);
                slot.push(j);
                shape.push(scheme.slot_shape(yi, j));
                log_offset.push(ti.ln());
            }
        }
        row_start.push(obs.len());
        Ok(Self { scheme, obs, slot, shape, log_offset, y_star: vec![0.0; total], row_start })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Redraws every auxiliary value given per-observation linear predictors
    /// `eta` (without offsets).
    pub fn augment<R: Rng + ?Sized>(&mut self, y: &[u64], eta: &[f64], rng: &mut R) {
        for (i, &yi) in y.iter().enumerate() {
            let (a, b) = (self.row_start[i], self.row_start[i + 1]);
            let lambda = (eta[i] + self.log_offset[a]).exp();
            augment_observation(self.scheme, yi, lambda, rng, &mut self.y_star[a..b]);
        }
    }

    /// `eps_row = y*_row - ln t_i - eta_i`.
    pub fn residuals_into(&self, eta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.y_star
                .iter()
                .zip(&self.obs)
                .zip(&self.log_offset)
                .map(|((&ys, &i), &lo)| ys - lo - eta[i]),
        );
    }

    pub fn variables(&self) -> Vec<AuxiliaryVariable> {
        (0..self.len())
            .map(|r| AuxiliaryVariable {
                obs_index: self.obs[r],
                slot: self.slot[r],
                y_star: self.y_star[r],
                shape: self.shape[r],
            })
            .collect()
    }

    /// Expands a per-observation matrix to one row per auxiliary variable.
    pub fn expand(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() + 1 != self.row_start.len() {
            return Err(contract(format!(
                "matrix has {} rows but the design covers {} observations",
                m.nrows(),
                self.row_start.len() - 1
            )));
        }
        Ok(DMatrix::from_fn(self.len(), m.ncols(), |r, c| m[(self.obs[r], c)]))
    }
}

/// Row-expanded model pieces for explicitly supplied auxiliary values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDesign {
    pub design: AugmentedDesign,
    pub x_star: DMatrix<f64>,
    pub z_star: Vec<DMatrix<f64>>,
}

/// Stacks per-observation auxiliary lists into the augmented regression.
pub fn flatten_augmented(model: &crate::model::PoissonLgm, scheme: Scheme, aux: &[Vec<f64>]) -> Result<FlatDesign> {
    let y = model.y();
    if aux.len() != y.len() {
        return Err(contract(format!("{} auxiliary lists for {} observations", aux.len(), y.len())));
    }
    let mut design = AugmentedDesign::new(scheme, y, model.offset())?;
    for (i, (list, &yi)) in aux.iter().zip(y).enumerate() {
        if list.len() != scheme.slots(yi) {
            return Err(contract(format!(
                "observation {i} needs {} auxiliary values, got {}",
                scheme.slots(yi),
                list.len()
            )));
        }
        design.y_star[design.row_start[i]..design.row_start[i + 1]].copy_from_slice(list);
    }
    let x_star = design.expand(model.x())?;
    let z_star = model.blocks().iter().map(|b| design.expand(&b.z)).collect::<Result<Vec<_>>>()?;
    Ok(FlatDesign { design, x_star, z_star })
}
