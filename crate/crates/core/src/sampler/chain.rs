use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Algorithm, BlockAcceptance, ChainOutput, ResidualTrace, SamplerConfig, TailMonitor, Timings};
use crate::augmentation::{AugmentedDesign, Scheme};
use crate::conditional::{gaussian_full_conditional, other_blocks, sigma2_update, Block, Sigma2Walk};
use crate::error::Result;
use crate::mixture::MixtureBank;
use crate::model::{sample_labels, AugLaw, LatentState, PoissonLgm, ResidualLaws};

/// How coefficient proposals from the full conditionals are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Always accept (AMS, IAMS).
    Gibbs,
    /// Independence Metropolis-Hastings correction against the exact
    /// augmented likelihood; `law` is the approximation in the ratio.
    Mh { law: AugLaw },
}

/// Mutable per-chain bookkeeping shared by every sweep.
struct ChainCtx {
    walks: Vec<Sigma2Walk>,
    accepted: Vec<u64>,
    proposed: Vec<u64>,
    count_acceptance: bool,
    adapt: bool,
    label_fallbacks: u64,
    nonfinite: u64,
    residuals: Vec<f64>,
}

impl ChainCtx {
    fn new(model: &PoissonLgm) -> Self {
        let blocks = 1 + model.blocks().len();
        Self {
            walks: vec![Sigma2Walk::default(); model.blocks().len()],
            accepted: vec![0; blocks],
            proposed: vec![0; blocks],
            count_acceptance: false,
            adapt: true,
            label_fallbacks: 0,
            nonfinite: 0,
            residuals: Vec::new(),
        }
    }

    fn record(&mut self, slot: usize, accepted: bool) {
        if self.count_acceptance {
            self.proposed[slot] += 1;
            if accepted {
                self.accepted[slot] += 1;
            }
        }
    }
}

/// Sums of exact and approximate residual log-densities for the linear
/// predictor `eta`.
fn loglik_pair(design: &AugmentedDesign, laws: &ResidualLaws, eta: &[f64], law: AugLaw) -> (f64, f64) {
    let mut exact = 0.0;
    let mut approx = 0.0;
    for r in 0..design.len() {
        let e = design.y_star[r] - design.log_offset[r] - eta[design.obs[r]];
        let lf = laws.exact_log_density(r, e);
        exact += lf;
        approx += match law {
            AugLaw::Approximate => laws.mixture(r).ln_pdf(e),
            AugLaw::Exact | AugLaw::ExactDouble => lf,
        };
    }
    (exact, approx)
}

fn block_eta(model: &PoissonLgm, block: Block, value: &DVector<f64>, other: &[f64]) -> Vec<f64> {
    let m = match block {
        Block::Beta => model.x(),
        Block::Gamma(q) => &model.blocks()[q].z,
    };
    let part = m * value;
    other.iter().zip(part.iter()).map(|(a, b)| a + b).collect()
}

fn block_value(state: &LatentState, block: Block) -> &DVector<f64> {
    match block {
        Block::Beta => &state.beta,
        Block::Gamma(q) => &state.gamma[q],
    }
}

fn set_block(state: &mut LatentState, block: Block, value: DVector<f64>) {
    match block {
        Block::Beta => state.beta = value,
        Block::Gamma(q) => state.gamma[q] = value,
    }
}

/// Outcome of one Metropolis-Hastings block update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhOutcome {
    pub accepted: bool,
    pub log_ratio: f64,
}

/// Accepts `proposed` for `block` with probability
/// `min(1, L(prop) L_a(curr) / (L(curr) L_a(prop)))`, where `L` is the
/// exact augmented likelihood and `L_a` uses `law`. A non-finite ratio is a
/// rejection.
pub fn mh_accept_block<R: Rng + ?Sized>(
    block: Block,
    proposed: DVector<f64>,
    state: &mut LatentState,
    model: &PoissonLgm,
    laws: &ResidualLaws,
    law: AugLaw,
    rng: &mut R,
) -> MhOutcome {
    let other = other_blocks(model, state, block);
    let current_eta = block_eta(model, block, block_value(state, block), &other);
    let proposed_eta = block_eta(model, block, &proposed, &other);
    let (l_curr, la_curr) = loglik_pair(&state.design, laws, &current_eta, law);
    let (l_prop, la_prop) = loglik_pair(&state.design, laws, &proposed_eta, law);
    let log_ratio = match law {
        AugLaw::ExactDouble | AugLaw::Exact => 0.0,
        AugLaw::Approximate => (l_prop - l_curr) + (la_curr - la_prop),
    };
    if !log_ratio.is_finite() {
        log::warn!("non-finite acceptance ratio for {block:?}; rejecting");
        return MhOutcome { accepted: false, log_ratio };
    }
    let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accepted {
        set_block(state, block, proposed);
    }
    MhOutcome { accepted, log_ratio }
}

fn sweep<R: Rng + ?Sized>(
    state: &mut LatentState,
    model: &PoissonLgm,
    laws: &ResidualLaws,
    mode: SweepMode,
    monitor: Option<&mut TailMonitor>,
    ctx: &mut ChainCtx,
    rng: &mut R,
) -> Result<()> {
    // Step 1: auxiliary values
    let eta = model.linear_predictor(&state.beta, &state.gamma);
    state.design.augment(model.y(), &eta, rng);
    state.design.residuals_into(&eta, &mut ctx.residuals);
    if let Some(m) = monitor {
        m.observe(&ctx.residuals)?;
    }
    // Step 2: labels
    ctx.label_fallbacks += sample_labels(&ctx.residuals, laws, rng, &mut state.labels)? as u64;
    // Steps 3-4: coefficient blocks
    let blocks: Vec<Block> =
        std::iter::once(Block::Beta).chain((0..model.blocks().len()).map(Block::Gamma)).collect();
    for (slot, &block) in blocks.iter().enumerate() {
        let fc = gaussian_full_conditional(block, state, model, laws)?;
        let proposed = fc.sample(rng);
        let accepted = match mode {
            SweepMode::Gibbs => {
                set_block(state, block, proposed);
                true
            }
            SweepMode::Mh { law } => {
                let out = mh_accept_block(block, proposed, state, model, laws, law, rng);
                if !out.log_ratio.is_finite() {
                    ctx.nonfinite += 1;
                }
                out.accepted
            }
        };
        ctx.record(slot, accepted);
    }
    // Step 5: variances
    for (q, b) in model.blocks().iter().enumerate() {
        let quad = b.quadratic_form(&state.gamma[q]);
        state.sigma2[q] = sigma2_update(state.sigma2[q], quad, b.rank, &b.prior, &mut ctx.walks[q], ctx.adapt, rng)?;
    }
    Ok(())
}

/// One Gibbs sweep (Steps 1-5) with no rejection anywhere.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut LatentState,
    model: &PoissonLgm,
    laws: &ResidualLaws,
    rng: &mut R,
) -> Result<()> {
    let mut ctx = ChainCtx::new(model);
    ctx.adapt = false;
    sweep(state, model, laws, SweepMode::Gibbs, None, &mut ctx, rng)
}

/// Result of the training phase.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub chosen: Algorithm,
    pub monitor: TailMonitor,
    pub state: LatentState,
}

fn pretrain<R: Rng + ?Sized>(
    model: &PoissonLgm,
    config: &SamplerConfig,
    laws: &ResidualLaws,
    state: &mut LatentState,
    ctx: &mut ChainCtx,
    rng: &mut R,
) -> Result<(Algorithm, TailMonitor)> {
    let track_lower = config.algorithm == Algorithm::Auto;
    for _ in 0..config.t1 {
        sweep(state, model, laws, SweepMode::Gibbs, None, ctx, rng)?;
    }
    let mut monitor = TailMonitor::for_laws(laws, track_lower);
    for _ in 0..config.t2 {
        sweep(state, model, laws, SweepMode::Gibbs, Some(&mut monitor), ctx, rng)?;
    }
    let chosen = match config.algorithm {
        Algorithm::Auto => monitor.select(config.p_lower, config.p_upper),
        other => other,
    };
    Ok((chosen, monitor))
}

/// Runs the T1 IAMS warm-up and the T2 monitored iterations and selects the
/// algorithm for the rest of the chain. With `config.algorithm == Riams`
/// only upper excursions are tracked and RIAMS is kept.
pub fn automatic_pretrain<R: Rng + ?Sized>(
    model: &PoissonLgm,
    config: &SamplerConfig,
    laws: &ResidualLaws,
    mut state: LatentState,
    rng: &mut R,
) -> Result<Pretrained> {
    let mut ctx = ChainCtx::new(model);
    let (chosen, monitor) = pretrain(model, config, laws, &mut state, &mut ctx, rng)?;
    Ok(Pretrained { chosen, monitor, state })
}

/// Random stream of chain `chain` under `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Runs one chain with mixtures from `bank`.
pub fn run_chain(config: &SamplerConfig, model: &PoissonLgm, bank: &MixtureBank) -> Result<ChainOutput> {
    config.validate()?;
    let started = Instant::now();
    let mut rng = chain_rng(config.seed, config.chain);
    let scheme = if config.algorithm == Algorithm::Ams { Scheme::Ams } else { Scheme::Iams };
    let design = AugmentedDesign::new(scheme, model.y(), model.offset())?;
    let mut laws = ResidualLaws::for_design(&design, bank)?;
    let mut state = LatentState::initial(model, design)?;
    let mut ctx = ChainCtx::new(model);

    let mut used = config.algorithm;
    let mut monitor = None;
    let mut flagged = Vec::new();
    let mut first = 0;
    let mut training = std::time::Duration::ZERO;
    if config.algorithm.pretrains() {
        let (chosen, m) = pretrain(model, config, &laws, &mut state, &mut ctx, &mut rng)?;
        used = chosen;
        if chosen == Algorithm::Riams {
            for (r, on) in m.flags(config.p_upper).into_iter().enumerate() {
                if on {
                    laws.set_adjusted(r, true)?;
                    flagged.push((state.design.obs[r], state.design.slot[r]));
                }
            }
        }
        monitor = Some(m);
        first = config.t1 + config.t2;
        training = started.elapsed();
    }
    let mode = match used {
        Algorithm::Ams | Algorithm::Iams => SweepMode::Gibbs,
        Algorithm::MhIams | Algorithm::Riams => SweepMode::Mh { law: AugLaw::Approximate },
        Algorithm::Auto => unreachable!("selection resolves AUTO"),
    };

    let names = model.parameter_names();
    let mut draws = Vec::with_capacity(config.kept_rows() * names.len());
    let mut trace = config.residual_stride.map(|stride| ResidualTrace {
        stride,
        rows: (0..state.design.len()).map(|r| (state.design.obs[r], state.design.slot[r])).collect(),
        shapes: state.design.shape.iter().map(|s| s.nu()).collect(),
        residuals: Vec::new(),
        exact_loglik: Vec::new(),
        mixture_loglik: Vec::new(),
    });
    ctx.count_acceptance = true;
    let sampling_started = Instant::now();
    let mut kept = 0usize;
    for b in first..config.iterations {
        ctx.adapt = b < config.burn_in;
        sweep(&mut state, model, &laws, mode, None, &mut ctx, &mut rng)?;
        if config.keeps(b) {
            draws.extend(state.flatten());
            if let Some(t) = trace.as_mut() {
                if kept.is_multiple_of(t.stride) {
                    let eta = model.linear_predictor(&state.beta, &state.gamma);
                    let mut res = Vec::with_capacity(state.design.len());
                    state.design.residuals_into(&eta, &mut res);
                    let mut exact = 0.0;
                    let mut mix = 0.0;
                    for (r, &e) in res.iter().enumerate() {
                        exact += laws.exact_log_density(r, e);
                        mix += laws.law(r).mixture.ln_pdf(e);
                    }
                    t.exact_loglik.push(exact);
                    t.mixture_loglik.push(mix);
                    t.residuals.push(res);
                }
            }
            kept += 1;
        }
    }
    let sampling = sampling_started.elapsed();

    let mut block_names = vec!["beta".to_string()];
    block_names.extend((0..model.blocks().len()).map(|q| format!("gamma_{q}")));
    let acceptance = block_names
        .into_iter()
        .enumerate()
        .map(|(i, block)| BlockAcceptance { block, accepted: ctx.accepted[i], proposed: ctx.proposed[i] })
        .collect();
    let sigma2_acceptance = ctx
        .walks
        .iter()
        .enumerate()
        .map(|(q, w)| BlockAcceptance { block: format!("sigma2_{q}"), accepted: w.accepted, proposed: w.proposed })
        .collect();
    Ok(ChainOutput {
        requested: config.algorithm,
        used,
        chain: config.chain,
        rows: draws.len() / names.len(),
        names,
        draws,
        acceptance,
        sigma2_acceptance,
        monitor,
        flagged,
        timings: Timings {
            training,
            sampling,
            total: started.elapsed(),
            sampling_iterations: config.iterations - first,
        },
        trace,
        label_fallbacks: ctx.label_fallbacks,
        nonfinite_ratios: ctx.nonfinite,
    })
}

/// Runs `chains` chains on independent streams of `config.seed`,
/// concurrently when `workers > 1`.
pub fn run_chains(
    config: &SamplerConfig,
    model: &PoissonLgm,
    bank: &MixtureBank,
    chains: usize,
    workers: usize,
) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    // fit every shape up front so that chains only evaluate
    let design = AugmentedDesign::new(
        if config.algorithm == Algorithm::Ams { Scheme::Ams } else { Scheme::Iams },
        model.y(),
        model.offset(),
    )?;
    ResidualLaws::for_design(&design, bank)?;
    let configs: Vec<SamplerConfig> =
        (0..chains as u64).map(|c| SamplerConfig { chain: c, ..config.clone() }).collect();
    if workers <= 1 || chains <= 1 {
        return configs.iter().map(|c| run_chain(c, model, bank)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::error::Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| configs.par_iter().map(|c| run_chain(c, model, bank)).collect())
}
