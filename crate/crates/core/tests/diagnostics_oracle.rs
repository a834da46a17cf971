use auxmix::diagnostics::*;
use auxmix::mixture::MixtureBank;
use auxmix::model::{penalized_mode, PoissonLgm};
use auxmix::oracle::*;
use auxmix::sampler::{run_chain, Algorithm, SamplerConfig};
use auxmix::stats::{ks_one_sample, mean, quantile, variance};
use auxmix::toy::simulate_toy;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn traced(alg: Algorithm, model: &PoissonLgm) -> auxmix::sampler::ChainOutput {
    let cfg = SamplerConfig {
        algorithm: alg,
        iterations: 3000,
        burn_in: 1000,
        thinning: 2,
        seed: 1,
        residual_stride: Some(3),
        ..Default::default()
    };
    run_chain(&cfg, model, MixtureBank::shared()).unwrap()
}

#[test]
fn exact_law_has_no_gap_and_gaps_add_up() {
    let toy = simulate_toy(30, 1.2, 3).unwrap();
    let model = toy.omitted_model().unwrap();
    let bank = MixtureBank::shared();
    for alg in [Algorithm::Iams, Algorithm::Riams] {
        let out = traced(alg, &model);
        let trace = out.trace.as_ref().unwrap();
        // 1000 kept rows, every third one recorded
        assert_eq!(trace.residuals.len(), 334);
        let exact = delta_discrepancy(&out, DeltaLaw::Exact, bank).unwrap();
        assert!(exact.delta.iter().all(|&d| d == 0.0));
        let base = delta_discrepancy(&out, DeltaLaw::Mixture, bank).unwrap();
        assert!(base.nonfinite.iter().all(|&k| k == 0));
        let err = delta_additivity_error(&base, trace).unwrap();
        assert!(err <= 1e-8, "{alg}: relative error {err}");
    }
}

#[test]
fn misspecification_inflates_the_gap() {
    let bank = MixtureBank::shared();
    let worst = |c: f64| {
        let model = simulate_toy(30, c, 1).unwrap().omitted_model().unwrap();
        let out = traced(Algorithm::Iams, &model);
        delta_discrepancy(&out, DeltaLaw::Mixture, bank).unwrap().max_abs()
    };
    let (clean, bad) = (worst(0.0), worst(1.2));
    assert!(bad >= 5.0 * clean, "c = 1.2 gives {bad}, c = 0 gives {clean}");
}

#[test]
fn untraced_chain_is_a_usage_error() {
    let model = PoissonLgm::intercept_only(vec![1, 2], 10.0).unwrap();
    let cfg = SamplerConfig { iterations: 20, burn_in: 10, ..Default::default() };
    let out = run_chain(&cfg, &model, MixtureBank::shared()).unwrap();
    assert!(delta_discrepancy(&out, DeltaLaw::Mixture, MixtureBank::shared()).is_err());
}

fn small_intercept() -> PoissonLgm {
    PoissonLgm::intercept_only(vec![2, 0, 1, 4, 1, 3, 0, 2, 5, 1, 2, 1, 0, 3, 2, 1, 4, 2, 1, 2], 1000.0).unwrap()
}

#[test]
fn grid_mean_agrees_with_importance_sampling() {
    let model = small_intercept();
    let grid = grid_posterior_1d(&model, 0.0, 1000.0, 20_001).unwrap();
    let (centre, sd) = (grid.mode(), 2.0 * grid.sd());
    let proposal = Normal::new(centre, sd).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 1_000_000;
    let draws: Vec<f64> = (0..n).map(|_| proposal.sample(&mut rng)).collect();
    let log_w: Vec<f64> = draws
        .iter()
        .map(|&b| {
            let ln_q = -0.5 * ((b - centre) / sd).powi(2);
            let ln_lik: f64 = model.y().iter().map(|&y| y as f64 * b - b.exp()).sum();
            ln_lik - 0.5 * b * b / 1000.0 - ln_q
        })
        .collect();
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let sw: f64 = w.iter().sum();
    let est = w.iter().zip(&draws).map(|(w, x)| w * x).sum::<f64>() / sw;
    // delta-method standard error of the self-normalized estimator
    let se = (w.iter().zip(&draws).map(|(w, x)| (w * (x - est)).powi(2)).sum::<f64>()).sqrt() / sw;
    assert!((est - grid.mean()).abs() <= 4.0 * se, "IS {est} ± {se}, grid {}", grid.mean());
}

#[test]
fn rwmh_recovers_the_prior_without_data() {
    let v0 = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.25]);
    let model = PoissonLgm::new(vec![], None, DMatrix::zeros(0, 2), vec![], Some(v0)).unwrap();
    let cfg = RwmhConfig { iterations: 60_000, burn_in: 5_000, thinning: 1, seed: 2, chain: 0 };
    let chain = rwmh_reference(&model, &cfg).unwrap();
    assert!(!chain.warning);
    for (j, var) in [(0, 4.0), (1, 0.25)] {
        let col = chain.column(j);
        let ess = effective_sample_size(&col).unwrap().ess;
        let se_mean = (var / ess).sqrt();
        assert!(mean(&col).abs() <= 4.0 * se_mean, "column {j} mean {}", mean(&col));
        // variance of a normal sample estimate: 2 s^4 / ess
        let se_var = var * (2.0 / ess).sqrt();
        assert!((variance(&col) - var).abs() <= 4.0 * se_var, "column {j} variance {}", variance(&col));
    }
}

#[test]
fn rwmh_and_grid_agree() {
    let model = small_intercept();
    let grid = grid_posterior_1d(&model, 0.0, 1000.0, 20_001).unwrap();
    let cfg = RwmhConfig { iterations: 5_000 + 4 * 50_000, burn_in: 5_000, thinning: 4, seed: 3, chain: 0 };
    let chain = rwmh_reference(&model, &cfg).unwrap();
    assert_eq!(chain.rows, 50_000);
    let d = ks_one_sample(&chain.column(0), |x| grid.cdf_at(x)).unwrap();
    assert!(d <= 0.02, "KS {d}");
    let again = rwmh_reference(&model, &cfg).unwrap();
    assert_eq!(chain.draws, again.draws);
}

#[test]
fn toy_null_effect_is_covered() {
    // a 95% interval misses now and then; ask for coverage in most data sets
    let seeds = 10;
    let covered = (0..seeds)
        .filter(|&seed| {
            let model = simulate_toy(30, 0.0, 100 + seed).unwrap().full_model().unwrap();
            let cfg = RwmhConfig { iterations: 25_000, burn_in: 5_000, thinning: 2, seed, chain: 0 };
            let b2 = rwmh_reference(&model, &cfg).unwrap().column(2);
            quantile(&b2, 0.025).unwrap() < 0.0 && 0.0 < quantile(&b2, 0.975).unwrap()
        })
        .count();
    assert!(covered >= 8, "zero covered in {covered} of {seeds} data sets");
}

#[test]
fn omitted_covariate_leaves_large_pearson_residuals() {
    let seeds = 20;
    let hits = (0..seeds)
        .filter(|&seed| {
            let toy = simulate_toy(30, 1.2, seed).unwrap();
            let model = toy.omitted_model().unwrap();
            let (beta, _) = penalized_mode(&model).unwrap();
            (0..toy.len()).any(|i| {
                let mu = (beta[0] + beta[1] * toy.x1[i]).exp();
                (toy.y[i] as f64 - mu) / mu.sqrt() > 3.0
            })
        })
        .count();
    assert!(hits as f64 >= 0.9 * seeds as f64, "{hits} of {seeds} seeds");
}
