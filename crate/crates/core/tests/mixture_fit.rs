use auxmix::mixture::*;
use auxmix::nlg::{self, NlgShape};

fn max_abs_gap(mix: &GaussianMixture, lo: f64, hi: f64, points: usize) -> f64 {
    let shape = mix.target();
    (0..=points)
        .map(|k| lo + (hi - lo) * k as f64 / points as f64)
        .map(|u| (nlg::log_density(u, shape).unwrap() - mix.ln_pdf(u)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn unit_shape_fit_is_accurate_on_an_independent_grid() {
    let shape = NlgShape::unit();
    let fit = fit_mixture(shape, 10, &FitConfig::default()).unwrap();
    let lo = nlg::quantile(0.005, shape).unwrap();
    let hi = nlg::quantile(0.995, shape).unwrap();
    // a grid unrelated to the certification grid
    let err = max_abs_gap(&fit.mixture, lo, hi, 9_973);
    assert!(err <= 0.05, "central error {err}");
    assert!((err - fit.report.central_error).abs() < 1e-3);
    let weights: f64 = fit.mixture.components().iter().map(|c| c.weight).sum();
    assert!((weights - 1.0).abs() < 1e-12);
}

#[test]
fn fits_are_deterministic() {
    let shape = NlgShape::new(7.0).unwrap();
    let cfg = FitConfig::default();
    let a = fit_mixture(shape, 10, &cfg).unwrap();
    let b = fit_mixture(shape, 10, &cfg).unwrap();
    assert_eq!(a.mixture, b.mixture);
}

#[test]
fn huge_shape_uses_the_moment_matched_gaussian() {
    let shape = NlgShape::new(1e5).unwrap();
    let law = MixtureBank::shared().get(shape).unwrap();
    assert_eq!(law.mixture.len(), 1);
    let (mean, var) = nlg::moments(shape);
    let c = law.mixture.components()[0];
    assert!((c.mean - mean).abs() < 1e-12 && (c.variance - var).abs() < 1e-15);
    let lo = nlg::quantile(0.005, shape).unwrap();
    let hi = nlg::quantile(0.995, shape).unwrap();
    assert!(max_abs_gap(&law.mixture, lo, hi, 4000) <= 0.05);
}

#[test]
fn single_component_fit_matches_moment_matching() {
    let cfg = FitConfig::default();
    for nu in [1.0, 4.0] {
        let shape = NlgShape::new(nu).unwrap();
        let fitted = fit_mixture(shape, 1, &cfg).unwrap();
        let mm = assess(&moment_matched(shape), &cfg).unwrap();
        // moment matching minimizes KL(f || g) over Gaussians; the grid is truncated
        assert!(fitted.report.kl <= mm.kl + 1e-8, "nu {nu}: {} vs {}", fitted.report.kl, mm.kl);
        assert!(fitted.report.kl >= mm.kl - 1e-3);
    }
}

#[test]
fn thresholds_straddle_the_mode_and_sit_on_the_unit_gap() {
    let bank = MixtureBank::shared();
    for nu in [1.0, 3.0, 12.0] {
        let shape = NlgShape::new(nu).unwrap();
        let law = bank.get(shape).unwrap();
        let t = law.thresholds;
        assert!(!t.upper_open && !t.lower_open, "nu {nu}: {t:?}");
        assert!(t.xi_lower < shape.mode() && shape.mode() < t.xi_upper);
        for xi in [t.xi_lower, t.xi_upper] {
            assert!((log_gap(&law.mixture, xi).abs() - 1.0).abs() <= 1e-3);
        }
        if nu == 1.0 {
            assert!(t.xi_upper > nlg::quantile(0.999, shape).unwrap());
        }
        // nothing closer to the mode crosses
        for k in 1..400 {
            let u = shape.mode() + (t.xi_upper - shape.mode()) * k as f64 / 400.0;
            assert!(log_gap(&law.mixture, u).abs() <= 1.0 + 1e-3);
            let v = shape.mode() + (t.xi_lower - shape.mode()) * k as f64 / 400.0;
            assert!(log_gap(&law.mixture, v).abs() <= 1.0 + 1e-3);
        }
    }
}

#[test]
fn fitted_log_density_is_finite_far_out() {
    let bank = MixtureBank::shared();
    for nu in [1.0, 2.0, 50.0, 500.0] {
        let shape = NlgShape::new(nu).unwrap();
        let law = bank.get(shape).unwrap();
        let lo = nlg::quantile(1e-12, shape).unwrap();
        let hi = nlg::upper_quantile(1e-12, shape).unwrap();
        for k in 0..=1000 {
            let u = lo + (hi - lo) * k as f64 / 1000.0;
            assert!(law.mixture.ln_pdf(u).is_finite(), "nu {nu} u {u}");
        }
    }
}

#[test]
fn adjusted_mixture_properties() {
    let bank = MixtureBank::shared();
    for nu in 1..=10 {
        let shape = NlgShape::new(nu as f64).unwrap();
        let law = bank.get(shape).unwrap();
        let adj = law.adjusted().unwrap();
        assert!(adj.is_adjusted());
        assert_eq!(adj.len(), law.mixture.len() + TAIL_COMPONENTS);
        assert_eq!(adj.base_len(), law.mixture.len());
        let weights: f64 = adj.components().iter().map(|c| c.weight).sum();
        assert!((weights - 1.0).abs() < 1e-12);
        assert!(adj.tail_weight() < 0.01, "nu {nu}: tail weight {}", adj.tail_weight());
        // the first added component sits on the upper cut-off
        assert_eq!(adj.components()[law.mixture.len()].mean, law.thresholds.xi_upper);
    }
    let shape = NlgShape::unit();
    let law = bank.get(shape).unwrap();
    let adj = law.adjusted().unwrap();
    let lo = nlg::quantile(0.025, shape).unwrap();
    let hi = nlg::quantile(0.975, shape).unwrap();
    let central = (0..=4000)
        .map(|k| lo + (hi - lo) * k as f64 / 4000.0)
        .map(|u| (adj.ln_pdf(u) - law.mixture.ln_pdf(u)).abs())
        .fold(0.0, f64::max);
    assert!(central <= 0.02, "central change {central}");
    let reach = 2.5 * nlg::upper_quantile(1e-16, shape).unwrap();
    assert!(max_abs_gap(adj, law.thresholds.xi_upper, reach, 8000) <= 1.0);
}

#[test]
fn bank_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mixtures.txt");
    let cfg = FitConfig::default();
    let shape = NlgShape::new(4.0).unwrap();
    let first = MixtureBank::with_cache(cfg.clone(), &path).unwrap();
    let fitted = first.get(shape).unwrap();
    assert!(path.exists());
    let second = MixtureBank::with_cache(cfg, &path).unwrap();
    assert_eq!(second.len(), 1);
    let cached = second.get(shape).unwrap();
    assert_eq!(cached.mixture, fitted.mixture);
    assert_eq!(cached.thresholds, fitted.thresholds);
}
