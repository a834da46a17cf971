use auxmix::augmentation::*;
use auxmix::nlg::{self, NlgShape};
use auxmix::stats::{ks_one_sample, ks_two_sample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

const KS_1PCT: f64 = 1.628;

#[test]
fn ams_first_slot_is_unit_nlg_over_the_generative_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reps = 100_000;
    for lambda in [0.3, 2.5, 9.0] {
        let pois = Poisson::new(lambda).unwrap();
        let mut first = Vec::with_capacity(reps);
        let mut out = vec![0.0; 64];
        for _ in 0..reps {
            let y = pois.sample(&mut rng) as u64;
            augment_observation(Scheme::Ams, y, lambda, &mut rng, &mut out[..y as usize + 1]);
            first.push(out[0] - lambda.ln());
        }
        let d = ks_one_sample(&first, |e| nlg::cdf(e, NlgShape::unit())).unwrap();
        assert!(d < KS_1PCT / (reps as f64).sqrt(), "lambda {lambda}: KS {d}");
    }
}

/// Arrivals of a rate-`lambda` process, redrawn until exactly `y` land in
/// [0, 1]; returns the `y`-th arrival time and the following gap.
fn direct_process(y: u64, lambda: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let gap = Exp::new(lambda).unwrap();
    loop {
        let mut t = 0.0;
        let mut count = 0;
        let mut last = 0.0;
        loop {
            t += gap.sample(rng);
            if t > 1.0 {
                break;
            }
            count += 1;
            last = t;
        }
        if count == y {
            return (last, t - last);
        }
    }
}

#[test]
fn iams_matches_a_directly_simulated_process() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 20_000;
    for (y, lambda) in [(1u64, 1.5), (5, 4.0), (20, 20.0)] {
        let mut ours = (Vec::with_capacity(m), Vec::with_capacity(m));
        let mut direct = (Vec::with_capacity(m), Vec::with_capacity(m));
        let mut out = [0.0; 2];
        for _ in 0..m {
            augment_observation(Scheme::Iams, y, lambda, &mut rng, &mut out);
            ours.0.push(out[0]);
            ours.1.push(out[1]);
            let (tau2, tau1) = direct_process(y, lambda, &mut rng);
            // tau_1 of the scheme runs from the y-th arrival to the next one
            direct.0.push(-tau1.ln());
            direct.1.push(-tau2.ln());
        }
        let crit = KS_1PCT * (2.0 / m as f64).sqrt();
        let d0 = ks_two_sample(&ours.0, &direct.0).unwrap();
        let d1 = ks_two_sample(&ours.1, &direct.1).unwrap();
        assert!(d0 < crit && d1 < crit, "y {y}: {d0} {d1} vs {crit}");
    }
}

#[test]
fn beta_from_uniform_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 50_000;
    for y in [1u64, 3, 17] {
        let draws: Vec<f64> = (0..n).map(|_| beta_y1_from_uniform(rng.random::<f64>(), y)).collect();
        let d = ks_one_sample(&draws, |t| t.clamp(0.0, 1.0).powi(y as i32)).unwrap();
        assert!(d < KS_1PCT / (n as f64).sqrt(), "y {y}: {d}");
    }
}

#[test]
fn kernels_agree_with_hand_computation() {
    let v = ams_augment_det(2, 2.0, &[0.25, 0.75], 1.0).unwrap();
    let expect = [-(0.25f64).ln(), -(0.5f64).ln(), -(0.25f64 + 0.5).ln()];
    for (a, b) in v.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    let (a, b) = iams_augment_det(3, 4.0, Some(0.5), 2.0).unwrap();
    assert!((a + (1.0f64).ln()).abs() < 1e-15);
    assert!((b.unwrap() + (0.5f64).ln()).abs() < 1e-15);
    assert!(ams_augment_det(2, 1.0, &[0.5], 1.0).is_err());
    assert!(iams_augment_det(1, 1.0, None, 1.0).is_err());
    assert!(iams_augment_det(0, -1.0, None, 1.0).is_err());
}

proptest! {
    #[test]
    fn auxiliary_counts(y in proptest::collection::vec(0u64..40, 1..60)) {
        let n = y.len();
        let n0 = y.iter().filter(|&&v| v == 0).count();
        let sum: u64 = y.iter().sum();
        prop_assert_eq!(Scheme::Ams.total(&y), n + sum as usize);
        prop_assert_eq!(Scheme::Iams.total(&y), 2 * n - n0);
        let offset = vec![1.0; n];
        for scheme in [Scheme::Ams, Scheme::Iams] {
            let d = AugmentedDesign::new(scheme, &y, &offset).unwrap();
            prop_assert_eq!(d.len(), scheme.total(&y));
            prop_assert_eq!(d.row_start.len(), n + 1);
            for (i, &yi) in y.iter().enumerate().take(n) {
                prop_assert_eq!(d.row_start[i + 1] - d.row_start[i], scheme.slots(yi));
            }
        }
    }

    #[test]
    fn augmented_values_are_finite(y in 0u64..60, lambda in 1e-3f64..1e3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for scheme in [Scheme::Ams, Scheme::Iams] {
            let mut out = vec![0.0; scheme.slots(y)];
            augment_observation(scheme, y, lambda, &mut rng, &mut out);
            prop_assert!(out.iter().all(|v| v.is_finite()));
            if scheme == Scheme::Iams && y > 0 {
                prop_assert!(out[1] > 0.0);
            }
        }
    }
}
