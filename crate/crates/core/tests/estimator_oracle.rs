mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scr_core::estimator::{Estimator, MultiplicityEvidence};
use scr_core::model::{DegreeDistribution, PriorForm, SystemConfig};

fn cfg(n: usize, p_a: f64) -> SystemConfig {
    SystemConfig::new(n, p_a, 1, 1, DegreeDistribution::constant(1).unwrap()).unwrap()
}

fn argmax(post: &[f64]) -> usize {
    let mut best = 0;
    for (n, &p) in post.iter().enumerate() {
        if p > post[best] {
            best = n;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn map_matches_exhaustive_posterior(
        population in 1usize..=50,
        p_a in 0.02f64..0.98,
        frac in 0.0f64..=1.0,
        slots in 0usize..12,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_true = (frac * population as f64).round() as usize;
        let pairs = common::draw_evidence(&mut rng, population, n_true, slots, population);
        let ev = MultiplicityEvidence::from_pairs(population, &pairs).unwrap();
        let post = common::exhaustive_posterior(population, p_a, &pairs);
        let oracle = argmax(&post);
        let got = Estimator::new(&cfg(population, p_a)).map_estimate(&ev, 0).n_hat;
        // equal, or an exact tie the oracle breaks the same way up to rounding
        prop_assert!(
            got == oracle || (post[got] - post[oracle]).abs() <= 1e-12 * post[oracle],
            "got {} oracle {} ({} vs {})", got, oracle, post[got], post[oracle]
        );
    }

    #[test]
    fn more_active_evidence_never_lowers_estimate(
        seed in any::<u64>(),
        d in 2usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let population = 500;
        let base = common::draw_evidence(&mut rng, population, 100, 15, 40);
        let a = rng.gen_range(0..d);
        let est = Estimator::new(&cfg(population, 0.2));
        let mut lo = MultiplicityEvidence::from_pairs(population, &base).unwrap();
        let mut hi = lo.clone();
        lo.admit(d, a).unwrap();
        hi.admit(d, a + 1).unwrap();
        prop_assert!(est.map_estimate(&hi, 0).n_hat >= est.map_estimate(&lo, 0).n_hat);
    }
}

#[test]
fn estimate_concentrates_with_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let est = Estimator::new(&cfg(1000, 0.2));
    let pairs = common::draw_evidence(&mut rng, 1000, 350, 400, 40);
    let ev = MultiplicityEvidence::from_pairs(1000, &pairs).unwrap();
    let n_hat = est.map_estimate(&ev, 0).n_hat as f64;
    assert!((n_hat - 350.0).abs() < 35.0, "n_hat = {n_hat}");
}

#[test]
fn poisson_prior_variant_matches_its_own_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let population = 40;
    let est = Estimator::with_prior(&cfg(population, 0.3), PriorForm::Poisson);
    for _ in 0..100 {
        let n_true = rng.gen_range(0..=population);
        let pairs = common::draw_evidence(&mut rng, population, n_true, 6, population);
        let ev = MultiplicityEvidence::from_pairs(population, &pairs).unwrap();
        let alpha: f64 = 0.3 * population as f64;
        let score = |n: usize| {
            let mut s = n as f64 * alpha.ln() - common::ln_fact(n);
            for &(d, a) in &pairs {
                s += common::ln_binom(n, a) + common::ln_binom(population - n, d - a);
            }
            s
        };
        let oracle = (0..=population).fold(0, |b, n| if score(n) > score(b) { n } else { b });
        let got = est.map_estimate(&ev, 0).n_hat;
        assert!(got == oracle || (score(got) - score(oracle)).abs() < 1e-9);
    }
}

/// The residual is the derivative of F under the Poisson prior, so its root
/// is compared with the Poisson-prior MAP.
#[test]
fn stationarity_sign_change_brackets_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let est = Estimator::with_prior(&cfg(1000, 0.2), PriorForm::Poisson);
    let mut hits = 0;
    for _ in 0..100 {
        let n_true = rng.gen_range(120..=280);
        let slots = rng.gen_range(5..=60);
        let pairs = common::draw_evidence(&mut rng, 1000, n_true, slots, 40);
        let ev = MultiplicityEvidence::from_pairs(1000, &pairs).unwrap();
        let n_hat = est.map_estimate(&ev, 0).n_hat;
        let before = est.stationarity_residual(n_hat - 1, &ev).unwrap();
        let after = est.stationarity_residual(n_hat + 1, &ev).unwrap();
        if before >= 0.0 && after <= 0.0 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "bracketed {hits}/100");
}

#[test]
fn residual_tracks_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let est = Estimator::with_prior(&cfg(1000, 0.2), PriorForm::Poisson);
    let pairs = common::draw_evidence(&mut rng, 1000, 200, 20, 40);
    let ev = MultiplicityEvidence::from_pairs(1000, &pairs).unwrap();
    for n in (50..=400).step_by(10) {
        let fd = (est.score(n + 1, &ev) - est.score(n - 1, &ev)) / 2.0;
        let r = est.stationarity_residual(n, &ev).unwrap();
        assert!((fd - r).abs() < 0.2, "n={n}: fd {fd} residual {r}");
    }
}

#[test]
fn calibration_two_hundred_slots() {
    let est = Estimator::new(&cfg(1000, 0.2));
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut within = 0;
    for _ in 0..1000 {
        let mut ev = MultiplicityEvidence::new(1000);
        for _ in 0..200 {
            let a = rand::seq::index::sample(&mut rng, 1000, 20)
                .into_iter()
                .filter(|&u| u < 200)
                .count();
            ev.admit(20, a).unwrap();
        }
        let n_hat = est.map_estimate(&ev, 0).n_hat as f64;
        if (n_hat - 200.0).abs() <= 30.0 {
            within += 1;
        }
    }
    assert!(within >= 900, "{within}/1000 within 15%");
}
