mod common;

use std::f64::consts::E;

use common::small_ridge;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zovr_core::objectives::make_blackbox;
use zovr_core::theory::{
    c_sequence, certify, estimate_constants, step_settings, AnalysisSettings, CheckStatus, ConstantsSource,
    SmoothnessConstants,
};
use zovr_core::{make_ridge, Dataset, Error, SmoothingSchedule};

fn random_settings(rng: &mut ChaCha8Rng) -> AnalysisSettings {
    let dim = rng.random_range(1..=30);
    let components = rng.random_range(1..=2000);
    let l = rng.random_range(0.1..50.0);
    let tau = rng.random_range(0..=20);
    AnalysisSettings {
        dim,
        components,
        block: rng.random_range(1..=dim),
        batch: rng.random_range(1..=components.min(8)),
        tau,
        inner: rng.random_range(0..=300),
        epochs: rng.random_range(1..=20),
        alpha: rng.random_range(0.05..0.95),
        u0: rng.random_range(0.01..0.99),
        mu: (0..dim).map(|_| rng.random_range(0.0..0.1)).collect(),
        constants: SmoothnessConstants::analytic(l, l * rng.random_range(1.0..2.0), rng.random_range(1.0..3.0)),
        gamma: None,
    }
}

#[test]
fn potential_weights_are_monotone_on_random_feasible_settings() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 100 {
        let s = random_settings(&mut rng);
        if step_settings(&s).is_err() {
            continue;
        }
        let seq = c_sequence(&s).unwrap();
        assert_eq!(seq.c.len(), s.inner + 1);
        assert_eq!(*seq.c.last().unwrap(), 0.0);
        assert!(seq.c.iter().all(|&c| c >= 0.0));
        assert!(seq.c.windows(2).all(|w| w[0] >= w[1]), "{s:?}");
        if let Some(min) = seq.min_gamma() {
            assert_eq!(min, seq.gamma_t[0]);
        }
        checked += 1;
    }
}

#[test]
fn delay_free_constants_match_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let mut s = random_settings(&mut rng);
        s.tau = 0;
        let cert = certify(&s).unwrap();
        let k = s.constants;
        let (n, y, g) = (s.dim as f64, s.block as f64, cert.steps.gamma);
        let rho1 = 2.0 * k.l * y * y / (5.0 * n * n) * (E - 1.0);
        let rho2 = 4.0 * k.l_hat;
        let rho3 = 0.5 - rho1 * n * rho2 * g / y - k.l * y * rho2 * g / (2.0 * n);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(cert.rho1, rho1));
        assert!(close(cert.rho2, rho2));
        assert!(close(cert.rho3, rho3));
        assert!(close(cert.sigma, rho3 * s.u0));
        assert_eq!(cert.steps.delay_margin, y);
        assert!(close(g, s.u0 * s.batch as f64 / (k.l_tilde * (s.components as f64).powf(s.alpha))));
    }
}

#[test]
fn zero_radius_and_zero_delay_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = random_settings(&mut rng);
    s.tau = 0;
    s.mu = vec![0.0; s.dim];
    let cert = certify(&s).unwrap();
    assert_eq!(cert.omega, 0.0);
    for v in [cert.rho1, cert.rho2, cert.rho3, cert.sigma, cert.steps.theta, cert.steps.beta] {
        assert!(v.is_finite());
    }
    assert_eq!(cert.check("delay_margin_positive").unwrap().status, CheckStatus::Pass);
}

#[test]
fn step_beyond_delay_limit_is_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = random_settings(&mut rng);
    s.tau = 10;
    s.gamma = Some(s.gamma_limit() * 1.01);
    assert!(matches!(step_settings(&s), Err(Error::Infeasible(_))));
    assert!(matches!(certify(&s), Err(Error::Infeasible(_))));
    s.gamma = Some(s.gamma_limit() * 0.99);
    assert!(step_settings(&s).unwrap().delay_margin > 0.0);
}

#[test]
fn single_direction_quadratic_estimate() {
    let obj = make_ridge(Dataset::from_rows(&[vec![1.0, 0.0]], vec![0.0]).unwrap(), 0.0).unwrap();
    let mu = SmoothingSchedule::uniform(2, 0.1).unwrap();
    let est = estimate_constants(&obj, &mu, 1000, 0).unwrap();
    assert_eq!(est.analytic_l, Some(1.0));
    assert_eq!(est.trials, 1000);
    assert_eq!(est.constants.source, ConstantsSource::Empirical);
    assert!((0.9..=1.0 + 1e-12).contains(&est.constants.l), "{}", est.constants.l);
}

#[test]
fn quadratic_difference_field_has_the_same_constant() {
    let obj = small_ridge(15, 5, 4);
    for mu in [1e-3, 0.1, 2.0] {
        let est = estimate_constants(&obj, &SmoothingSchedule::uniform(5, mu).unwrap(), 50, 1).unwrap();
        let c = est.constants;
        assert!((c.l_tilde / c.l - 1.0).abs() <= 0.02, "mu = {mu}: {c:?}");
        assert!((c.l_hat - 1.0).abs() <= 1e-6);
        assert!(c.l <= est.analytic_l.unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn constant_objective_has_zero_constants() {
    let obj = make_blackbox(3, 4, |_, _| Ok(2.5));
    let est = estimate_constants(&obj, &SmoothingSchedule::uniform(3, 0.1).unwrap(), 10, 0).unwrap();
    assert_eq!(est.constants.l, 0.0);
    assert_eq!(est.constants.l_tilde, 0.0);
    assert_eq!(est.constants.l_hat, 0.0);
    assert_eq!(est.analytic_l, None);
}
