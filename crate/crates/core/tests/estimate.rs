use chrono::Duration;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, NegativeBinomial};

use delaycast::design::{build_design, ModelMatrix, PenaltyBlock, Variant};
use delaycast::estimate::nb::{nb_logpmf, sample};
use delaycast::estimate::{
    fit, fit_matrix, nb_loglik, EstimateError, FitOptions, FittedModel, LambdaMode, ThetaMode,
};
use delaycast::synth::{generate, ScenarioSpec};
use delaycast::triangle::{cumulate, merge_snapshots, MergeOptions};

proptest! {
    #[test]
    fn logpmf_matches_statrs(y in 0u64..400, mu in 0.01f64..200.0, theta in 0.01f64..5.0) {
        let r = 1.0 / theta;
        let oracle = NegativeBinomial::new(r, r / (r + mu)).unwrap().ln_pmf(y);
        let got = nb_logpmf(y as f64, mu, theta);
        prop_assert!((got - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{} vs {}", got, oracle);
    }
}

#[test]
fn logpmf_tends_to_poisson() {
    for (y, mu) in [(0.0, 3.0), (4.0, 2.5), (17.0, 12.0), (250.0, 240.0)] {
        let poisson = y * f64::ln(mu) - mu - statrs::function::gamma::ln_gamma(y + 1.0);
        assert!((nb_logpmf(y, mu, 1e-10) - poisson).abs() < 1e-6, "y={y}");
    }
}

/// Plain Newton on `ll - beta' S beta / 2` with the observed Hessian.
fn penalized_newton(x: &DMatrix<f64>, y: &[f64], s: &DMatrix<f64>, theta: f64) -> DVector<f64> {
    let (n, p) = x.shape();
    let mut beta = DVector::zeros(p);
    beta[0] = (y.iter().sum::<f64>() / n as f64).max(0.1).ln();
    for _ in 0..100 {
        let eta = x * &beta;
        let mut g = -(s * &beta);
        let mut h = s.clone();
        for i in 0..n {
            let mu = eta[i].exp();
            let d = 1.0 + theta * mu;
            let xi = x.row(i).transpose();
            g += &xi * ((y[i] - mu) / d);
            h += &xi * xi.transpose() * (mu * (1.0 + theta * y[i]) / (d * d));
        }
        let step = h.cholesky().unwrap().solve(&g);
        beta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    beta
}

#[test]
fn fixed_smoothing_fit_matches_dense_newton() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, q) = (150, 6);
        let p = 2 + q;
        let x = DMatrix::from_fn(n, p, |i, j| match j {
            0 => 1.0,
            1 => rng.gen_range(-1.0..1.0),
            _ => f64::from(u8::from((i + j) % q == 0)),
        });
        let truth: Vec<f64> = (0..p).map(|j| if j == 0 { 1.2 } else { rng.gen_range(-0.6..0.6) }).collect();
        let theta = 0.3;
        let eta = &x * DVector::from_vec(truth);
        let y: Vec<f64> = eta.iter().map(|e| sample(&mut rng, e.exp(), theta) as f64).collect();
        let lambda = 2.5;
        let block = PenaltyBlock { start: 2, matrix: DMatrix::identity(q, q), rank: q };
        let opts = FitOptions {
            theta: ThetaMode::Fixed(theta),
            lambda: LambdaMode::Fixed(vec![lambda]),
            ..Default::default()
        };
        let m = fit_matrix(&ModelMatrix::from_dense(&x), &y, &vec![0.0; n], &[block], &opts).unwrap();
        let mut s = DMatrix::zeros(p, p);
        s.view_mut((2, 2), (q, q)).fill_diagonal(lambda);
        let oracle = penalized_newton(&x, &y, &s, theta);
        assert!((&m.beta - &oracle).amax() < 1e-7, "seed {seed}: {}", (&m.beta - &oracle).amax());
    }
}

#[test]
fn estimated_theta_maximizes_the_profile_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y: Vec<f64> = (0..400).map(|_| sample(&mut rng, 9.0, 0.5) as f64).collect();
    let x = DMatrix::from_element(y.len(), 1, 1.0);
    let m = fit_matrix(&ModelMatrix::from_dense(&x), &y, &vec![0.0; y.len()], &[], &FitOptions::default()).unwrap();
    let at = |t: f64| nb_loglik(&y, &m.mu, t);
    let best = at(m.theta);
    for f in [0.9, 0.99, 1.01, 1.1] {
        assert!(at(m.theta * f) < best, "factor {f}");
    }
    assert!((m.theta - 0.5).abs() < 0.15, "theta {}", m.theta);
}

#[test]
fn degenerate_inputs_are_reported() {
    let x = ModelMatrix::from_dense(&DMatrix::from_element(5, 1, 1.0));
    let opts = FitOptions::default();
    assert!(matches!(fit_matrix(&x, &[0.0; 5], &[0.0; 5], &[], &opts), Err(EstimateError::NoSignal)));
    assert!(matches!(
        fit_matrix(&x, &[1.0, 2.0, -1.0, 0.0, 3.0], &[0.0; 5], &[], &opts),
        Err(EstimateError::InvalidInput(_))
    ));
    assert!(matches!(fit_matrix(&x, &[1.0; 4], &[0.0; 4], &[], &opts), Err(EstimateError::InvalidInput(_))));
    let collinear = DMatrix::from_fn(6, 2, |_, _| 1.0);
    let err = fit_matrix(&ModelMatrix::from_dense(&collinear), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0], &[0.0; 6], &[], &opts);
    assert!(matches!(err, Err(EstimateError::RankDeficient(_))), "{err:?}");
}

fn fitted(seed: u64) -> FittedModel {
    let spec = ScenarioSpec { n_districts: 6, n_days: 60, ..Default::default() };
    let sc = generate(&spec, seed).unwrap();
    let anchor = spec.start_date + Duration::days(50);
    let mspec = Variant::Full.spec();
    let opts = MergeOptions { min_registration: Some(anchor - Duration::days(mspec.window_days as i64 + 1)), ..Default::default() };
    let (tri, _) = merge_snapshots(sc.snapshots_until(anchor), &sc.frame, &opts).unwrap();
    let design = build_design(&tri, &cumulate(&tri), &sc.frame, &mspec, anchor).unwrap();
    fit(&design, &FitOptions::default()).unwrap()
}

#[test]
fn model_fit_is_converged_and_deterministic() {
    let a = fitted(3);
    let b = fitted(3);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert!(a.diagnostics.converged);
    // score entries are sums over thousands of cells
    assert!(a.diagnostics.gradient_norm < 1e-3, "{}", a.diagnostics.gradient_norm);
    assert_eq!(a.coefficients.len(), a.column_names.len());
    assert!(a.smoothing.iter().all(|s| s.lambda > 0.0 && s.edf >= 0.0));
    assert!(a.theta > 0.0);
}

#[test]
fn model_json_round_trips_and_checks_version() {
    let m = fitted(4);
    let json = m.to_json().unwrap();
    assert_eq!(FittedModel::from_json(&json).unwrap(), m);
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["format_version"] = 99.into();
    let err = FittedModel::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, EstimateError::Version { found: 99 }));
    assert!(matches!(FittedModel::from_json("{"), Err(EstimateError::Json(_))));
}
