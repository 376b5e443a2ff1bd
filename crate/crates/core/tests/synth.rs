use std::collections::HashMap;

use chrono::Duration;

use delaycast::synth::{generate, Injection, Regime, ScenarioSpec, SynthError, TrueParameters};
use delaycast::triangle::{merge_snapshots, MergeOptions};

#[test]
fn merged_archive_reproduces_the_truth() {
    let spec = ScenarioSpec { n_districts: 5, n_days: 40, ..Default::default() };
    let sc = generate(&spec, 41).unwrap();
    let (tri, report) = merge_snapshots(&sc.snapshots, &sc.frame, &MergeOptions::default()).unwrap();
    assert_eq!(report.negative_increments, 0);
    for t in 0..spec.n_days as i64 {
        let date = spec.start_date + Duration::days(t);
        let tt = tri.row_of(date);
        for d in 1..=spec.d_max {
            for r in 0..spec.n_districts {
                for g in 0..spec.groups.len() {
                    assert_eq!(tri.get(tt, d, r, g), sc.truth.get(t, d, r, g), "{date} d={d}");
                }
            }
        }
    }
}

#[test]
fn snapshots_are_cumulative_in_report_date() {
    let spec = ScenarioSpec { n_districts: 3, n_days: 30, ..Default::default() };
    let sc = generate(&spec, 42).unwrap();
    let mut last: HashMap<_, (u64, chrono::NaiveDate)> = HashMap::new();
    for s in &sc.snapshots {
        for rec in &s.records {
            assert!(rec.registration_date < s.report_date);
            let key = (rec.registration_date, rec.district.clone(), rec.group);
            if let Some(&(prev, _)) = last.get(&key) {
                assert!(rec.count >= prev);
            }
            let t = sc.row_of(rec.registration_date);
            let r = sc.frame.district_index(&rec.district).unwrap();
            let g = sc.frame.group_index(rec.group).unwrap();
            let known = ((s.report_date - rec.registration_date).num_days() as usize).min(spec.d_max);
            let want: u64 = (1..=known).map(|d| sc.truth.get(t, d, r, g).unwrap()).sum();
            assert_eq!(rec.count, want);
            last.insert(key, (rec.count, s.report_date));
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let spec = ScenarioSpec { n_districts: 3, n_days: 20, ..Default::default() };
    let a = generate(&spec, 7).unwrap();
    assert_eq!(a.truth, generate(&spec, 7).unwrap().truth);
    assert_ne!(a.truth, generate(&spec, 8).unwrap().truth);
}

fn plain_params() -> TrueParameters {
    TrueParameters { phi: 0.0, delta: 0.0, sigma_u0: 0.0, sigma_u1: 0.0, spatial_amplitude: 0.0, ..Default::default() }
}

/// With AR terms and random effects off, the cell means are closed form.
#[test]
fn poisson_limit_totals_match_the_closed_form_mean() {
    let spec = ScenarioSpec { n_districts: 6, n_days: 60, params: TrueParameters { theta: 1e-8, ..plain_params() }, ..Default::default() };
    let sc = generate(&spec, 43).unwrap();
    let p = &spec.params;
    let mut expected = 0.0;
    let mut observed = 0.0;
    for t in 0..spec.n_days as i64 {
        let date = spec.start_date + Duration::days(t);
        for d in 1..=spec.d_max {
            let wd = |x: chrono::NaiveDate| chrono::Datelike::weekday(&x).num_days_from_monday() as usize;
            let base = p.intercept + p.gamma[d - 1] + p.registration_weekday[wd(date)] + p.report_weekday[wd(date + Duration::days(d as i64))];
            for r in 0..spec.n_districts {
                for (g, group) in spec.groups.iter().enumerate() {
                    let effect = p.age_effects.get(&group.age).copied().unwrap_or(0.0)
                        + if group.gender == delaycast::strata::Gender::M { p.gender_m } else { 0.0 };
                    expected += (base + effect + (sc.frame.population(r, g) as f64).ln()).exp();
                    observed += sc.truth.get(t, d, r, g).unwrap() as f64;
                }
            }
        }
    }
    assert!((observed - expected).abs() < 4.0 * expected.sqrt(), "{observed} vs {expected}");
}

#[test]
fn injection_scales_the_affected_counts() {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let base = ScenarioSpec { n_districts: 4, n_days: 50, params: plain_params(), ..Default::default() };
        let inj = ScenarioSpec {
            injections: vec![Injection { district: 1, first_day: 20, last_day: 33, factor: 5.0 }],
            ..base.clone()
        };
        let total = |spec: &ScenarioSpec| -> f64 {
            let sc = generate(spec, 100 + seed).unwrap();
            (20..=33)
                .flat_map(|t| (1..=7).flat_map(move |d| (0..4).map(move |g| (t, d, g))))
                .map(|(t, d, g)| sc.truth.get(t, d, 1, g).unwrap() as f64)
                .sum()
        };
        ratios.push(total(&inj) / total(&base));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((4.0..=6.0).contains(&mean), "{ratios:?}");
}

#[test]
fn regimes_have_the_documented_shape() {
    assert!((0..200).all(|t| Regime::Stationary.trend(t) == 0.0));
    let Regime::GrowthPlateau { rate, plateau_day } = Regime::growth_plateau() else { unreachable!() };
    let g = Regime::growth_plateau();
    for t in 0..plateau_day as i64 {
        assert!((g.trend(t + 1) - g.trend(t) - rate).abs() < 1e-12);
    }
    assert_eq!(g.trend(plateau_day as i64 + 30), g.trend(plateau_day as i64));
    let w = Regime::second_wave();
    let Regime::SecondWave { peak_day, height, .. } = w else { unreachable!() };
    assert_eq!(w.trend(peak_day as i64), height);
    assert!(w.trend(peak_day as i64 - 20) < height && w.trend(peak_day as i64 + 20) < height);
    assert_eq!("second_wave".parse::<Regime>().unwrap(), w);
    assert!("plateau".parse::<Regime>().is_err());
}

#[test]
fn stationary_counts_show_no_trend() {
    let spec = ScenarioSpec { n_districts: 10, n_days: 120, params: TrueParameters { sigma_u1: 0.0, ..Default::default() }, ..Default::default() };
    let sc = generate(&spec, 44).unwrap();
    let daily: Vec<f64> = (0..spec.n_days as i64).map(|t| sc.truth.row_totals(t as usize).iter().sum::<u64>() as f64).collect();
    // weekly totals remove the weekday pattern
    let weeks: Vec<f64> = daily.chunks_exact(7).map(|w| w.iter().sum::<f64>().ln()).collect();
    let n = weeks.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = weeks.iter().sum::<f64>() / n;
    let slope = weeks.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum::<f64>()
        / weeks.iter().enumerate().map(|(i, _)| (i as f64 - xm).powi(2)).sum::<f64>();
    assert!(slope.abs() < 0.01, "log weekly slope {slope}");
}

#[test]
fn invalid_scenarios_are_rejected() {
    let bad = [
        ScenarioSpec { n_districts: 1, ..Default::default() },
        ScenarioSpec { d_max: 5, ..Default::default() },
        ScenarioSpec { snapshot_history: 3, ..Default::default() },
        ScenarioSpec { injections: vec![Injection { district: 99, first_day: 0, last_day: 1, factor: 2.0 }], ..Default::default() },
    ];
    for s in bad {
        assert!(matches!(generate(&s, 0), Err(SynthError::InvalidScenario(_))));
    }
}
