mod common;

use chrono::{Duration, NaiveDate};

use delaycast::design::{ModelSpec, Variant};
use delaycast::evaluate::{
    realized_targets, retrospective_flags, rolling_evaluation, write_report_csv, EvaluationEntry, FlagThreshold,
    NamedSpec, RollingOptions,
};
use delaycast::predict::Interval;
use delaycast::synth::{generate, Injection, ScenarioSpec};
use delaycast::triangle::{NegativePolicy, TargetKind};

fn variants() -> Vec<NamedSpec> {
    [Variant::DEFAULT, Variant::NoReNoAr].iter().map(|v| NamedSpec::new(v.name(), v.spec())).collect()
}

#[test]
fn one_entry_per_anchor_variant_and_target() {
    let sc = common::scenario(5, 70, 31);
    let anchors: Vec<NaiveDate> = [40, 47].iter().map(|&d| sc.spec.start_date + Duration::days(d)).collect();
    let report = rolling_evaluation(&sc.snapshots, &sc.frame, &variants(), &anchors, &RollingOptions::default()).unwrap();
    assert!(report.skipped.is_empty(), "{:?}", report.skipped);
    assert_eq!(report.entries.len(), 2 * 2 * 3);
    for v in variants() {
        for kind in TargetKind::ALL {
            assert_eq!(report.select(&v.name, kind).count(), 2);
        }
    }
    for e in &report.entries {
        assert_eq!(e.rpe.len(), sc.frame.len());
        assert!(e.coverage.is_none());
        assert!(e.marpe >= e.mrpe.abs() - 1e-12);
    }
}

#[test]
fn realized_targets_match_the_truth() {
    let sc = common::scenario(4, 60, 32);
    let anchor = sc.spec.start_date + Duration::days(35);
    let k = 7;
    let t = sc.row_of(anchor);
    let truth = &sc.truth;
    let cell = |row: i64, d: usize, r: usize| -> f64 {
        (0..truth.n_groups()).map(|g| truth.get(row, d, r, g).unwrap() as f64).sum()
    };
    for kind in TargetKind::ALL {
        let (on, got) = realized_targets(&sc.snapshots, &sc.frame, anchor, kind, k, 7, 21, NegativePolicy::Clamp).unwrap().unwrap();
        assert_eq!(on, anchor + Duration::days(kind.realization_lag(k, 7)));
        for r in 0..sc.frame.len() {
            let want: f64 = match kind {
                TargetKind::Nowcast => (t - k as i64..t).flat_map(|row| (1..=7).map(move |d| (row, d))).map(|(row, d)| cell(row, d, r)).sum(),
                TargetKind::Forecast => (1..=k as i64).flat_map(|i| (1..=7).map(move |d| (t + i - d as i64, d))).map(|(row, d)| cell(row, d, r)).sum(),
                TargetKind::Forenowcast => (t..t + k as i64).flat_map(|row| (1..=7).map(move |d| (row, d))).map(|(row, d)| cell(row, d, r)).sum(),
            };
            assert_eq!(got[r], want, "{kind:?} district {r}");
        }
    }
}

#[test]
fn anchors_too_close_to_the_end_are_skipped() {
    let sc = common::scenario(4, 60, 33);
    let last = sc.snapshots.last().unwrap().report_date;
    let anchor = last - Duration::days(10);
    let report = rolling_evaluation(&sc.snapshots, &sc.frame, &variants()[..1], &[anchor], &RollingOptions::default()).unwrap();
    assert_eq!(report.entries.len(), 2);
    assert_eq!(report.skipped.len(), 1);
    let s = &report.skipped[0];
    assert_eq!(s.kind, Some(TargetKind::Forenowcast));
    assert!(s.reason.contains("insufficient realization"));
}

#[test]
fn evaluation_never_reads_past_the_realization_date() {
    let sc = common::scenario(4, 70, 34);
    let anchor = sc.spec.start_date + Duration::days(40);
    let opts = RollingOptions { bootstrap_n: Some(50), ..Default::default() };
    let full = rolling_evaluation(&sc.snapshots, &sc.frame, &variants(), &[anchor], &opts).unwrap();
    let cut = sc.snapshots_until(anchor + Duration::days(14));
    let short = rolling_evaluation(cut, &sc.frame, &variants(), &[anchor], &opts).unwrap();
    assert_eq!(full.entries, short.entries);
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_report_csv(&mut a, &full).unwrap();
    write_report_csv(&mut b, &short).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("anchor,variant,kind,metric,value\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 3);
}

#[test]
fn injected_surge_is_flagged_as_outbreak() {
    let anchor_day = 45;
    let spec = ScenarioSpec {
        n_districts: 6,
        n_days: 70,
        injections: vec![Injection { district: 2, first_day: anchor_day, last_day: anchor_day + 6, factor: 5.0 }],
        ..Default::default()
    };
    let sc = generate(&spec, 35).unwrap();
    let anchor = spec.start_date + Duration::days(anchor_day as i64);
    let opts = RollingOptions { bootstrap_n: Some(200), kinds: vec![TargetKind::Forenowcast], ..Default::default() };
    let named = [NamedSpec::new("default", ModelSpec::default())];
    let report = rolling_evaluation(&sc.snapshots, &sc.frame, &named, &[anchor], &opts).unwrap();
    let entry = &report.entries[0];
    let flags = retrospective_flags(entry, FlagThreshold::Interval);
    assert!(flags[2].outbreak_signal && !flags[2].intervention_signal, "{:?}", entry.predicted[2]);
    let by_rpe = retrospective_flags(entry, FlagThreshold::Rpe { outbreak: 500.0, intervention: -500.0 });
    assert!(by_rpe[2].outbreak_signal);
    assert_eq!(by_rpe.iter().filter(|f| f.outbreak_signal).count(), 1, "{:?}", entry.rpe);
}

#[test]
fn flags_follow_the_threshold() {
    let iv = |lower, upper| Interval { point: (lower + upper) / 2.0, lower, upper };
    let entry = EvaluationEntry {
        anchor: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
        variant: "x".into(),
        kind: TargetKind::Nowcast,
        available_on: NaiveDate::from_ymd_opt(2021, 1, 11).unwrap(),
        realized: vec![5.0, 50.0, 20.0],
        predicted: vec![iv(10.0, 30.0), iv(10.0, 30.0), iv(10.0, 30.0)],
        rpe: vec![-15.0, 30.0, 0.0],
        marpe: 15.0,
        mrpe: 5.0,
        coverage: Some(1.0 / 3.0),
    };
    let f = retrospective_flags(&entry, FlagThreshold::Interval);
    assert_eq!(f.iter().map(|f| (f.outbreak_signal, f.intervention_signal)).collect::<Vec<_>>(), [(false, true), (true, false), (false, false)]);
    let f = retrospective_flags(&entry, FlagThreshold::Rpe { outbreak: 40.0, intervention: -10.0 });
    assert_eq!(f.iter().map(|f| (f.outbreak_signal, f.intervention_signal)).collect::<Vec<_>>(), [(false, true), (false, false), (false, false)]);
}
