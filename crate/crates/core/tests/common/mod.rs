#![allow(dead_code)]

use chrono::{Duration, NaiveDate};

use delaycast::design::{build_design, Variant};
use delaycast::estimate::{fit, FitOptions, FittedModel};
use delaycast::synth::{generate, Scenario, ScenarioSpec};
use delaycast::triangle::{cumulate, merge_snapshots, CaseTriangle, MergeOptions};

pub fn scenario(n_districts: usize, n_days: usize, seed: u64) -> Scenario {
    let spec = ScenarioSpec { n_districts, n_days, ..Default::default() };
    generate(&spec, seed).unwrap()
}

/// Triangle known on `anchor`, rows from one day before the window.
pub fn known_at(sc: &Scenario, anchor: NaiveDate, window_days: usize) -> CaseTriangle {
    let opts = MergeOptions { min_registration: Some(anchor - Duration::days(window_days as i64 + 1)), ..Default::default() };
    merge_snapshots(sc.snapshots_until(anchor), &sc.frame, &opts).unwrap().0
}

pub fn fitted(sc: &Scenario, anchor: NaiveDate, variant: Variant) -> (CaseTriangle, FittedModel) {
    let spec = variant.spec();
    let tri = known_at(sc, anchor, spec.window_days);
    let design = build_design(&tri, &cumulate(&tri), &sc.frame, &spec, anchor).unwrap();
    let model = fit(&design, &FitOptions::default()).unwrap();
    (tri, model)
}
