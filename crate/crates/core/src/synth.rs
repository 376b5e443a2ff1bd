//! Simulated surveillance archives with known parameters.
//!
//! Counts are drawn cell by cell in `(t, d)` order from the same mean
//! structure the model fits, so the AR covariates see realized history.
//! Snapshots are the cumulative-by-report-date projections of the truth.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::nb;
use crate::strata::{AgeGroup, District, DistrictId, Gender, Group, StratumFrame};
use crate::triangle::{CaseTriangle, Snapshot, SnapshotRecord, TriangleError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shape of the global log-scale time trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Stationary,
    /// Log-linear growth at `rate` per day until `plateau_day`, flat afterwards.
    GrowthPlateau { rate: f64, plateau_day: usize },
    /// A Gaussian bump of height `height` on the log scale.
    SecondWave { peak_day: usize, width: f64, height: f64 },
}

impl Regime {
    pub fn growth_plateau() -> Self {
        Regime::GrowthPlateau { rate: 0.04, plateau_day: 80 }
    }

    pub fn second_wave() -> Self {
        Regime::SecondWave { peak_day: 80, width: 15.0, height: 1.2 }
    }

    /// `s1(t)` for day index `t` (negative during burn-in).
    pub fn trend(&self, t: i64) -> f64 {
        match *self {
            Regime::Stationary => 0.0,
            Regime::GrowthPlateau { rate, plateau_day } => rate * (t.max(0).min(plateau_day as i64) - plateau_day as i64) as f64,
            Regime::SecondWave { peak_day, width, height } => {
                let z = (t as f64 - peak_day as f64) / width;
                height * (-0.5 * z * z).exp()
            }
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stationary" => Ok(Regime::Stationary),
            "growth_plateau" => Ok(Regime::growth_plateau()),
            "second_wave" => Ok(Regime::second_wave()),
            other => Err(format!("unknown regime '{other}'")),
        }
    }
}

/// Multiplies the mean of every cell registered in `first_day..=last_day`
/// in `district` by `factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub district: usize,
    pub first_day: usize,
    pub last_day: usize,
    pub factor: f64,
}

/// Generating values for every term of the mean model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub intercept: f64,
    /// Delay effects, `gamma[0]` for delay 1.
    pub gamma: Vec<f64>,
    /// Monday first.
    pub registration_weekday: [f64; 7],
    pub report_weekday: [f64; 7],
    pub age_effects: BTreeMap<AgeGroup, f64>,
    pub gender_m: f64,
    /// Amplitude of the smooth spatial surface.
    pub spatial_amplitude: f64,
    pub sigma_u0: f64,
    /// Standard deviation of the weekly district deviations.
    pub sigma_u1: f64,
    /// Week-to-week autocorrelation of those deviations.
    pub u1_autocorrelation: f64,
    pub phi: f64,
    pub delta: f64,
    pub theta: f64,
}

impl Default for TrueParameters {
    fn default() -> Self {
        Self {
            intercept: -9.6,
            gamma: vec![0.0, -0.4, -0.9, -1.4, -1.9, -2.4, -2.9],
            registration_weekday: [0.0, 0.05, 0.05, 0.0, -0.05, -0.3, -0.5],
            report_weekday: [0.0, 0.1, 0.05, 0.05, 0.0, -0.4, -0.6],
            age_effects: [(AgeGroup::A15To34, 0.2)].into_iter().collect(),
            gender_m: -0.05,
            spatial_amplitude: 0.3,
            sigma_u0: 0.3,
            sigma_u1: 0.15,
            u1_autocorrelation: 0.5,
            phi: 0.2,
            delta: 0.15,
            theta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_districts: usize,
    pub groups: Vec<Group>,
    pub n_days: usize,
    /// Simulated days discarded before `start_date`, so AR terms start warm.
    pub burn_in_days: usize,
    pub start_date: NaiveDate,
    pub d_max: usize,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    pub population_range: (u64, u64),
    /// Registration days covered by each snapshot, counting back from its report date.
    pub snapshot_history: usize,
    pub regime: Regime,
    pub injections: Vec<Injection>,
    pub params: TrueParameters,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_districts: 20,
            groups: vec![
                Group::new(AgeGroup::A15To34, Gender::F),
                Group::new(AgeGroup::A15To34, Gender::M),
                Group::new(AgeGroup::A35To59, Gender::F),
                Group::new(AgeGroup::A35To59, Gender::M),
            ],
            n_days: 120,
            burn_in_days: 21,
            start_date: NaiveDate::from_ymd_opt(2020, 9, 1).expect("valid date"),
            d_max: 7,
            lon_range: (6.0, 15.0),
            lat_range: (47.5, 55.0),
            population_range: (20_000, 200_000),
            snapshot_history: 14,
            regime: Regime::Stationary,
            injections: Vec::new(),
            params: TrueParameters::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidScenario(m));
        let p = &self.params;
        if self.n_districts < 2 {
            return fail("at least two districts are required".into());
        }
        if self.groups.is_empty() || self.n_days == 0 || self.d_max == 0 {
            return fail("groups, days and d_max must be non-empty".into());
        }
        if p.gamma.len() != self.d_max {
            return fail(format!("{} delay effects for d_max {}", p.gamma.len(), self.d_max));
        }
        if !(p.theta > 0.0) || p.gamma.iter().any(|g| !g.is_finite()) {
            return fail("theta must be positive and delay effects finite".into());
        }
        if self.snapshot_history < self.d_max {
            return fail("snapshot_history must cover d_max days".into());
        }
        if self.population_range.0 < 4 * self.groups.len() as u64 || self.population_range.1 < self.population_range.0 {
            return fail("population range too small".into());
        }
        for inj in &self.injections {
            if inj.district >= self.n_districts || inj.first_day > inj.last_day || !(inj.factor > 0.0) {
                return fail(format!("invalid injection {inj:?}"));
            }
        }
        Ok(())
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::days(self.n_days as i64 - 1)
    }
}

/// Generated archive plus everything needed to score against the truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub frame: StratumFrame,
    /// Complete triangle: all rows at all delays are observed.
    pub truth: CaseTriangle,
    /// One snapshot per report day from `start_date + 1` until the last
    /// row is fully reported.
    pub snapshots: Vec<Snapshot>,
    pub u0: Vec<f64>,
    /// Weekly deviations per district, indexed from the start of burn-in.
    pub u1: Vec<Vec<f64>>,
}

impl Scenario {
    /// Snapshots with report date up to and including `date`.
    pub fn snapshots_until(&self, date: NaiveDate) -> &[Snapshot] {
        let n = self.snapshots.partition_point(|s| s.report_date <= date);
        &self.snapshots[..n]
    }

    /// Truth as it would have been observed on analysis day `date`.
    pub fn observed_at(&self, date: NaiveDate) -> CaseTriangle {
        self.truth.truncated(date)
    }

    /// Truth row index of a date.
    pub fn row_of(&self, date: NaiveDate) -> i64 {
        self.truth.row_of(date)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn build_frame(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<StratumFrame, SynthError> {
    let n = spec.n_districts;
    // jittered grid so both axes have distinct values
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (lon0, lon1) = spec.lon_range;
    let (lat0, lat1) = spec.lat_range;
    let mut districts = Vec::with_capacity(n);
    for i in 0..n {
        let cx = (i % cols) as f64 + 0.5 + rng.gen_range(-0.35..0.35);
        let cy = (i / cols) as f64 + 0.5 + rng.gen_range(-0.35..0.35);
        let total = rng.gen_range(spec.population_range.0..=spec.population_range.1);
        let weights: Vec<f64> = spec.groups.iter().map(|_| rng.gen_range(0.8..1.2)).collect();
        let wsum: f64 = weights.iter().sum();
        let population = spec
            .groups
            .iter()
            .zip(&weights)
            .map(|(&g, w)| (g, ((total as f64) * w / wsum).round().max(1.0) as u64))
            .collect();
        districts.push(District {
            id: DistrictId::new(format!("D{:03}", i + 1)),
            name: format!("District {}", i + 1),
            lon: lon0 + (lon1 - lon0) * cx / cols as f64,
            lat: lat0 + (lat1 - lat0) * cy / rows as f64,
            population,
        });
    }
    Ok(StratumFrame::new(districts)?)
}

/// Simulates a scenario. Deterministic for a fixed seed.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = &spec.params;
    let frame = build_frame(spec, &mut rng)?;
    let n_groups = frame.groups().len();
    let n_slots = spec.n_districts * n_groups;
    let d_max = spec.d_max;
    let burn = spec.burn_in_days;
    let total_days = spec.n_days + burn;

    let u0: Vec<f64> = (0..spec.n_districts).map(|_| p.sigma_u0 * normal(&mut rng)).collect();
    let n_weeks = total_days.div_ceil(7) + 1;
    let rho = p.u1_autocorrelation;
    let u1: Vec<Vec<f64>> = (0..spec.n_districts)
        .map(|_| {
            let mut w = Vec::with_capacity(n_weeks);
            let mut v = p.sigma_u1 * normal(&mut rng);
            for _ in 0..n_weeks {
                w.push(v);
                v = rho * v + (1.0 - rho * rho).sqrt() * p.sigma_u1 * normal(&mut rng);
            }
            w
        })
        .collect();

    let (lon0, lon1) = spec.lon_range;
    let (lat0, lat1) = spec.lat_range;
    let spatial: Vec<f64> = frame
        .districts()
        .iter()
        .map(|d| {
            let x = (d.lon - lon0) / (lon1 - lon0);
            let y = (d.lat - lat0) / (lat1 - lat0);
            p.spatial_amplitude * ((std::f64::consts::PI * x).sin() * (1.5 * std::f64::consts::PI * y).cos())
        })
        .collect();
    let group_effect: Vec<f64> = frame
        .groups()
        .iter()
        .map(|g| p.age_effects.get(&g.age).copied().unwrap_or(0.0) + if g.gender == Gender::M { p.gender_m } else { 0.0 })
        .collect();
    let log_pop: Vec<f64> = (0..n_slots)
        .map(|s| (frame.population(s / n_groups, s % n_groups) as f64).ln())
        .collect();

    let origin = spec.start_date - Duration::days(burn as i64);
    // cum[t][d-1][slot]
    let mut cum = vec![0u64; total_days * d_max * n_slots];
    let mut counts = vec![0u64; spec.n_days * d_max * n_slots];
    for t in 0..total_days {
        let day = t as i64 - burn as i64;
        let date = origin + Duration::days(t as i64);
        let wd_reg = date.weekday().num_days_from_monday() as usize;
        let trend = spec.regime.trend(day);
        for d in 1..=d_max {
            let wd_rep = (date + Duration::days(d as i64)).weekday().num_days_from_monday() as usize;
            let base = p.intercept + trend + p.gamma[d - 1] + p.registration_weekday[wd_reg] + p.report_weekday[wd_rep];
            for slot in 0..n_slots {
                let r = slot / n_groups;
                let g = slot % n_groups;
                let prev = if t > 0 { cum[((t - 1) * d_max + d - 1) * n_slots + slot] } else { 0 };
                let same = if d > 1 { cum[(t * d_max + d - 2) * n_slots + slot] } else { 0 };
                let mut eta = base
                    + spatial[r]
                    + group_effect[g]
                    + u0[r]
                    + u1[r][t / 7]
                    + p.phi * (1.0 + prev as f64).ln()
                    + p.delta * (1.0 + same as f64).ln()
                    + log_pop[slot];
                if day >= 0 {
                    for inj in &spec.injections {
                        if inj.district == r && (inj.first_day as i64..=inj.last_day as i64).contains(&day) {
                            eta += inj.factor.ln();
                        }
                    }
                }
                let n = nb::sample(&mut rng, eta.exp(), p.theta);
                cum[(t * d_max + d - 1) * n_slots + slot] = same + n;
                if day >= 0 {
                    counts[(day as usize * d_max + d - 1) * n_slots + slot] = n;
                }
            }
        }
    }

    let truth = CaseTriangle::from_counts(
        spec.start_date,
        spec.n_days,
        (spec.n_days - 1 + d_max) as i64,
        d_max,
        spec.n_districts,
        frame.groups().to_vec(),
        counts,
    )?;

    let mut snapshots = Vec::new();
    for s in 1..=(spec.n_days - 1 + d_max) {
        let report = spec.start_date + Duration::days(s as i64);
        let mut records = Vec::new();
        let lo = s.saturating_sub(spec.snapshot_history);
        for t in lo..s.min(spec.n_days) {
            let reported = (s - t).min(d_max);
            let registration = spec.start_date + Duration::days(t as i64);
            for slot in 0..n_slots {
                let c: u64 = (1..=reported).map(|d| truth.slots_at(t, d)[slot]).sum();
                if c > 0 {
                    records.push(SnapshotRecord {
                        district: frame.district(slot / n_groups).id.clone(),
                        group: frame.groups()[slot % n_groups],
                        count: c,
                        registration_date: registration,
                        report_date: report,
                    });
                }
            }
        }
        snapshots.push(Snapshot { report_date: report, records });
    }

    Ok(Scenario { spec: spec.clone(), frame, truth, snapshots, u0, u1 })
}

/// Truth CSV keyed by `(registration_date, delay, district_id, age_group, gender)`.
pub fn write_truth_csv<W: Write>(writer: W, truth: &CaseTriangle, frame: &StratumFrame) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["registration_date", "delay", "district_id", "age_group", "gender", "count"])?;
    for t in 0..truth.n_rows() {
        let date = truth.date_of(t as i64).to_string();
        for d in 1..=truth.d_max() {
            if !truth.is_observed(t as i64, d) {
                continue;
            }
            for (slot, &c) in truth.slots_at(t, d).iter().enumerate() {
                let r = slot / truth.n_groups();
                let g = truth.groups()[slot % truth.n_groups()];
                w.write_record([
                    date.as_str(),
                    &d.to_string(),
                    frame.district(r).id.as_str(),
                    g.age.label(),
                    g.gender.label(),
                    &c.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid_and_deterministic() {
        let spec = ScenarioSpec { n_days: 30, ..Default::default() };
        let a = generate(&spec, 7).unwrap();
        let b = generate(&spec, 7).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.snapshots.len(), 30 - 1 + 7);
        let c = generate(&spec, 8).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn regimes_shape() {
        assert_eq!(Regime::Stationary.trend(50), 0.0);
        let g = Regime::growth_plateau();
        assert!(g.trend(10) < g.trend(40));
        assert_eq!(g.trend(90), g.trend(100));
        let w = Regime::second_wave();
        assert!(w.trend(80) > w.trend(40));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ScenarioSpec::default();
        spec.params.gamma.pop();
        assert!(spec.validate().is_err());
        let spec = ScenarioSpec { n_districts: 1, ..Default::default() };
        assert!(spec.validate().is_err());
    }
}
