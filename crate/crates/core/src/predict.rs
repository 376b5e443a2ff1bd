//! Filling the triangle: nowcasts, forecasts, forenowcasts and their
//! bootstrap intervals.
//!
//! Missing cells are visited by report-day diagonal `s = t + d`, so both AR
//! covariates of a cell only read cells that are observed or already filled.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{nb, FittedModel};
use crate::strata::StratumFrame;
use crate::triangle::{aggregate_target, target_cells, CaseTriangle, CellSource, TargetKind, TriangleError};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("model and triangle do not match: {0}")]
    Mismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    /// Conditional means propagated through the AR chain.
    Mean,
    /// One NB2 draw per cell from replicate stream `replicate` of `seed`.
    Sampled { seed: u64, replicate: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Observed,
    Predicted,
}

/// Triangle rows from one day before the estimation window to `T + k - 1`,
/// every delay filled.
#[derive(Debug, Clone, PartialEq)]
pub struct FilledTriangle {
    origin: NaiveDate,
    n_rows: usize,
    /// Local row of the analysis day `T`.
    anchor_row: i64,
    d_max: usize,
    n_groups: usize,
    n_slots: usize,
    values: Vec<f64>,
}

impl FilledTriangle {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn anchor(&self) -> NaiveDate {
        self.origin + Duration::days(self.anchor_row)
    }

    pub fn status(&self, date: NaiveDate, d: usize) -> CellStatus {
        if (date - self.origin).num_days() + d as i64 <= self.anchor_row {
            CellStatus::Observed
        } else {
            CellStatus::Predicted
        }
    }

    fn index(&self, t: usize, d: usize, slot: usize) -> usize {
        (t * self.d_max + d - 1) * self.n_slots + slot
    }

    /// Value at a registration date, delay and slot.
    pub fn value(&self, date: NaiveDate, d: usize, slot: usize) -> Option<f64> {
        let t = (date - self.origin).num_days();
        (t >= 0 && (t as usize) < self.n_rows && (1..=self.d_max).contains(&d))
            .then(|| self.values[self.index(t as usize, d, slot)])
    }
}

impl CellSource for FilledTriangle {
    fn origin(&self) -> NaiveDate {
        self.origin
    }

    fn d_max(&self) -> usize {
        self.d_max
    }

    fn n_groups(&self) -> usize {
        self.n_groups
    }

    fn cell(&self, t: i64, d: usize, r: usize, g: usize) -> Option<f64> {
        (t >= 0 && (t as usize) < self.n_rows && (1..=self.d_max).contains(&d))
            .then(|| self.values[self.index(t as usize, d, r * self.n_groups + g)])
    }
}

/// Precomputed fill order and AR-free linear predictors for one
/// (model, triangle, horizon) combination.
pub struct FillPlan {
    template: FilledTriangle,
    /// Prefix sums of the template along delays (missing cells hold 0).
    cum: Vec<f64>,
    /// Missing `(local row, delay)` in diagonal order.
    cells: Vec<(usize, usize)>,
    /// Static `eta` per missing cell and slot, aligned with `cells`.
    base: Vec<f64>,
    phi: f64,
    delta: f64,
    theta: f64,
}

impl FillPlan {
    pub fn new(model: &FittedModel, tri: &CaseTriangle, horizon: usize) -> Result<Self, PredictError> {
        let layout = &model.layout;
        let spec = &layout.spec;
        if tri.analysis_date() != layout.anchor {
            return Err(PredictError::Mismatch(format!(
                "model anchored at {} but triangle analysed at {}",
                layout.anchor,
                tri.analysis_date()
            )));
        }
        if tri.d_max() != spec.d_max || tri.n_districts() != layout.n_districts || tri.groups() != layout.groups.as_slice() {
            return Err(PredictError::Mismatch("strata or d_max differ".into()));
        }
        let d_max = spec.d_max;
        let n_groups = tri.n_groups();
        let n_slots = tri.n_slots();
        let lead = spec.window_days.max(horizon) as i64 + 1;
        let first = tri.analysis_row() - lead;
        let n_rows = (lead + horizon as i64) as usize;
        let anchor_row = lead;

        let mut values = vec![0.0; n_rows * d_max * n_slots];
        let mut cells = Vec::new();
        for t in 0..n_rows {
            for d in 1..=d_max {
                let tt = first + t as i64;
                if t as i64 + d as i64 <= anchor_row {
                    for slot in 0..n_slots {
                        let v = tri.get(tt, d, slot / n_groups, slot % n_groups).unwrap_or(0);
                        values[(t * d_max + d - 1) * n_slots + slot] = v as f64;
                    }
                } else {
                    cells.push((t, d));
                }
            }
        }
        cells.sort_by_key(|&(t, d)| (t + d, t));

        let origin = tri.date_of(first);
        let template = FilledTriangle { origin, n_rows, anchor_row, d_max, n_groups, n_slots, values };
        let mut cum = template.values.clone();
        for t in 0..n_rows {
            for d in 2..=d_max {
                for slot in 0..n_slots {
                    let i = template.index(t, d, slot);
                    cum[i] += cum[i - n_slots];
                }
            }
        }

        let mut base = Vec::with_capacity(cells.len() * n_slots);
        for &(t, d) in &cells {
            let date = origin + Duration::days(t as i64);
            for slot in 0..n_slots {
                let (r, g) = (slot / n_groups, slot % n_groups);
                if layout.log_population[slot].is_none() {
                    base.push(f64::NEG_INFINITY);
                    continue;
                }
                // AR covariates enter per draw; log(1 + 0) = 0 leaves them out here
                let row = layout.make_row(date, d, r, g, 0.0, 0.0, 0.0);
                base.push(model.linear_predictor(&row));
            }
        }
        Ok(Self { template, cum, cells, base, phi: model.phi(), delta: model.delta(), theta: model.theta })
    }

    /// Runs the diagonal recursion.
    pub fn fill(&self, mode: FillMode) -> FilledTriangle {
        let mut out = self.template.clone();
        let mut cum = self.cum.clone();
        let n_slots = out.n_slots;
        let mut rng = match mode {
            FillMode::Mean => None,
            FillMode::Sampled { seed, replicate } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(replicate);
                Some(rng)
            }
        };
        for (c, &(t, d)) in self.cells.iter().enumerate() {
            let here = out.index(t, d, 0);
            let prev_row = (t > 0).then(|| out.index(t - 1, d, 0));
            for slot in 0..n_slots {
                let mut eta = self.base[c * n_slots + slot];
                if eta == f64::NEG_INFINITY {
                    continue;
                }
                if self.phi != 0.0 {
                    if let Some(p) = prev_row {
                        eta += self.phi * cum[p + slot].ln_1p();
                    }
                }
                let same = if d > 1 { cum[here - n_slots + slot] } else { 0.0 };
                if self.delta != 0.0 {
                    eta += self.delta * same.ln_1p();
                }
                let mu = eta.exp();
                let v = match rng.as_mut() {
                    None => mu,
                    Some(rng) => nb::sample(rng, mu, self.theta) as f64,
                };
                out.values[here + slot] = v;
                cum[here + slot] = same + v;
            }
        }
        out
    }
}

/// Fills every missing cell of rows up to `T + horizon - 1`.
pub fn fill_cells(model: &FittedModel, tri: &CaseTriangle, horizon: usize, mode: FillMode) -> Result<FilledTriangle, PredictError> {
    Ok(FillPlan::new(model, tri, horizon)?.fill(mode))
}

/// Point prediction with its bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n - 1) p` on the sorted sample).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub k: usize,
    pub bootstrap_n: usize,
    pub level: f64,
    pub seed: u64,
    pub kinds: Vec<TargetKind>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { k: 7, bootstrap_n: 1000, level: 0.90, seed: 0, kinds: TargetKind::ALL.to_vec() }
    }
}

impl PredictOptions {
    fn validate(&self) -> Result<(), PredictError> {
        if self.bootstrap_n < 2 {
            return Err(PredictError::InvalidArgument("at least two bootstrap replicates are required".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(PredictError::InvalidArgument(format!("level {} outside (0, 1)", self.level)));
        }
        if self.k == 0 || self.kinds.is_empty() {
            return Err(PredictError::InvalidArgument("k and kinds must be non-empty".into()));
        }
        Ok(())
    }
}

/// Mean-filled triangle and per-district intervals for each requested target.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub anchor: NaiveDate,
    pub k: usize,
    pub level: f64,
    pub bootstrap_n: usize,
    pub seed: u64,
    pub filled: FilledTriangle,
    pub targets: BTreeMap<TargetKind, Vec<Interval>>,
}

impl PredictionSet {
    pub fn get(&self, kind: TargetKind) -> Option<&[Interval]> {
        self.targets.get(&kind).map(Vec::as_slice)
    }
}

fn aggregates<S: CellSource>(src: &S, anchor: NaiveDate, n_districts: usize, kinds: &[TargetKind], k: usize) -> Result<Vec<f64>, TriangleError> {
    let mut out = Vec::with_capacity(kinds.len() * n_districts);
    for &kind in kinds {
        for r in 0..n_districts {
            out.push(aggregate_target(src, anchor, r, kind, k)?);
        }
    }
    Ok(out)
}

/// Mean fill plus `bootstrap_n` sampled fills, all targets in one pass.
///
/// Replicate `b` draws from stream `b` of a ChaCha generator seeded with
/// `seed`, and results are collected in replicate order, so intervals do not
/// depend on the number of worker threads.
pub fn predict(model: &FittedModel, tri: &CaseTriangle, opts: &PredictOptions) -> Result<PredictionSet, PredictError> {
    opts.validate()?;
    let plan = FillPlan::new(model, tri, opts.k)?;
    let anchor = model.anchor();
    let n_districts = tri.n_districts();
    let filled = plan.fill(FillMode::Mean);
    let points = aggregates(&filled, anchor, n_districts, &opts.kinds, opts.k)?;

    let reps: Vec<Vec<f64>> = (0..opts.bootstrap_n as u64)
        .into_par_iter()
        .map(|b| {
            let sample = plan.fill(FillMode::Sampled { seed: opts.seed, replicate: b });
            aggregates(&sample, anchor, n_districts, &opts.kinds, opts.k)
        })
        .collect::<Result<_, _>>()?;

    let alpha = (1.0 - opts.level) / 2.0;
    let mut targets = BTreeMap::new();
    let mut column = vec![0.0; reps.len()];
    for (ki, &kind) in opts.kinds.iter().enumerate() {
        let mut per_district = Vec::with_capacity(n_districts);
        for r in 0..n_districts {
            let j = ki * n_districts + r;
            for (c, rep) in column.iter_mut().zip(&reps) {
                *c = rep[j];
            }
            column.sort_by(f64::total_cmp);
            per_district.push(Interval {
                point: points[j],
                lower: quantile_type7(&column, alpha),
                upper: quantile_type7(&column, 1.0 - alpha),
            });
        }
        targets.insert(kind, per_district);
    }
    Ok(PredictionSet {
        anchor,
        k: opts.k,
        level: opts.level,
        bootstrap_n: opts.bootstrap_n,
        seed: opts.seed,
        filled,
        targets,
    })
}

fn single(model: &FittedModel, tri: &CaseTriangle, kind: TargetKind, k: usize, n: usize, level: f64, seed: u64) -> Result<Vec<Interval>, PredictError> {
    let opts = PredictOptions { k, bootstrap_n: n, level, seed, kinds: vec![kind] };
    let mut set = predict(model, tri, &opts)?;
    Ok(set.targets.remove(&kind).unwrap_or_default())
}

/// Delay-corrected sums of the last `k` registration days per district.
pub fn nowcast(model: &FittedModel, tri: &CaseTriangle, k: usize, n: usize, level: f64, seed: u64) -> Result<Vec<Interval>, PredictError> {
    single(model, tri, TargetKind::Nowcast, k, n, level, seed)
}

/// Cases reported on the next `k` days per district.
pub fn forecast(model: &FittedModel, tri: &CaseTriangle, k: usize, n: usize, level: f64, seed: u64) -> Result<Vec<Interval>, PredictError> {
    single(model, tri, TargetKind::Forecast, k, n, level, seed)
}

/// Cases registered on the next `k` days per district, at every delay.
pub fn forenowcast(model: &FittedModel, tri: &CaseTriangle, k: usize, n: usize, level: f64, seed: u64) -> Result<Vec<Interval>, PredictError> {
    single(model, tri, TargetKind::Forenowcast, k, n, level, seed)
}

/// Bootstrap interval bounds only.
pub fn bootstrap_intervals(
    model: &FittedModel,
    tri: &CaseTriangle,
    kind: TargetKind,
    k: usize,
    n: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, PredictError> {
    Ok(single(model, tri, kind, k, n, level, seed)?.into_iter().map(|i| (i.lower, i.upper)).collect())
}

/// Cases per 100,000 inhabitants by district, plus the national value from
/// summed counts and populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incidence {
    pub per_district: Vec<f64>,
    pub national: f64,
}

pub fn incidence(counts: &[f64], frame: &StratumFrame) -> Incidence {
    let per_district = counts
        .iter()
        .enumerate()
        .map(|(r, c)| 1e5 * c / frame.total_population(r) as f64)
        .collect();
    let total_pop: u64 = (0..frame.len()).map(|r| frame.total_population(r)).sum();
    Incidence { per_district, national: 1e5 * counts.iter().sum::<f64>() / total_pop as f64 }
}

/// Incidence of the mean nowcast over the last `k` registration days.
pub fn seven_day_incidence(model: &FittedModel, tri: &CaseTriangle, frame: &StratumFrame, k: usize) -> Result<Incidence, PredictError> {
    let filled = fill_cells(model, tri, 0, FillMode::Mean)?;
    let counts = aggregates(&filled, model.anchor(), tri.n_districts(), &[TargetKind::Nowcast], k)?;
    Ok(incidence(&counts, frame))
}

/// Incidence from the cases already reported for the last `k` registration
/// days, without delay correction.
pub fn reported_incidence(tri: &CaseTriangle, frame: &StratumFrame, k: usize) -> Incidence {
    let t_row = tri.analysis_row();
    let counts: Vec<f64> = (0..tri.n_districts())
        .map(|r| {
            target_cells(TargetKind::Nowcast, t_row, k, tri.d_max())
                .into_iter()
                .flat_map(|(t, d)| (0..tri.n_groups()).map(move |g| (t, d, g)))
                .filter_map(|(t, d, g)| tri.get(t, d, r, g))
                .sum::<u64>() as f64
        })
        .collect();
    incidence(&counts, frame)
}

fn round2(v: f64) -> String {
    format!("{:.2}", (v * 100.0).round() / 100.0 + 0.0)
}

/// Predictions CSV with one row per district and target in `set`, plus
/// `incidence` rows (the nowcast scaled by 100,000 / population) on request.
pub fn write_predictions_csv<W: Write>(writer: W, set: &PredictionSet, frame: &StratumFrame, with_incidence: bool) -> Result<(), PredictError> {
    let nowcast = set.targets.get(&TargetKind::Nowcast);
    if with_incidence && nowcast.is_none() {
        return Err(PredictError::InvalidArgument("incidence rows need the nowcast target".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["district_id", "district_name", "kind", "point", "lower", "upper", "level", "anchor_date", "k"])?;
    let level = format!("{}", set.level);
    let anchor = set.anchor.to_string();
    let k = set.k.to_string();
    let mut emit = |r: usize, kind: &str, iv: &Interval| {
        let d = frame.district(r);
        w.write_record([
            d.id.as_str(),
            d.name.as_str(),
            kind,
            &round2(iv.point),
            &round2(iv.lower),
            &round2(iv.upper),
            &level,
            &anchor,
            &k,
        ])
    };
    for (kind, rows) in &set.targets {
        for (r, iv) in rows.iter().enumerate() {
            emit(r, kind.label(), iv)?;
        }
    }
    if let Some(rows) = nowcast.filter(|_| with_incidence) {
        for (r, iv) in rows.iter().enumerate() {
            let s = 1e5 / frame.total_population(r) as f64;
            emit(r, "incidence", &Interval { point: iv.point * s, lower: iv.lower * s, upper: iv.upper * s })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// GeoJSON points at district centroids with predictions as properties.
pub fn write_geojson<W: Write>(writer: W, set: &PredictionSet, frame: &StratumFrame) -> Result<(), PredictError> {
    let features: Vec<serde_json::Value> = (0..frame.len())
        .map(|r| {
            let d = frame.district(r);
            let mut props = serde_json::Map::new();
            props.insert("district_id".into(), d.id.as_str().into());
            props.insert("name".into(), d.name.as_str().into());
            for (kind, rows) in &set.targets {
                let iv = rows[r];
                props.insert(kind.label().into(), serde_json::json!({"point": iv.point, "lower": iv.lower, "upper": iv.upper}));
            }
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [d.lon, d.lat]},
                "properties": props,
            })
        })
        .collect();
    let doc = serde_json::json!({"type": "FeatureCollection", "features": features});
    serde_json::to_writer_pretty(writer, &doc)?;
    Ok(())
}
