//! Retrospective scoring of weekly targets against later snapshots.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{build_design, DesignError, ModelSpec};
use crate::estimate::{fit, EstimateError, FitOptions};
use crate::predict::{predict, Interval, PredictError, PredictOptions};
use crate::strata::StratumFrame;
use crate::triangle::{aggregate_target, cumulate, merge_snapshots, MergeOptions, NegativePolicy, Snapshot, TargetKind, TriangleError};

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("district {0} has zero population")]
    ZeroPopulation(usize),
    #[error("no snapshots before anchor {0}")]
    NoData(NaiveDate),
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `100000 (Y - Y_hat) / pop`; positive when the model underpredicts.
pub fn rpe(realized: f64, predicted: f64, pop: u64) -> Result<f64, EvaluateError> {
    if pop == 0 {
        return Err(EvaluateError::ZeroPopulation(0));
    }
    Ok(1e5 * (realized - predicted) / pop as f64)
}

/// Mean absolute RPE; NaN for an empty slice.
pub fn marpe(rpes: &[f64]) -> f64 {
    rpes.iter().map(|v| v.abs()).sum::<f64>() / rpes.len() as f64
}

/// Mean signed RPE; NaN for an empty slice.
pub fn mrpe(rpes: &[f64]) -> f64 {
    rpes.iter().sum::<f64>() / rpes.len() as f64
}

/// A model specification under a display name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSpec {
    pub name: String,
    pub spec: ModelSpec,
}

impl NamedSpec {
    pub fn new(name: impl Into<String>, spec: ModelSpec) -> Self {
        Self { name: name.into(), spec }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingOptions {
    pub k: usize,
    /// `None` scores point predictions only.
    pub bootstrap_n: Option<usize>,
    pub level: f64,
    pub seed: u64,
    pub policy: NegativePolicy,
    pub fit: FitOptions,
    pub kinds: Vec<TargetKind>,
}

impl Default for RollingOptions {
    fn default() -> Self {
        Self {
            k: 7,
            bootstrap_n: None,
            level: 0.90,
            seed: 0,
            policy: NegativePolicy::Clamp,
            fit: FitOptions::default(),
            kinds: TargetKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationEntry {
    pub anchor: NaiveDate,
    pub variant: String,
    pub kind: TargetKind,
    /// Date from which the realized target is fully observed.
    pub available_on: NaiveDate,
    pub realized: Vec<f64>,
    pub predicted: Vec<Interval>,
    pub rpe: Vec<f64>,
    pub marpe: f64,
    pub mrpe: f64,
    /// Share of districts whose realized value lies inside the interval.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub anchor: NaiveDate,
    pub variant: Option<String>,
    pub kind: Option<TargetKind>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub entries: Vec<EvaluationEntry>,
    pub skipped: Vec<SkippedEntry>,
}

impl EvaluationReport {
    pub fn select<'a>(&'a self, variant: &'a str, kind: TargetKind) -> impl Iterator<Item = &'a EvaluationEntry> + 'a {
        self.entries.iter().filter(move |e| e.variant == variant && e.kind == kind)
    }

    /// Average of a metric over anchors; NaN when nothing matches.
    pub fn mean_over_anchors(&self, variant: &str, kind: TargetKind, metric: fn(&EvaluationEntry) -> f64) -> f64 {
        let v: Vec<f64> = self.select(variant, kind).map(metric).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Snapshots with report dates in `(after, until]`.
fn slice(snapshots: &[Snapshot], after: NaiveDate, until: NaiveDate) -> &[Snapshot] {
    let lo = snapshots.partition_point(|s| s.report_date <= after);
    let hi = snapshots.partition_point(|s| s.report_date <= until);
    &snapshots[lo..hi.max(lo)]
}

/// Realized weekly targets per district from the snapshots available on
/// `anchor + realization lag`, or `None` when the archive ends too early.
pub fn realized_targets(
    snapshots: &[Snapshot],
    frame: &StratumFrame,
    anchor: NaiveDate,
    kind: TargetKind,
    k: usize,
    d_max: usize,
    window_days: usize,
    policy: NegativePolicy,
) -> Result<Option<(NaiveDate, Vec<f64>)>, EvaluateError> {
    let available_on = anchor + Duration::days(kind.realization_lag(k, d_max));
    if snapshots.last().map_or(true, |s| s.report_date < available_on) {
        return Ok(None);
    }
    let min_reg = anchor - Duration::days(window_days as i64 + 1);
    let opts = MergeOptions { d_max, policy, min_registration: Some(min_reg) };
    let (tri, _) = merge_snapshots(slice(snapshots, min_reg, available_on), frame, &opts)?;
    let values = (0..frame.len())
        .map(|r| aggregate_target(&tri, anchor, r, kind, k))
        .collect::<Result<_, _>>()?;
    Ok(Some((available_on, values)))
}

fn score(
    anchor: NaiveDate,
    variant: &str,
    kind: TargetKind,
    available_on: NaiveDate,
    realized: &[f64],
    predicted: &[Interval],
    frame: &StratumFrame,
    with_intervals: bool,
) -> Result<EvaluationEntry, EvaluateError> {
    let rpe: Vec<f64> = realized
        .iter()
        .zip(predicted)
        .enumerate()
        .map(|(r, (&y, p))| rpe(y, p.point, frame.total_population(r)).map_err(|_| EvaluateError::ZeroPopulation(r)))
        .collect::<Result<_, _>>()?;
    let coverage = with_intervals.then(|| {
        let inside = realized.iter().zip(predicted).filter(|(&y, p)| y >= p.lower && y <= p.upper).count();
        inside as f64 / realized.len() as f64
    });
    Ok(EvaluationEntry {
        anchor,
        variant: variant.to_string(),
        kind,
        available_on,
        realized: realized.to_vec(),
        predicted: predicted.to_vec(),
        marpe: marpe(&rpe),
        mrpe: mrpe(&rpe),
        rpe,
        coverage,
    })
}

enum JobOutcome {
    Scored(Vec<EvaluationEntry>),
    Skipped(SkippedEntry),
}

/// Fits every spec at every anchor on the window available at the anchor and
/// scores the predictions once their targets are realized.
///
/// Anchors whose targets are not yet realized in the archive, and fits that
/// fail, become skipped entries rather than errors.
pub fn rolling_evaluation(
    snapshots: &[Snapshot],
    frame: &StratumFrame,
    variants: &[NamedSpec],
    anchors: &[NaiveDate],
    opts: &RollingOptions,
) -> Result<EvaluationReport, EvaluateError> {
    let mut report = EvaluationReport::default();
    let mut jobs = Vec::new();
    for &anchor in anchors {
        for v in variants {
            jobs.push((anchor, v));
        }
    }
    let outcomes: Vec<Vec<JobOutcome>> = jobs
        .par_iter()
        .map(|&(anchor, v)| run_job(snapshots, frame, anchor, v, opts))
        .collect::<Result<_, _>>()?;
    for o in outcomes.into_iter().flatten() {
        match o {
            JobOutcome::Scored(e) => report.entries.extend(e),
            JobOutcome::Skipped(s) => report.skipped.push(s),
        }
    }
    Ok(report)
}

fn run_job(
    snapshots: &[Snapshot],
    frame: &StratumFrame,
    anchor: NaiveDate,
    v: &NamedSpec,
    opts: &RollingOptions,
) -> Result<Vec<JobOutcome>, EvaluateError> {
    let spec = &v.spec;
    let skip = |kind: Option<TargetKind>, reason: String| {
        warn!("skipping {} at {anchor}: {reason}", v.name);
        JobOutcome::Skipped(SkippedEntry { anchor, variant: Some(v.name.clone()), kind, reason })
    };
    let mut out = Vec::new();
    let mut realized = Vec::new();
    for &kind in &opts.kinds {
        match realized_targets(snapshots, frame, anchor, kind, opts.k, spec.d_max, spec.window_days, opts.policy)? {
            Some(r) => realized.push((kind, r)),
            None => out.push(skip(Some(kind), "insufficient realization: archive ends before the target is observed".into())),
        }
    }
    if realized.is_empty() {
        return Ok(out);
    }

    let min_reg = anchor - Duration::days(spec.window_days as i64 + 1);
    let window = slice(snapshots, min_reg, anchor);
    if window.last().map(|s| s.report_date) != Some(anchor) {
        return Err(EvaluateError::NoData(anchor));
    }
    let merge_opts = MergeOptions { d_max: spec.d_max, policy: opts.policy, min_registration: Some(min_reg) };
    let (tri, _) = merge_snapshots(window, frame, &merge_opts)?;
    let cum = cumulate(&tri);
    let design = match build_design(&tri, &cum, frame, spec, anchor) {
        Ok(d) => d,
        Err(e) => {
            out.push(skip(None, format!("design: {e}")));
            return Ok(out);
        }
    };
    let model = match fit(&design, &opts.fit) {
        Ok(m) => m,
        Err(e) => {
            out.push(skip(None, format!("fit: {e}")));
            return Ok(out);
        }
    };
    let kinds: Vec<TargetKind> = realized.iter().map(|(k, _)| *k).collect();
    let popts = PredictOptions {
        k: opts.k,
        bootstrap_n: opts.bootstrap_n.unwrap_or(2),
        level: opts.level,
        seed: opts.seed,
        kinds,
    };
    let set = predict(&model, &tri, &popts)?;
    let mut scored = Vec::new();
    for (kind, (available_on, values)) in realized {
        let predicted = set.get(kind).expect("requested kind");
        scored.push(score(anchor, &v.name, kind, available_on, &values, predicted, frame, opts.bootstrap_n.is_some())?);
    }
    out.push(JobOutcome::Scored(scored));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlagThreshold {
    /// Realized value outside the prediction interval.
    Interval,
    /// RPE above `outbreak` or below `intervention`.
    Rpe { outbreak: f64, intervention: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistrictFlags {
    pub district: usize,
    /// Realized well above the prediction.
    pub outbreak_signal: bool,
    /// Realized well below the prediction.
    pub intervention_signal: bool,
}

pub fn retrospective_flags(entry: &EvaluationEntry, threshold: FlagThreshold) -> Vec<DistrictFlags> {
    entry
        .realized
        .iter()
        .zip(&entry.predicted)
        .zip(&entry.rpe)
        .enumerate()
        .map(|(district, ((&y, p), &e))| {
            let (outbreak_signal, intervention_signal) = match threshold {
                FlagThreshold::Interval => (y > p.upper, y < p.lower),
                FlagThreshold::Rpe { outbreak, intervention } => (e > outbreak, e < intervention),
            };
            DistrictFlags { district, outbreak_signal, intervention_signal }
        })
        .collect()
}

/// Long-format metrics: `anchor, variant, kind, metric, value`.
pub fn write_report_csv<W: Write>(writer: W, report: &EvaluationReport) -> Result<(), EvaluateError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["anchor", "variant", "kind", "metric", "value"])?;
    for e in &report.entries {
        let anchor = e.anchor.to_string();
        let mut metrics = vec![("marpe", e.marpe), ("mrpe", e.mrpe)];
        if let Some(c) = e.coverage {
            metrics.push(("coverage", c));
        }
        for (m, v) in metrics {
            w.write_record([anchor.as_str(), &e.variant, e.kind.short(), m, &format!("{v:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-district RPE with realized and predicted values.
pub fn write_rpe_csv<W: Write>(writer: W, report: &EvaluationReport, frame: &StratumFrame) -> Result<(), EvaluateError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["anchor", "variant", "kind", "district_id", "realized", "predicted", "lower", "upper", "rpe"])?;
    for e in &report.entries {
        let anchor = e.anchor.to_string();
        for (r, ((y, p), v)) in e.realized.iter().zip(&e.predicted).zip(&e.rpe).enumerate() {
            w.write_record([
                anchor.as_str(),
                &e.variant,
                e.kind.short(),
                frame.district(r).id.as_str(),
                &format!("{y}"),
                &format!("{:.2}", p.point),
                &format!("{:.2}", p.lower),
                &format!("{:.2}", p.upper),
                &format!("{v:.4}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Anchors, variants and targets that could not be scored, with reasons.
pub fn write_skipped_csv<W: Write>(writer: W, report: &EvaluationReport) -> Result<(), EvaluateError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["anchor", "variant", "kind", "reason"])?;
    for s in &report.skipped {
        let anchor = s.anchor.to_string();
        w.write_record([
            anchor.as_str(),
            s.variant.as_deref().unwrap_or(""),
            s.kind.map_or("", |k| k.short()),
            &s.reason,
        ])?;
    }
    w.flush()?;
    Ok(())
}
