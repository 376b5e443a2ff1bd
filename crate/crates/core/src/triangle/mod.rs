//! Reporting triangles reconstructed from daily cumulative snapshots.
//!
//! A snapshot published on report day `s` lists, per registration date and
//! stratum, the cumulative number of cases known so far. Differencing two
//! consecutive snapshots yields the cases newly reported on `s`; their delay is
//! `s - registration_date` (at least one day). The resulting array
//! `N[t, d, r, g]` is only observed where `t + d <= T` for analysis day `T`,
//! which gives the blade shape of the data.

mod io;

use std::collections::HashMap;

use chrono::{Duration, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strata::{DistrictId, Group, StratumFrame};

pub use io::{read_frame_csv, SnapshotRead, read_snapshot_dir, read_snapshots_csv, write_frame_csv, write_snapshot_csv};

#[derive(Debug, Error)]
pub enum TriangleError {
    #[error("negative increment at registration {registration}, delay {delay}, district {district}, group {group}: {from} -> {to}")]
    NegativeIncrement {
        registration: NaiveDate,
        delay: i64,
        district: DistrictId,
        group: Group,
        from: u64,
        to: u64,
    },
    #[error("unknown district {0}")]
    UnknownDistrict(DistrictId),
    #[error("record registered {registration} appears in report {report}; delay must be at least one day")]
    InvalidDelay { registration: NaiveDate, report: NaiveDate },
    #[error("snapshots must cover consecutive days: expected {expected}, found {found}")]
    NonConsecutive { expected: NaiveDate, found: NaiveDate },
    #[error("record with report date {record} inside snapshot for {snapshot}")]
    MismatchedReportDate { snapshot: NaiveDate, record: NaiveDate },
    #[error("no snapshots supplied")]
    Empty,
    #[error("missing cells for aggregation: {0:?}")]
    MissingCells(Vec<(NaiveDate, usize)>),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One line of a cumulative snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub district: DistrictId,
    pub group: Group,
    pub count: u64,
    pub registration_date: NaiveDate,
    pub report_date: NaiveDate,
}

/// All records published on one report day.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub report_date: NaiveDate,
    pub records: Vec<SnapshotRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NegativePolicy {
    /// Treat the decrease as a zero increment and keep the running maximum.
    #[default]
    Clamp,
    Reject,
}

#[derive(Debug, Clone)]
pub struct MergeOptions {
    pub d_max: usize,
    pub policy: NegativePolicy,
    /// Registration dates before this are skipped entirely.
    pub min_registration: Option<NaiveDate>,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self { d_max: 7, policy: NegativePolicy::Clamp, min_registration: None }
    }
}

/// Bookkeeping produced while merging snapshots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub snapshots: usize,
    pub records: usize,
    pub negative_increments: usize,
    /// Records whose stratum has no population entry in the frame.
    pub dropped_unknown_strata: usize,
    /// Newly reported cases per raw delay (index 0 is delay 1), before folding.
    pub delay_histogram: Vec<u64>,
    /// Cases whose raw delay exceeded `d_max` and were folded into it.
    pub folded_cases: u64,
}

/// Delay-resolved counts `N[t, d, r, g]` with the blade-shaped observation mask.
///
/// Row `t` is registration date `origin + t`. Cell `(t, d)` is observed iff
/// `t + d <= analysis_row`; delays run from 1 to `d_max` and delays beyond
/// `d_max` are folded into the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTriangle {
    origin: NaiveDate,
    n_rows: usize,
    analysis_row: i64,
    d_max: usize,
    n_districts: usize,
    groups: Vec<Group>,
    counts: Vec<u64>,
}

impl CaseTriangle {
    /// Builds a triangle from a dense count array laid out as `[t][d-1][r][g]`.
    /// Counts in unobserved cells must be zero.
    pub fn from_counts(
        origin: NaiveDate,
        n_rows: usize,
        analysis_row: i64,
        d_max: usize,
        n_districts: usize,
        groups: Vec<Group>,
        counts: Vec<u64>,
    ) -> Result<Self, TriangleError> {
        if d_max == 0 {
            return Err(TriangleError::Parse("d_max must be at least 1".into()));
        }
        let expected = n_rows * d_max * n_districts * groups.len();
        if counts.len() != expected {
            return Err(TriangleError::Parse(format!(
                "count array has {} entries, expected {expected}",
                counts.len()
            )));
        }
        let tri = Self { origin, n_rows, analysis_row, d_max, n_districts, groups, counts };
        for t in 0..n_rows {
            for d in 1..=d_max {
                if tri.is_observed(t as i64, d) {
                    continue;
                }
                for slot in 0..tri.n_slots() {
                    if tri.counts[tri.offset(t, d) + slot] != 0 {
                        return Err(TriangleError::Parse(format!(
                            "unobserved cell ({t},{d}) carries a nonzero count"
                        )));
                    }
                }
            }
        }
        Ok(tri)
    }

    pub fn origin(&self) -> NaiveDate {
        self.origin
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn n_districts(&self) -> usize {
        self.n_districts
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_slots(&self) -> usize {
        self.n_districts * self.groups.len()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Row index of the analysis day `T`.
    pub fn analysis_row(&self) -> i64 {
        self.analysis_row
    }

    pub fn analysis_date(&self) -> NaiveDate {
        self.origin + Duration::days(self.analysis_row)
    }

    pub fn date_of(&self, t: i64) -> NaiveDate {
        self.origin + Duration::days(t)
    }

    pub fn row_of(&self, date: NaiveDate) -> i64 {
        (date - self.origin).num_days()
    }

    pub fn is_observed(&self, t: i64, d: usize) -> bool {
        t >= 0 && (t as usize) < self.n_rows && d >= 1 && d <= self.d_max && t + d as i64 <= self.analysis_row
    }

    fn offset(&self, t: usize, d: usize) -> usize {
        (t * self.d_max + (d - 1)) * self.n_slots()
    }

    pub fn slot(&self, r: usize, g: usize) -> usize {
        r * self.groups.len() + g
    }

    /// Count at an observed cell, `None` otherwise.
    pub fn get(&self, t: i64, d: usize, r: usize, g: usize) -> Option<u64> {
        if !self.is_observed(t, d) {
            return None;
        }
        Some(self.counts[self.offset(t as usize, d) + self.slot(r, g)])
    }

    /// All stored counts of row `t` at delay `d`, one per slot.
    pub fn slots_at(&self, t: usize, d: usize) -> &[u64] {
        let o = self.offset(t, d);
        &self.counts[o..o + self.n_slots()]
    }

    /// Re-anchors the triangle at an earlier analysis date by masking later
    /// report days.
    ///
    /// Exact only when no cases were folded from beyond `d_max`, which holds
    /// for simulated ground truth; real archives should be re-merged instead.
    pub fn truncated(&self, analysis: NaiveDate) -> CaseTriangle {
        let analysis_row = self.row_of(analysis).min(self.analysis_row);
        let n_rows = (analysis_row.max(0) as usize).min(self.n_rows);
        let mut out = CaseTriangle {
            origin: self.origin,
            n_rows,
            analysis_row,
            d_max: self.d_max,
            n_districts: self.n_districts,
            groups: self.groups.clone(),
            counts: vec![0; n_rows * self.d_max * self.n_slots()],
        };
        for t in 0..n_rows {
            for d in 1..=self.d_max {
                if out.is_observed(t as i64, d) {
                    let src = self.offset(t, d);
                    let dst = out.offset(t, d);
                    let n = self.n_slots();
                    out.counts[dst..dst + n].copy_from_slice(&self.counts[src..src + n]);
                }
            }
        }
        out
    }

    /// Total count per (registration row, slot) over all observed delays.
    pub fn row_totals(&self, t: usize) -> Vec<u64> {
        let mut out = vec![0; self.n_slots()];
        for d in 1..=self.d_max {
            if self.is_observed(t as i64, d) {
                for (o, v) in out.iter_mut().zip(self.slots_at(t, d)) {
                    *o += v;
                }
            }
        }
        out
    }
}

/// Row-wise cumulations `C[t, d] = sum_{j <= d} N[t, j]` over observed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CumTriangle {
    origin: NaiveDate,
    n_rows: usize,
    analysis_row: i64,
    d_max: usize,
    n_groups: usize,
    n_slots: usize,
    values: Vec<u64>,
}

impl CumTriangle {
    pub fn get(&self, t: i64, d: usize, r: usize, g: usize) -> Option<u64> {
        if t < 0 || t as usize >= self.n_rows || d == 0 || d > self.d_max || t + d as i64 > self.analysis_row {
            return None;
        }
        let slot = r * self.n_groups + g;
        Some(self.values[(t as usize * self.d_max + d - 1) * self.n_slots + slot])
    }

    pub fn origin(&self) -> NaiveDate {
        self.origin
    }
}

/// Prefix sums along the delay axis. Unobserved cells stay unobserved.
pub fn cumulate(tri: &CaseTriangle) -> CumTriangle {
    let n_slots = tri.n_slots();
    let mut values = vec![0u64; tri.counts.len()];
    for t in 0..tri.n_rows {
        for slot in 0..n_slots {
            let mut acc = 0u64;
            for d in 1..=tri.d_max {
                if !tri.is_observed(t as i64, d) {
                    break;
                }
                let i = tri.offset(t, d) + slot;
                acc += tri.counts[i];
                values[i] = acc;
            }
        }
    }
    CumTriangle {
        origin: tri.origin,
        n_rows: tri.n_rows,
        analysis_row: tri.analysis_row,
        d_max: tri.d_max,
        n_groups: tri.n_groups(),
        n_slots,
        values,
    }
}

/// Differences consecutive cumulative snapshots into a delay-resolved triangle.
///
/// Registration dates seen for the first time contribute their full count at
/// the delay of first appearance. The analysis day is the last report date.
pub fn merge_snapshots(
    snapshots: &[Snapshot],
    frame: &StratumFrame,
    options: &MergeOptions,
) -> Result<(CaseTriangle, MergeReport), TriangleError> {
    let first = snapshots.first().ok_or(TriangleError::Empty)?;
    let last = snapshots.last().ok_or(TriangleError::Empty)?;
    let d_max = options.d_max.max(1);
    for w in snapshots.windows(2) {
        let expected = w[0].report_date + Duration::days(1);
        if w[1].report_date != expected {
            return Err(TriangleError::NonConsecutive { expected, found: w[1].report_date });
        }
    }

    let keep = |reg: NaiveDate| options.min_registration.map_or(true, |m| reg >= m);
    let origin = snapshots
        .iter()
        .flat_map(|s| s.records.iter())
        .filter(|rec| keep(rec.registration_date))
        .map(|rec| rec.registration_date)
        .min()
        .unwrap_or(first.report_date - Duration::days(1));
    let analysis_row = (last.report_date - origin).num_days();
    let n_rows = analysis_row.max(0) as usize;

    let n_groups = frame.groups().len();
    let n_slots = frame.len() * n_groups;
    let mut counts = vec![0u64; n_rows * d_max * n_slots];
    let mut report = MergeReport { snapshots: snapshots.len(), ..Default::default() };

    // running cumulative per (registration row, slot)
    let mut known: HashMap<(usize, usize), u64> = HashMap::new();
    let mut current: HashMap<(usize, usize), u64> = HashMap::new();

    for snap in snapshots {
        current.clear();
        for rec in &snap.records {
            if rec.report_date != snap.report_date {
                return Err(TriangleError::MismatchedReportDate {
                    snapshot: snap.report_date,
                    record: rec.report_date,
                });
            }
            if rec.report_date <= rec.registration_date {
                return Err(TriangleError::InvalidDelay {
                    registration: rec.registration_date,
                    report: rec.report_date,
                });
            }
            if !keep(rec.registration_date) {
                continue;
            }
            report.records += 1;
            let r = frame
                .district_index(&rec.district)
                .ok_or_else(|| TriangleError::UnknownDistrict(rec.district.clone()))?;
            let Some(g) = frame.group_index(rec.group) else {
                report.dropped_unknown_strata += 1;
                continue;
            };
            let t = (rec.registration_date - origin).num_days() as usize;
            *current.entry((t, r * n_groups + g)).or_insert(0) += rec.count;
        }

        let mut apply = |t: usize, slot: usize, cum: u64, known: &mut HashMap<(usize, usize), u64>| -> Result<(), TriangleError> {
            let prev = known.get(&(t, slot)).copied().unwrap_or(0);
            let delay = (snap.report_date - origin).num_days() - t as i64;
            if cum < prev {
                let registration = origin + Duration::days(t as i64);
                let district = frame.district(slot / n_groups).id.clone();
                let group = frame.groups()[slot % n_groups];
                match options.policy {
                    NegativePolicy::Reject => {
                        return Err(TriangleError::NegativeIncrement {
                            registration,
                            delay,
                            district,
                            group,
                            from: prev,
                            to: cum,
                        })
                    }
                    NegativePolicy::Clamp => {
                        warn!(
                            "clamping negative increment {prev} -> {cum} for {district} {group} registered {registration}"
                        );
                        report.negative_increments += 1;
                    }
                }
                return Ok(());
            }
            let inc = cum - prev;
            if inc > 0 {
                let raw = delay as usize;
                if report.delay_histogram.len() < raw {
                    report.delay_histogram.resize(raw, 0);
                }
                report.delay_histogram[raw - 1] += inc;
                if raw > d_max {
                    report.folded_cases += inc;
                }
                let d = raw.min(d_max);
                counts[(t * d_max + d - 1) * n_slots + slot] += inc;
                known.insert((t, slot), cum);
            }
            Ok(())
        };

        let mut keys: Vec<_> = current.iter().map(|(&k, &v)| (k, v)).collect();
        keys.sort_unstable();
        for ((t, slot), cum) in keys {
            apply(t, slot, cum, &mut known)?;
        }
        // a snapshot speaks only for registration dates from its earliest record on
        let covered_from = current.keys().map(|k| k.0).min().unwrap_or(usize::MAX);
        let mut vanished: Vec<_> = known
            .keys()
            .filter(|k| k.0 >= covered_from && !current.contains_key(k))
            .copied()
            .collect();
        vanished.sort_unstable();
        for (t, slot) in vanished {
            apply(t, slot, 0, &mut known)?;
        }
    }

    let tri = CaseTriangle {
        origin,
        n_rows,
        analysis_row,
        d_max,
        n_districts: frame.len(),
        groups: frame.groups().to_vec(),
        counts,
    };
    Ok((tri, report))
}

/// The three weekly targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Nowcast,
    Forecast,
    Forenowcast,
}

impl TargetKind {
    pub const ALL: [TargetKind; 3] = [TargetKind::Nowcast, TargetKind::Forecast, TargetKind::Forenowcast];

    pub fn label(self) -> &'static str {
        match self {
            TargetKind::Nowcast => "nowcast",
            TargetKind::Forecast => "forecast",
            TargetKind::Forenowcast => "forenowcast",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            TargetKind::Nowcast => "n",
            TargetKind::Forecast => "f",
            TargetKind::Forenowcast => "fn",
        }
    }

    /// Days after the anchor until the target is fully observable.
    pub fn realization_lag(self, k: usize, d_max: usize) -> i64 {
        match self {
            TargetKind::Nowcast | TargetKind::Forecast => k.max(d_max) as i64,
            TargetKind::Forenowcast => (k + d_max) as i64,
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nowcast" | "n" => Ok(TargetKind::Nowcast),
            "forecast" | "f" => Ok(TargetKind::Forecast),
            "forenowcast" | "fn" => Ok(TargetKind::Forenowcast),
            other => Err(format!("unknown target kind '{other}'")),
        }
    }
}

/// Cells `(row, delay)` summed by a target, rows relative to the anchor row.
///
/// Nowcast: rows `T-k..T-1` at every delay. Forecast: the diagonals reported
/// on days `T+1..T+k`, i.e. `(T+i-d, d)`. Forenowcast: rows `T..T+k-1` at
/// every delay.
pub fn target_cells(kind: TargetKind, anchor_row: i64, k: usize, d_max: usize) -> Vec<(i64, usize)> {
    let k = k as i64;
    let mut cells = Vec::new();
    match kind {
        TargetKind::Nowcast => {
            for t in anchor_row - k..anchor_row {
                cells.extend((1..=d_max).map(|d| (t, d)));
            }
        }
        TargetKind::Forecast => {
            for i in 1..=k {
                cells.extend((1..=d_max).map(|d| (anchor_row + i - d as i64, d)));
            }
        }
        TargetKind::Forenowcast => {
            for t in anchor_row..anchor_row + k {
                cells.extend((1..=d_max).map(|d| (t, d)));
            }
        }
    }
    cells
}

/// Anything that can report a (possibly fractional) count per cell.
pub trait CellSource {
    fn origin(&self) -> NaiveDate;
    fn d_max(&self) -> usize;
    fn n_groups(&self) -> usize;
    /// Value at row `t` (relative to `origin`), `None` when unavailable.
    fn cell(&self, t: i64, d: usize, r: usize, g: usize) -> Option<f64>;
}

impl CellSource for CaseTriangle {
    fn origin(&self) -> NaiveDate {
        self.origin
    }

    fn d_max(&self) -> usize {
        self.d_max
    }

    fn n_groups(&self) -> usize {
        self.groups.len()
    }

    fn cell(&self, t: i64, d: usize, r: usize, g: usize) -> Option<f64> {
        self.get(t, d, r, g).map(|v| v as f64)
    }
}

/// Weekly target for district `r` anchored at analysis day `anchor`, summed
/// over all groups.
pub fn aggregate_target<S: CellSource + ?Sized>(
    source: &S,
    anchor: NaiveDate,
    r: usize,
    kind: TargetKind,
    k: usize,
) -> Result<f64, TriangleError> {
    let anchor_row = (anchor - source.origin()).num_days();
    let mut missing = Vec::new();
    let mut total = 0.0;
    for (t, d) in target_cells(kind, anchor_row, k, source.d_max()) {
        for g in 0..source.n_groups() {
            match source.cell(t, d, r, g) {
                Some(v) => total += v,
                None => {
                    missing.push((source.origin() + Duration::days(t), d));
                    break;
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(total)
    } else {
        Err(TriangleError::MissingCells(missing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::{AgeGroup, District, Gender};

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn frame_one(group: Group) -> StratumFrame {
        StratumFrame::new(vec![District {
            id: DistrictId::new("09162"),
            name: "Munich City".into(),
            lon: 11.57,
            lat: 48.14,
            population: [(group, 100_000)].into_iter().collect(),
        }])
        .unwrap()
    }

    fn rec(group: Group, count: u64, reg: NaiveDate, rep: NaiveDate) -> SnapshotRecord {
        SnapshotRecord {
            district: DistrictId::new("09162"),
            group,
            count,
            registration_date: reg,
            report_date: rep,
        }
    }

    #[test]
    fn single_record_lands_at_delay_one() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let frame = frame_one(g);
        let snaps = vec![Snapshot {
            report_date: date(2020, 9, 2),
            records: vec![rec(g, 5, date(2020, 9, 1), date(2020, 9, 2))],
        }];
        let (tri, _) = merge_snapshots(&snaps, &frame, &MergeOptions::default()).unwrap();
        assert_eq!(tri.n_rows(), 1);
        assert_eq!(tri.get(0, 1, 0, 0), Some(5));
        for d in 2..=7 {
            assert_eq!(tri.get(0, d, 0, 0), None);
        }
    }

    #[test]
    fn negative_increment_policies() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let frame = frame_one(g);
        let reg = date(2020, 9, 1);
        let snaps: Vec<Snapshot> = [(2, 5u64), (3, 3), (4, 6)]
            .into_iter()
            .map(|(day, c)| Snapshot {
                report_date: date(2020, 9, day),
                records: vec![rec(g, c, reg, date(2020, 9, day))],
            })
            .collect();
        let (tri, report) = merge_snapshots(&snaps, &frame, &MergeOptions::default()).unwrap();
        assert_eq!(report.negative_increments, 1);
        assert_eq!(tri.get(0, 1, 0, 0), Some(5));
        assert_eq!(tri.get(0, 2, 0, 0), Some(0));
        assert_eq!(tri.get(0, 3, 0, 0), Some(1));

        let opts = MergeOptions { policy: NegativePolicy::Reject, ..Default::default() };
        let err = merge_snapshots(&snaps, &frame, &opts).unwrap_err();
        assert!(matches!(err, TriangleError::NegativeIncrement { from: 5, to: 3, .. }));
    }

    #[test]
    fn vanished_record_counts_as_decrease() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let frame = frame_one(g);
        let reg = date(2020, 9, 1);
        let snaps = vec![
            Snapshot { report_date: date(2020, 9, 2), records: vec![rec(g, 2, reg, date(2020, 9, 2))] },
            Snapshot { report_date: date(2020, 9, 3), records: vec![rec(g, 1, date(2020, 8, 31), date(2020, 9, 3))] },
        ];
        let opts = MergeOptions { policy: NegativePolicy::Reject, ..Default::default() };
        assert!(merge_snapshots(&snaps, &frame, &opts).is_err());
        // records older than a snapshot's earliest entry are out of its scope
        let partial = vec![
            snaps[0].clone(),
            Snapshot { report_date: date(2020, 9, 3), records: vec![rec(g, 1, date(2020, 9, 2), date(2020, 9, 3))] },
        ];
        let (tri, report) = merge_snapshots(&partial, &frame, &opts).unwrap();
        assert_eq!(report.negative_increments, 0);
        assert_eq!(tri.get(0, 1, 0, 0), Some(2));
    }

    #[test]
    fn unknown_district_is_an_error() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let frame = frame_one(g);
        let mut r = rec(g, 1, date(2020, 9, 1), date(2020, 9, 2));
        r.district = DistrictId::new("99999");
        let snaps = vec![Snapshot { report_date: date(2020, 9, 2), records: vec![r] }];
        assert!(matches!(
            merge_snapshots(&snaps, &frame, &MergeOptions::default()),
            Err(TriangleError::UnknownDistrict(_))
        ));
    }

    #[test]
    fn unknown_stratum_is_dropped_and_counted() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let other = Group::new(AgeGroup::A80Plus, Gender::M);
        let frame = frame_one(g);
        let snaps = vec![Snapshot {
            report_date: date(2020, 9, 2),
            records: vec![rec(other, 4, date(2020, 9, 1), date(2020, 9, 2))],
        }];
        let (tri, report) = merge_snapshots(&snaps, &frame, &MergeOptions::default()).unwrap();
        assert_eq!(report.dropped_unknown_strata, 1);
        assert_eq!(tri.get(0, 1, 0, 0), Some(0));
    }

    #[test]
    fn gaps_in_snapshot_days_are_rejected() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let frame = frame_one(g);
        let snaps = vec![
            Snapshot { report_date: date(2020, 9, 2), records: vec![] },
            Snapshot { report_date: date(2020, 9, 4), records: vec![] },
        ];
        assert!(matches!(
            merge_snapshots(&snaps, &frame, &MergeOptions::default()),
            Err(TriangleError::NonConsecutive { .. })
        ));
    }

    #[test]
    fn long_delays_fold_into_last_column() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let frame = frame_one(g);
        let reg = date(2020, 9, 1);
        let snaps: Vec<Snapshot> = (2..=5)
            .map(|day| Snapshot {
                report_date: date(2020, 9, day),
                records: vec![rec(g, if day < 5 { 1 } else { 4 }, reg, date(2020, 9, day))],
            })
            .collect();
        let opts = MergeOptions { d_max: 2, ..Default::default() };
        let (tri, report) = merge_snapshots(&snaps, &frame, &opts).unwrap();
        assert_eq!(tri.get(0, 1, 0, 0), Some(1));
        assert_eq!(tri.get(0, 2, 0, 0), Some(3));
        assert_eq!(report.folded_cases, 3);
    }

    #[test]
    fn cumulate_prefix_sums() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        let counts = vec![1, 2, 3, 0, 0, 0, 0];
        let tri = CaseTriangle::from_counts(date(2020, 1, 1), 1, 8, 7, 1, vec![g], counts).unwrap();
        let cum = cumulate(&tri);
        let row: Vec<u64> = (1..=7).map(|d| cum.get(0, d, 0, 0).unwrap()).collect();
        assert_eq!(row, vec![1, 3, 6, 6, 6, 6, 6]);

        let zero = CaseTriangle::from_counts(date(2020, 1, 1), 1, 8, 7, 1, vec![g], vec![0; 7]).unwrap();
        let cum = cumulate(&zero);
        assert!((1..=7).all(|d| cum.get(0, d, 0, 0) == Some(0)));
    }

    #[test]
    fn nowcast_single_term() {
        let g = Group::new(AgeGroup::A35To59, Gender::F);
        // rows 0..2, d_max 2, analysis row 3: row 1 complete with C = 4
        let counts = vec![0, 0, 1, 3, 0, 0];
        let tri = CaseTriangle::from_counts(date(2020, 1, 1), 3, 3, 2, 1, vec![g], counts).unwrap();
        let y = aggregate_target(&tri, date(2020, 1, 3), 0, TargetKind::Nowcast, 1).unwrap();
        assert_eq!(y, 4.0);
        let err = aggregate_target(&tri, date(2020, 1, 4), 0, TargetKind::Nowcast, 1).unwrap_err();
        assert!(matches!(err, TriangleError::MissingCells(ref c) if c.len() == 1));
    }
}
