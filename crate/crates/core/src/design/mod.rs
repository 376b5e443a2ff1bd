//! Penalized regression design for the delay-resolved count model.
//!
//! The log-mean of a cell `(t, d, r, g)` is
//!
//! ```text
//! s1(t) + s2(lon_r, lat_r) + gamma_d + weekday effects + age/gender effects
//!   + u_r0 + 1{t >= T - k} u_r1
//!   + phi log(1 + C[t-1, d]) + delta log(1 + C[t, d-1]) + log pop_{r,g}
//! ```
//!
//! Fixed effects live in one dense block; the two smooths and the two
//! district random intercepts are penalized blocks looked up by day or
//! district (see [`matrix::ModelMatrix`]).

pub mod matrix;
pub mod spline;

use std::collections::BTreeSet;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strata::{AgeGroup, Gender, Group, StratumFrame};
use crate::triangle::{CaseTriangle, CumTriangle};
pub use matrix::{IndexedBlock, ModelMatrix, StoredMatrix};
use spline::{BSpline, TensorSpline};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("no observed cells in the estimation window ending {0}")]
    EmptyWindow(NaiveDate),
    #[error("design is rank deficient: {0}")]
    RankDeficient(String),
    #[error("degenerate knots: {0}")]
    DegenerateKnots(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
}

/// Model variant flags, basis sizes, window lengths and prediction tunables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_max: usize,
    pub window_days: usize,
    pub k_short: usize,
    pub include_ar_time: bool,
    pub include_ar_delay: bool,
    pub include_re_short: bool,
    pub include_re: bool,
    pub time_basis_dim: usize,
    pub spatial_basis_dim_per_axis: usize,
    pub penalty_order: usize,
    pub bootstrap_n: usize,
    pub interval_level: f64,
}

impl Default for ModelSpec {
    /// The registry's default variant: everything except the time AR term.
    fn default() -> Self {
        Variant::NoArTime.spec()
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), DesignError> {
        let fail = |m: String| Err(DesignError::InvalidSpec(m));
        if self.include_re_short && !self.include_re {
            return fail("include_re_short requires include_re".into());
        }
        if self.k_short > self.window_days {
            return fail(format!("k_short {} exceeds window_days {}", self.k_short, self.window_days));
        }
        if self.d_max == 0 || self.window_days == 0 {
            return fail("d_max and window_days must be positive".into());
        }
        let min_dim = (self.penalty_order + 1).max(spline::DEGREE + 1);
        if self.time_basis_dim < min_dim || self.spatial_basis_dim_per_axis < min_dim {
            return fail(format!("basis dimensions must be at least {min_dim}"));
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return fail(format!("interval_level {} outside (0, 1)", self.interval_level));
        }
        if self.bootstrap_n < 2 {
            return fail("bootstrap_n must be at least 2".into());
        }
        Ok(())
    }
}

/// The eight compared model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoArTime,
    NoArDelay,
    NoAr,
    NoReShort,
    NoRe,
    NoReShortNoAr,
    NoReNoAr,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoArTime,
        Variant::NoArDelay,
        Variant::NoAr,
        Variant::NoReShort,
        Variant::NoRe,
        Variant::NoReShortNoAr,
        Variant::NoReNoAr,
    ];

    /// Variant used when none is requested.
    pub const DEFAULT: Variant = Variant::NoArTime;

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoArTime => "no_ar_time",
            Variant::NoArDelay => "no_ar_delay",
            Variant::NoAr => "no_ar",
            Variant::NoReShort => "no_re_short",
            Variant::NoRe => "no_re",
            Variant::NoReShortNoAr => "no_re_short_no_ar",
            Variant::NoReNoAr => "no_re_no_ar",
        }
    }

    /// `(ar_time, ar_delay, re, re_short)`
    pub fn flags(self) -> (bool, bool, bool, bool) {
        match self {
            Variant::Full => (true, true, true, true),
            Variant::NoArTime => (false, true, true, true),
            Variant::NoArDelay => (true, false, true, true),
            Variant::NoAr => (false, false, true, true),
            Variant::NoReShort => (true, true, true, false),
            Variant::NoRe => (true, true, false, false),
            Variant::NoReShortNoAr => (false, false, true, false),
            Variant::NoReNoAr => (false, false, false, false),
        }
    }

    /// Applies the variant's flags to `base`, keeping its other tunables.
    pub fn apply(self, base: &ModelSpec) -> ModelSpec {
        let (ar_time, ar_delay, re, re_short) = self.flags();
        ModelSpec {
            include_ar_time: ar_time,
            include_ar_delay: ar_delay,
            include_re: re,
            include_re_short: re_short,
            ..base.clone()
        }
    }

    pub fn spec(self) -> ModelSpec {
        let (ar_time, ar_delay, re, re_short) = self.flags();
        ModelSpec {
            d_max: 7,
            window_days: 21,
            k_short: 7,
            include_ar_time: ar_time,
            include_ar_delay: ar_delay,
            include_re_short: re_short,
            include_re: re,
            time_basis_dim: 8,
            spatial_basis_dim_per_axis: 8,
            penalty_order: 2,
            bootstrap_n: 1000,
            interval_level: 0.90,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant '{s}'"))
    }
}

/// One observation (or prediction target) of the count model.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub response: f64,
    /// Registration day relative to the anchor `T` (negative inside the window).
    pub day: i64,
    pub delay: usize,
    pub district: usize,
    pub group: usize,
    pub offset: f64,
    pub ar_time: f64,
    pub ar_delay: f64,
    /// Monday = 0.
    pub weekday_registration: u8,
    pub weekday_report: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "term", content = "level", rename_all = "snake_case")]
pub enum FixedColumn {
    Intercept,
    Delay(usize),
    RegistrationWeekday(u8),
    ReportWeekday(u8),
    Age(AgeGroup),
    Gender(Gender),
    ArTime,
    ArDelay,
}

const WEEKDAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

impl FixedColumn {
    pub fn name(&self) -> String {
        match self {
            FixedColumn::Intercept => "intercept".into(),
            FixedColumn::Delay(d) => format!("delay_{d}"),
            FixedColumn::RegistrationWeekday(w) => format!("registration_{}", WEEKDAYS[*w as usize]),
            FixedColumn::ReportWeekday(w) => format!("report_{}", WEEKDAYS[*w as usize]),
            FixedColumn::Age(a) => format!("age_{a}"),
            FixedColumn::Gender(g) => format!("gender_{g}"),
            FixedColumn::ArTime => "ar_time".into(),
            FixedColumn::ArDelay => "ar_delay".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Fixed,
    TimeSmooth,
    SpatialSmooth,
    RandomLong,
    RandomShort,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Fixed => "fixed",
            BlockKind::TimeSmooth => "s_time",
            BlockKind::SpatialSmooth => "s_space",
            BlockKind::RandomLong => "re_long",
            BlockKind::RandomShort => "re_short",
        }
    }
}

/// A contiguous coefficient block and its penalty (absent for the fixed block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
    pub penalty: Option<StoredMatrix>,
    pub penalty_rank: usize,
}

/// Sum-to-zero constrained time smooth: columns are `B(day) Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSmooth {
    pub spline: BSpline,
    pub constraint: StoredMatrix,
}

impl TimeSmooth {
    pub fn row(&self, day: f64) -> Vec<f64> {
        let z = DMatrix::from(&self.constraint);
        let b = DVector::from_vec(self.spline.eval(day));
        z.tr_mul(&b).as_slice().to_vec()
    }
}

/// Constrained spatial smooth, one table row per district.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSmooth {
    pub spline: TensorSpline,
    pub table: StoredMatrix,
}

/// Everything needed to turn a [`DesignRow`] into model columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub spec: ModelSpec,
    pub anchor: NaiveDate,
    pub n_districts: usize,
    pub groups: Vec<Group>,
    /// `log pop` per slot `r * n_groups + g`; `None` for empty strata.
    pub log_population: Vec<Option<f64>>,
    pub fixed: Vec<FixedColumn>,
    pub time: Option<TimeSmooth>,
    pub space: Option<SpatialSmooth>,
    pub blocks: Vec<BlockInfo>,
}

impl DesignLayout {
    pub fn n_coefficients(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    pub fn block(&self, kind: BlockKind) -> Option<&BlockInfo> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    /// Last registration day (relative to the anchor) inside the window.
    pub fn last_window_day(&self) -> i64 {
        -1
    }

    pub fn first_window_day(&self) -> i64 {
        -(self.spec.window_days as i64)
    }

    pub fn is_short_term(&self, day: i64) -> bool {
        day >= -(self.spec.k_short as i64)
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.fixed.iter().map(FixedColumn::name).collect();
        for b in self.blocks.iter().filter(|b| b.kind != BlockKind::Fixed) {
            names.extend((0..b.len).map(|j| format!("{}_{j}", b.kind.name())));
        }
        names
    }

    /// Builds a row for registration date `registration` at delay `d` given the
    /// cumulative counts feeding the two AR covariates.
    pub fn make_row(
        &self,
        registration: NaiveDate,
        delay: usize,
        district: usize,
        group: usize,
        prev_row_cum: f64,
        same_row_cum: f64,
        response: f64,
    ) -> DesignRow {
        let slot = district * self.groups.len() + group;
        DesignRow {
            response,
            day: (registration - self.anchor).num_days(),
            delay,
            district,
            group,
            offset: self.log_population[slot].unwrap_or(f64::NEG_INFINITY),
            ar_time: (1.0 + prev_row_cum).ln(),
            ar_delay: (1.0 + same_row_cum).ln(),
            weekday_registration: registration.weekday().num_days_from_monday() as u8,
            weekday_report: (registration + Duration::days(delay as i64)).weekday().num_days_from_monday() as u8,
        }
    }

    pub fn fixed_values(&self, row: &DesignRow) -> Vec<f64> {
        let group = self.groups[row.group];
        self.fixed
            .iter()
            .map(|c| match *c {
                FixedColumn::Intercept => 1.0,
                FixedColumn::Delay(d) => (row.delay == d) as u8 as f64,
                FixedColumn::RegistrationWeekday(w) => (row.weekday_registration == w) as u8 as f64,
                FixedColumn::ReportWeekday(w) => (row.weekday_report == w) as u8 as f64,
                FixedColumn::Age(a) => (group.age == a) as u8 as f64,
                FixedColumn::Gender(g) => (group.gender == g) as u8 as f64,
                FixedColumn::ArTime => row.ar_time,
                FixedColumn::ArDelay => row.ar_delay,
            })
            .collect()
    }

    /// Time-smooth columns with the day clamped to the window, so days past
    /// the window reuse the last in-window value.
    pub fn time_values(&self, day: i64) -> Option<Vec<f64>> {
        let day = day.clamp(self.first_window_day(), self.last_window_day());
        self.time.as_ref().map(|t| t.row(day as f64))
    }

    /// Full coefficient-space encoding of a row (without the offset).
    pub fn encode(&self, row: &DesignRow) -> Vec<f64> {
        let mut x = vec![0.0; self.n_coefficients()];
        for b in &self.blocks {
            let out = &mut x[b.start..b.start + b.len];
            match b.kind {
                BlockKind::Fixed => out.copy_from_slice(&self.fixed_values(row)),
                BlockKind::TimeSmooth => {
                    if let Some(v) = self.time_values(row.day) {
                        out.copy_from_slice(&v);
                    }
                }
                BlockKind::SpatialSmooth => {
                    let s = self.space.as_ref().expect("spatial block without smooth");
                    let cols = s.table.cols;
                    out.copy_from_slice(&s.table.data[row.district * cols..(row.district + 1) * cols]);
                }
                BlockKind::RandomLong => out[row.district] = 1.0,
                BlockKind::RandomShort => {
                    if self.is_short_term(row.day) {
                        out[row.district] = 1.0;
                    }
                }
            }
        }
        x
    }

    /// `eta = x' beta + offset`.
    pub fn linear_predictor(&self, coefficients: &[f64], row: &DesignRow) -> f64 {
        let x = self.encode(row);
        x.iter().zip(coefficients).map(|(a, b)| a * b).sum::<f64>() + row.offset
    }
}

/// Response, offsets and block-structured model matrix for one window.
#[derive(Debug, Clone)]
pub struct Design {
    pub layout: DesignLayout,
    pub rows: Vec<DesignRow>,
    pub matrix: ModelMatrix,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Design {
    /// Penalty blocks in the form the estimator consumes.
    pub fn penalties(&self) -> Vec<PenaltyBlock> {
        self.layout
            .blocks
            .iter()
            .filter_map(|b| {
                b.penalty.as_ref().map(|p| PenaltyBlock {
                    start: b.start,
                    matrix: DMatrix::from(p),
                    rank: b.penalty_rank,
                })
            })
            .collect()
    }

    /// Dumps the dense design with response and offset, one row per cell.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["response".to_string(), "offset".into(), "day".into(), "delay".into(), "district".into(), "group".into()];
        header.extend(self.layout.column_names());
        w.write_record(&header)?;
        let x = self.matrix.to_dense();
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![
                row.response.to_string(),
                row.offset.to_string(),
                row.day.to_string(),
                row.delay.to_string(),
                row.district.to_string(),
                row.group.to_string(),
            ];
            rec.extend(x.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A penalized coefficient block `beta[start..start+len]' S beta[..]`.
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub start: usize,
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

impl PenaltyBlock {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

fn rank_of(s: &DMatrix<f64>) -> usize {
    s.ncols() - spline::null_space(s).ncols()
}

fn levels_excluding_reference<T: Ord + Copy>(present: &BTreeSet<T>, preferred: T) -> Vec<T> {
    let reference = if present.contains(&preferred) {
        preferred
    } else {
        match present.iter().next() {
            Some(&first) => first,
            None => return Vec::new(),
        }
    };
    present.iter().copied().filter(|&l| l != reference).collect()
}

/// Assembles the design for the window of `spec.window_days` registration
/// days ending the day before `analysis_day`.
///
/// One row per observed cell `(t, d, r, g)` with `t + d <= T`, in
/// `(t, d, r, g)` order; strata with zero population are skipped. The AR
/// covariates read the triangle's cumulations, falling back to zero before
/// the first stored row.
pub fn build_design(
    tri: &CaseTriangle,
    cum: &CumTriangle,
    frame: &StratumFrame,
    spec: &ModelSpec,
    analysis_day: NaiveDate,
) -> Result<Design, DesignError> {
    spec.validate()?;
    if frame.len() != tri.n_districts() || frame.groups() != tri.groups() {
        return Err(DesignError::InvalidSpec("frame does not match the triangle's strata".into()));
    }
    if spec.d_max != tri.d_max() {
        return Err(DesignError::InvalidSpec(format!(
            "spec d_max {} differs from triangle d_max {}",
            spec.d_max,
            tri.d_max()
        )));
    }
    let n_groups = tri.n_groups();
    let n_districts = tri.n_districts();
    let anchor_row = tri.row_of(analysis_day);
    let log_population: Vec<Option<f64>> = (0..n_districts)
        .flat_map(|r| (0..n_groups).map(move |g| (r, g)))
        .map(|(r, g)| {
            let p = frame.population(r, g);
            (p > 0).then(|| (p as f64).ln())
        })
        .collect();

    let mut layout = DesignLayout {
        spec: spec.clone(),
        anchor: analysis_day,
        n_districts,
        groups: tri.groups().to_vec(),
        log_population,
        fixed: Vec::new(),
        time: None,
        space: None,
        blocks: Vec::new(),
    };

    let mut rows = Vec::new();
    let first = anchor_row - spec.window_days as i64;
    for t in first.max(0)..anchor_row {
        for d in 1..=spec.d_max {
            if t + d as i64 > anchor_row {
                break;
            }
            for r in 0..n_districts {
                for g in 0..n_groups {
                    if layout.log_population[r * n_groups + g].is_none() {
                        continue;
                    }
                    let Some(y) = tri.get(t, d, r, g) else { continue };
                    let prev = cum.get(t - 1, d, r, g).unwrap_or(0) as f64;
                    let same = if d > 1 { cum.get(t, d - 1, r, g).unwrap_or(0) as f64 } else { 0.0 };
                    rows.push(layout.make_row(tri.date_of(t), d, r, g, prev, same, y as f64));
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(DesignError::EmptyWindow(analysis_day));
    }
    let n = rows.len();

    // fixed effects
    let reg_days: BTreeSet<u8> = rows.iter().map(|r| r.weekday_registration).collect();
    let rep_days: BTreeSet<u8> = rows.iter().map(|r| r.weekday_report).collect();
    let ages: BTreeSet<AgeGroup> = rows.iter().map(|r| layout.groups[r.group].age).collect();
    let genders: BTreeSet<Gender> = rows.iter().map(|r| layout.groups[r.group].gender).collect();
    let delays: BTreeSet<usize> = rows.iter().map(|r| r.delay).collect();
    let mut fixed = vec![FixedColumn::Intercept];
    fixed.extend(levels_excluding_reference(&delays, 1).into_iter().map(FixedColumn::Delay));
    fixed.extend(levels_excluding_reference(&reg_days, 0).into_iter().map(FixedColumn::RegistrationWeekday));
    fixed.extend(levels_excluding_reference(&rep_days, 0).into_iter().map(FixedColumn::ReportWeekday));
    fixed.extend(levels_excluding_reference(&ages, AgeGroup::REFERENCE).into_iter().map(FixedColumn::Age));
    fixed.extend(levels_excluding_reference(&genders, Gender::REFERENCE).into_iter().map(FixedColumn::Gender));
    if spec.include_ar_time {
        fixed.push(FixedColumn::ArTime);
    }
    if spec.include_ar_delay {
        fixed.push(FixedColumn::ArDelay);
    }
    layout.fixed = fixed;
    let p_fixed = layout.fixed.len();
    layout.blocks.push(BlockInfo { kind: BlockKind::Fixed, start: 0, len: p_fixed, penalty: None, penalty_rank: 0 });
    let fixed_values: Vec<f64> = rows.iter().flat_map(|r| layout.fixed_values(r)).collect();

    let mut blocks = Vec::new();
    let mut start = p_fixed;

    // time smooth
    {
        let first_day = layout.first_window_day();
        let n_days = spec.window_days;
        let spline = BSpline::new(first_day as f64, layout.last_window_day() as f64, spec.time_basis_dim)?;
        let distinct: BTreeSet<i64> = rows.iter().map(|r| r.day).collect();
        if distinct.len() < spec.time_basis_dim {
            return Err(DesignError::DegenerateKnots(format!(
                "{} distinct registration days cannot support a time basis of dimension {}",
                distinct.len(),
                spec.time_basis_dim
            )));
        }
        let raw = DMatrix::from_fn(n_days, spec.time_basis_dim, |i, j| spline.eval((first_day + i as i64) as f64)[j]);
        let mut counts = DVector::zeros(n_days);
        for r in &rows {
            counts[(r.day - first_day) as usize] += 1.0;
        }
        let c = raw.tr_mul(&counts);
        let z = spline::sum_to_zero_constraint(&c);
        let table = &raw * &z;
        let penalty = z.transpose() * spline::difference_penalty(spec.time_basis_dim, spec.penalty_order) * &z;
        let penalty = (&penalty + penalty.transpose()) * 0.5;
        let len = table.ncols();
        layout.blocks.push(BlockInfo {
            kind: BlockKind::TimeSmooth,
            start,
            len,
            penalty_rank: rank_of(&penalty),
            penalty: Some(StoredMatrix::from(&penalty)),
        });
        layout.time = Some(TimeSmooth { spline, constraint: StoredMatrix::from(&z) });
        let keys = rows.iter().map(|r| Some((r.day - first_day) as u32)).collect();
        blocks.push(IndexedBlock::lookup(keys, table));
        start += len;
    }

    // spatial smooth
    {
        let coords = frame.coordinates();
        let ts = TensorSpline::from_coords(&coords, spec.spatial_basis_dim_per_axis)?;
        let dim = ts.dim();
        let raw = DMatrix::from_fn(n_districts, dim, |r, j| ts.eval(coords[r].0, coords[r].1)[j]);
        let mut counts = DVector::zeros(n_districts);
        for r in &rows {
            counts[r.district] += 1.0;
        }
        let z = spline::sum_to_zero_constraint(&raw.tr_mul(&counts));
        let table = &raw * &z;
        let penalty = z.transpose() * ts.penalty(spec.penalty_order) * &z;
        let penalty = spline::shrink_null_space(&((&penalty + penalty.transpose()) * 0.5), 0.1);
        let len = table.ncols();
        layout.blocks.push(BlockInfo {
            kind: BlockKind::SpatialSmooth,
            start,
            len,
            penalty_rank: rank_of(&penalty),
            penalty: Some(StoredMatrix::from(&penalty)),
        });
        layout.space = Some(SpatialSmooth { spline: ts, table: StoredMatrix::from(&table) });
        let keys = rows.iter().map(|r| Some(r.district as u32)).collect();
        blocks.push(IndexedBlock::lookup(keys, table));
        start += len;
    }

    if spec.include_re {
        let ident = DMatrix::<f64>::identity(n_districts, n_districts);
        layout.blocks.push(BlockInfo {
            kind: BlockKind::RandomLong,
            start,
            len: n_districts,
            penalty: Some(StoredMatrix::from(&ident)),
            penalty_rank: n_districts,
        });
        blocks.push(IndexedBlock::one_hot(rows.iter().map(|r| Some(r.district as u32)).collect(), n_districts));
        start += n_districts;
        if spec.include_re_short {
            layout.blocks.push(BlockInfo {
                kind: BlockKind::RandomShort,
                start,
                len: n_districts,
                penalty: Some(StoredMatrix::from(&ident)),
                penalty_rank: n_districts,
            });
            let keys = rows
                .iter()
                .map(|r| layout.is_short_term(r.day).then_some(r.district as u32))
                .collect();
            blocks.push(IndexedBlock::one_hot(keys, n_districts));
        }
    }

    let matrix = ModelMatrix::new(n, p_fixed, fixed_values, blocks);
    check_identifiability(&matrix, &layout)?;
    let y = rows.iter().map(|r| r.response).collect();
    let offset = rows.iter().map(|r| r.offset).collect();
    Ok(Design { layout, rows, matrix, y, offset })
}

/// The unpenalized directions (fixed columns plus penalty null spaces) must
/// have full column rank.
fn check_identifiability(matrix: &ModelMatrix, layout: &DesignLayout) -> Result<(), DesignError> {
    let p = matrix.ncols();
    let gram = matrix.weighted_gram(&vec![1.0; matrix.nrows()]);
    let names = layout.column_names();
    let mut dirs: Vec<(String, DVector<f64>)> = Vec::new();
    for b in &layout.blocks {
        match &b.penalty {
            None => {
                for j in 0..b.len {
                    let mut e = DVector::zeros(p);
                    e[b.start + j] = 1.0;
                    dirs.push((names[b.start + j].clone(), e));
                }
            }
            Some(s) => {
                let ns = spline::null_space(&DMatrix::from(s));
                for j in 0..ns.ncols() {
                    let mut e = DVector::zeros(p);
                    e.rows_mut(b.start, b.len).copy_from(&ns.column(j));
                    dirs.push((format!("{}_null_{j}", b.kind.name()), e));
                }
            }
        }
    }
    let q = dirs.len();
    let e = DMatrix::from_fn(p, q, |i, j| dirs[j].1[i]);
    let g = e.transpose() * gram * &e;
    for j in 0..q {
        if g[(j, j)] <= 1e-12 {
            return Err(DesignError::RankDeficient(format!("column {} is identically zero", dirs[j].0)));
        }
    }
    let scale = DVector::from_fn(q, |j, _| 1.0 / g[(j, j)].sqrt());
    let gs = DMatrix::from_fn(q, q, |i, j| g[(i, j)] * scale[i] * scale[j]);
    let eig = gs.symmetric_eigen();
    let (imin, &min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least the intercept");
    if min < 1e-10 {
        let v = eig.eigenvectors.column(imin);
        let involved: Vec<&str> = (0..q).filter(|&j| v[j].abs() > 0.1).map(|j| dirs[j].0.as_str()).collect();
        return Err(DesignError::RankDeficient(format!("collinear columns: {}", involved.join(", "))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_registry_is_complete_and_distinct() {
        let specs: Vec<ModelSpec> = Variant::ALL.iter().map(|v| v.spec()).collect();
        assert_eq!(specs.len(), 8);
        for (i, a) in specs.iter().enumerate() {
            a.validate().unwrap();
            for b in &specs[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(ModelSpec::default(), Variant::NoArTime.spec());
        assert_eq!("no_re".parse::<Variant>().unwrap(), Variant::NoRe);
    }

    #[test]
    fn spec_validation() {
        let mut s = Variant::Full.spec();
        s.include_re = false;
        assert!(s.validate().is_err());
        let mut s = Variant::Full.spec();
        s.k_short = 30;
        assert!(s.validate().is_err());
        let mut s = Variant::Full.spec();
        s.time_basis_dim = 2;
        assert!(s.validate().is_err());
    }
}
