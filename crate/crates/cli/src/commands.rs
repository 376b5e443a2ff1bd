use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use chrono::{Duration, NaiveDate};
use log::info;
use serde::{Deserialize, Serialize};

use delaycast::design::{build_design, ModelSpec, Variant};
use delaycast::estimate::{self, FitOptions, FittedModel};
use delaycast::evaluate::{self, NamedSpec, RollingOptions};
use delaycast::predict::{self, PredictOptions};
use delaycast::strata::StratumFrame;
use delaycast::synth::{self, Regime, ScenarioSpec};
use delaycast::triangle::{
    cumulate, merge_snapshots, read_frame_csv, read_snapshot_dir, write_frame_csv, write_snapshot_csv, CaseTriangle,
    MergeOptions, MergeReport, NegativePolicy, Snapshot, TargetKind,
};

use crate::config::{pick, pick_path, Config};
use crate::error::UsageError;
use crate::{DataArgs, EvaluateArgs, FitArgs, IngestArgs, PredictArgs, SimulateArgs};

const TRIANGLE_FORMAT: &str = "delaycast-triangle";
const TRIANGLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Policy(pub NegativePolicy);

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clamp" => Ok(Policy(NegativePolicy::Clamp)),
            "reject" => Ok(Policy(NegativePolicy::Reject)),
            other => Err(format!("unknown negative-increment policy '{other}' (clamp or reject)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TriangleCache {
    format: String,
    version: u32,
    triangle: CaseTriangle,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| usage(format!("missing --{what} (flag or config key)")))?;
    Ok(p)
}

fn existing(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = required(path, what)?;
    if !p.exists() {
        return Err(usage(format!("{what} path {} does not exist", p.display())));
    }
    Ok(p)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_frame(config: &Config, data: &DataArgs) -> Result<StratumFrame> {
    let path = existing(pick_path(data.frame.clone(), config, "frame"), "frame")?;
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    read_frame_csv(file).with_context(|| format!("reading frame {}", path.display()))
}

fn load_snapshots(config: &Config, data: &DataArgs) -> Result<Vec<Snapshot>> {
    let dir = existing(pick_path(data.snapshots.clone(), config, "snapshots"), "snapshots")?;
    let read = read_snapshot_dir(&dir).with_context(|| format!("reading snapshots from {}", dir.display()))?;
    if read.dropped_unknown_strata > 0 {
        info!("dropped {} records with unknown age or gender", read.dropped_unknown_strata);
    }
    if read.snapshots.is_empty() {
        anyhow::bail!("no snapshot records in {}", dir.display());
    }
    Ok(read.snapshots)
}

fn policy(config: &Config, data: &DataArgs) -> Result<NegativePolicy> {
    Ok(pick(data.policy, config, "policy")?.map_or(NegativePolicy::Clamp, |p| p.0))
}

fn anchor_in_span(anchor: NaiveDate, snapshots: &[Snapshot]) -> Result<()> {
    let (first, last) = (snapshots[0].report_date, snapshots[snapshots.len() - 1].report_date);
    if anchor < first || anchor > last {
        return Err(usage(format!("anchor {anchor} outside the archive span {first}..{last}")));
    }
    Ok(())
}

/// Merges the snapshots reported up to `anchor` over the registration days
/// a model with `window_days` needs.
fn merge_until(
    snapshots: &[Snapshot],
    frame: &StratumFrame,
    anchor: NaiveDate,
    spec: &ModelSpec,
    policy: NegativePolicy,
) -> Result<(CaseTriangle, MergeReport)> {
    anchor_in_span(anchor, snapshots)?;
    let upto = snapshots.partition_point(|s| s.report_date <= anchor);
    let opts = MergeOptions {
        d_max: spec.d_max,
        policy,
        min_registration: Some(anchor - Duration::days(spec.window_days as i64 + 1)),
    };
    Ok(merge_snapshots(&snapshots[..upto], frame, &opts)?)
}

fn read_cache(path: &Path) -> Result<CaseTriangle> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cache: TriangleCache =
        serde_json::from_str(&text).with_context(|| format!("parsing triangle cache {}", path.display()))?;
    if cache.format != TRIANGLE_FORMAT || cache.version != TRIANGLE_VERSION {
        anyhow::bail!("{} is not a version {TRIANGLE_VERSION} triangle cache", path.display());
    }
    Ok(cache.triangle)
}

/// Triangle from a cache or from snapshots, cut at the anchor if one is given.
fn load_triangle(
    config: &Config,
    data: &DataArgs,
    cache: Option<PathBuf>,
    frame: &StratumFrame,
    spec: &ModelSpec,
    anchor: Option<NaiveDate>,
) -> Result<CaseTriangle> {
    if let Some(path) = pick_path(cache, config, "triangle") {
        let path = existing(Some(path), "triangle")?;
        let tri = read_cache(&path)?;
        return match anchor {
            None => Ok(tri),
            Some(a) if a > tri.analysis_date() || a < tri.origin() => {
                Err(usage(format!("anchor {a} outside the cached triangle ({}..{})", tri.origin(), tri.analysis_date())))
            }
            Some(a) => Ok(tri.truncated(a)),
        };
    }
    let snapshots = load_snapshots(config, data)?;
    let anchor = anchor.unwrap_or(snapshots[snapshots.len() - 1].report_date);
    Ok(merge_until(&snapshots, frame, anchor, spec, policy(config, data)?)?.0)
}

fn parse_variant(name: &str) -> Result<Variant> {
    Variant::from_str(name).map_err(|e| {
        let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        usage(format!("{e}; known variants: {}", known.join(", ")))
    })
}

fn model_spec(config: &Config, variant: Option<String>) -> Result<(String, ModelSpec)> {
    let base = config.model_spec(ModelSpec::default())?;
    let name = pick(variant, config, "variant")?;
    let (name, spec) = match name {
        Some(n) => {
            let v = parse_variant(&n)?;
            (v.name().to_string(), v.apply(&base))
        }
        None => (Variant::DEFAULT.name().to_string(), base),
    };
    spec.validate()?;
    Ok((name, spec))
}

pub fn ingest(config: &Config, args: IngestArgs) -> Result<()> {
    let (_, spec) = model_spec(config, None)?;
    let frame = load_frame(config, &args.data)?;
    let snapshots = load_snapshots(config, &args.data)?;
    let anchor = pick(args.data.anchor, config, "anchor")?.unwrap_or(snapshots[snapshots.len() - 1].report_date);
    let (tri, report) = merge_until(&snapshots, &frame, anchor, &spec, policy(config, &args.data)?)?;
    let out = required(pick_path(args.out, config, "out"), "out")?;
    let cache = TriangleCache { format: TRIANGLE_FORMAT.into(), version: TRIANGLE_VERSION, triangle: tri };
    let mut w = create(&out)?;
    serde_json::to_writer(&mut w, &cache)?;
    w.flush()?;

    let tri = &cache.triangle;
    println!("anchor {anchor}, registration dates {}..{}", tri.origin(), tri.date_of(tri.n_rows() as i64 - 1));
    println!(
        "snapshots {}, records {}, negative increments {}, unknown strata dropped {}",
        report.snapshots, report.records, report.negative_increments, report.dropped_unknown_strata
    );
    let total: u64 = report.delay_histogram.iter().sum();
    let shares: Vec<String> = report
        .delay_histogram
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| format!("d{}={:.1}%", i + 1, 100.0 * c as f64 / total.max(1) as f64))
        .collect();
    println!("delay distribution: {}", shares.join(" "));
    println!("cases beyond delay {} folded into it: {}", tri.d_max(), report.folded_cases);
    Ok(())
}

pub fn fit(config: &Config, args: FitArgs) -> Result<()> {
    let (name, spec) = model_spec(config, args.variant)?;
    let frame = load_frame(config, &args.data)?;
    let anchor = pick(args.data.anchor, config, "anchor")?;
    let tri = load_triangle(config, &args.data, args.triangle, &frame, &spec, anchor)?;
    let anchor = tri.analysis_date();
    let design = build_design(&tri, &cumulate(&tri), &frame, &spec, anchor)?;
    if let Some(p) = args.design_csv {
        let mut w = create(&p)?;
        design.write_csv(&mut w)?;
        w.flush()?;
    }
    let model = estimate::fit(&design, &FitOptions::default())?;
    let out = required(pick_path(args.out, config, "out"), "out")?;
    let mut w = create(&out)?;
    w.write_all(model.to_json()?.as_bytes())?;
    w.flush()?;
    let d = &model.diagnostics;
    println!(
        "variant {name}, anchor {anchor}: {} rows, theta {:.4}, total edf {:.1}, {} outer iterations, converged {}",
        model.n_observations, model.theta, d.total_edf, d.outer_iterations, d.converged
    );
    if d.theta_at_boundary {
        log::warn!("theta pinned at a bound ({})", model.theta);
    }
    Ok(())
}

fn parse_kinds(list: &str) -> Result<(Vec<TargetKind>, bool)> {
    let mut kinds = Vec::new();
    let mut incidence = false;
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "incidence" {
            incidence = true;
        } else {
            let k = TargetKind::from_str(item).map_err(usage)?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
    }
    if incidence && !kinds.contains(&TargetKind::Nowcast) {
        return Err(usage("incidence is derived from the nowcast; request nowcast as well"));
    }
    if kinds.is_empty() {
        return Err(usage("no target kind requested"));
    }
    Ok((kinds, incidence))
}

pub fn predict(config: &Config, args: PredictArgs) -> Result<()> {
    let (kinds, incidence) = parse_kinds(&args.kind)?;
    let model_path = existing(pick_path(args.model, config, "model"), "model")?;
    let text = fs::read_to_string(&model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model = FittedModel::from_json(&text).with_context(|| format!("loading model {}", model_path.display()))?;
    let frame = load_frame(config, &args.data)?;
    let tri = load_triangle(config, &args.data, args.triangle, &frame, model.spec(), Some(model.anchor()))?;
    let spec = model.spec();
    let opts = PredictOptions {
        k: args.k,
        bootstrap_n: pick(args.n, config, "bootstrap_n")?.unwrap_or(spec.bootstrap_n),
        level: pick(args.level, config, "interval_level")?.unwrap_or(spec.interval_level),
        seed: pick(args.seed, config, "seed")?.unwrap_or(0),
        kinds,
    };
    let set = predict::predict(&model, &tri, &opts)?;
    let out = required(pick_path(args.out, config, "out"), "out")?;
    let mut w = create(&out)?;
    predict::write_predictions_csv(&mut w, &set, &frame, incidence)?;
    w.flush()?;
    if let Some(p) = args.geojson {
        let mut w = create(&p)?;
        predict::write_geojson(&mut w, &set, &frame)?;
        w.flush()?;
    }
    println!("anchor {}: {} targets x {} districts, {} replicates", set.anchor, set.targets.len(), frame.len(), set.bootstrap_n);
    Ok(())
}

fn anchors(args: &EvaluateArgs, config: &Config, snapshots: &[Snapshot]) -> Result<Vec<NaiveDate>> {
    let list: Vec<NaiveDate> = if let Some(s) = &args.anchors {
        s.split(',')
            .map(|a| NaiveDate::from_str(a.trim()).map_err(|e| usage(format!("anchor '{a}': {e}"))))
            .collect::<Result<_>>()?
    } else if let (Some(from), Some(to)) = (args.from, args.to) {
        if args.step == 0 || to < from {
            return Err(usage("need --from <= --to and --step >= 1"));
        }
        std::iter::successors(Some(from), |d| Some(*d + Duration::days(args.step as i64)))
            .take_while(|d| *d <= to)
            .collect()
    } else if let Some(a) = pick(args.data.anchor, config, "anchor")? {
        vec![a]
    } else {
        return Err(usage("no anchors: use --anchors, --from/--to, or --anchor"));
    };
    for &a in &list {
        anchor_in_span(a, snapshots)?;
    }
    Ok(list)
}

pub fn evaluate(config: &Config, args: EvaluateArgs) -> Result<()> {
    let base = config.model_spec(ModelSpec::default())?;
    let names = args.variants.clone().or(config.get::<String>("variant")?);
    let variants: Vec<NamedSpec> = match names.as_deref() {
        None => vec![NamedSpec::new(Variant::DEFAULT.name(), base.clone())],
        Some("all") => Variant::ALL.iter().map(|v| NamedSpec::new(v.name(), v.apply(&base))).collect(),
        Some(list) => list
            .split(',')
            .map(|n| parse_variant(n.trim()).map(|v| NamedSpec::new(v.name(), v.apply(&base))))
            .collect::<Result<_>>()?,
    };
    for v in &variants {
        v.spec.validate()?;
    }
    let frame = load_frame(config, &args.data)?;
    let snapshots = load_snapshots(config, &args.data)?;
    let anchors = anchors(&args, config, &snapshots)?;
    let opts = RollingOptions {
        k: args.k,
        bootstrap_n: args.bootstrap,
        level: pick(args.level, config, "interval_level")?.unwrap_or(base.interval_level),
        seed: pick(args.seed, config, "seed")?.unwrap_or(0),
        policy: policy(config, &args.data)?,
        ..Default::default()
    };
    let report = evaluate::rolling_evaluation(&snapshots, &frame, &variants, &anchors, &opts)?;
    let out = required(pick_path(args.out, config, "out"), "out")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = create(&out.join("report.csv"))?;
    evaluate::write_report_csv(&mut w, &report)?;
    w.flush()?;
    let mut w = create(&out.join("rpe.csv"))?;
    evaluate::write_rpe_csv(&mut w, &report, &frame)?;
    w.flush()?;
    let mut w = create(&out.join("skipped.csv"))?;
    evaluate::write_skipped_csv(&mut w, &report)?;
    w.flush()?;

    for v in &variants {
        let cells: Vec<String> = TargetKind::ALL
            .iter()
            .map(|&k| format!("{} {:.2}", k.short(), report.mean_over_anchors(&v.name, k, |e| e.marpe)))
            .collect();
        println!("{}: mean MARPE {}", v.name, cells.join(", "));
    }
    if !report.skipped.is_empty() {
        println!("{} entries skipped, see skipped.csv", report.skipped.len());
    }
    Ok(())
}

pub fn simulate(config: &Config, args: SimulateArgs) -> Result<()> {
    let mut spec = match &args.scenario {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("scenario {}: {e}", p.display())))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(r) = &args.regime {
        spec.regime = Regime::from_str(r).map_err(usage)?;
    }
    if let Some(n) = args.districts {
        spec.n_districts = n;
    }
    if let Some(n) = args.days {
        spec.n_days = n;
    }
    if let Some(d) = args.start {
        spec.start_date = d;
    }
    let seed = pick(args.seed, config, "seed")?.unwrap_or(0);
    let out = required(pick_path(args.out, config, "out"), "out")?;
    let sc = synth::generate(&spec, seed)?;

    let snap_dir = out.join("snapshots");
    fs::create_dir_all(&snap_dir).with_context(|| format!("creating {}", snap_dir.display()))?;
    for s in &sc.snapshots {
        let mut w = create(&snap_dir.join(format!("{}.csv", s.report_date)))?;
        write_snapshot_csv(&mut w, s)?;
        w.flush()?;
    }
    let mut w = create(&out.join("frame.csv"))?;
    write_frame_csv(&mut w, &sc.frame)?;
    w.flush()?;
    let mut w = create(&out.join("truth.csv"))?;
    synth::write_truth_csv(&mut w, &sc.truth, &sc.frame)?;
    w.flush()?;
    let mut w = create(&out.join("scenario.json"))?;
    serde_json::to_writer_pretty(&mut w, &spec)?;
    w.flush()?;
    println!(
        "{} districts, {} days from {}, {} snapshots written to {}",
        spec.n_districts,
        spec.n_days,
        spec.start_date,
        sc.snapshots.len(),
        out.display()
    );
    Ok(())
}
