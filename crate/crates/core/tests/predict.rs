mod common;

use std::collections::HashMap;

use chrono::Duration;
use proptest::prelude::*;

use delaycast::design::Variant;
use delaycast::predict::{fill_cells, predict, quantile_type7, CellStatus, FillMode, FillPlan, PredictError, PredictOptions};
use delaycast::triangle::{aggregate_target, CellSource, TargetKind};

/// Row-major fill straight from the model's row encoding; both AR inputs of
/// a cell precede it in this order too.
#[test]
fn diagonal_fill_matches_row_major_oracle() {
    let sc = common::scenario(4, 60, 21);
    let anchor = sc.spec.start_date + Duration::days(48);
    let (tri, model) = common::fitted(&sc, anchor, Variant::Full);
    let k = 7;
    let filled = fill_cells(&model, &tri, k, FillMode::Mean).unwrap();
    let (d_max, n_groups) = (tri.d_max(), tri.n_groups());
    let t_anchor = filled.anchor();
    let first = t_anchor - Duration::days(model.spec().window_days as i64 + 1);
    let mut cells: HashMap<(i64, usize, usize), f64> = HashMap::new();
    let mut checked = 0;
    for t in 0..(model.spec().window_days as i64 + 1 + k as i64) {
        let date = first + Duration::days(t);
        for slot in 0..tri.n_slots() {
            let (r, g) = (slot / n_groups, slot % n_groups);
            let mut same = 0.0;
            for d in 1..=d_max {
                let v = if filled.status(date, d) == CellStatus::Observed {
                    tri.get(tri.row_of(date), d, r, g).unwrap() as f64
                } else {
                    let prev: f64 = (1..=d).map(|e| cells[&(t - 1, e, slot)]).sum();
                    let row = model.layout.make_row(date, d, r, g, prev, same, 0.0);
                    checked += 1;
                    model.linear_predictor(&row).exp()
                };
                cells.insert((t, d, slot), v);
                same += v;
                let got = filled.value(date, d, slot).unwrap();
                assert!((got - v).abs() <= 1e-10 * v.max(1.0), "{date} d={d} slot={slot}: {got} vs {v}");
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn observed_cells_are_kept_and_draws_are_counts() {
    let sc = common::scenario(3, 60, 22);
    let anchor = sc.spec.start_date + Duration::days(45);
    let (tri, model) = common::fitted(&sc, anchor, Variant::DEFAULT);
    let plan = FillPlan::new(&model, &tri, 7).unwrap();
    let draw = plan.fill(FillMode::Sampled { seed: 5, replicate: 3 });
    assert_eq!(draw, plan.fill(FillMode::Sampled { seed: 5, replicate: 3 }));
    assert_ne!(draw, plan.fill(FillMode::Sampled { seed: 5, replicate: 4 }));
    let first = anchor - Duration::days(model.spec().window_days as i64 + 1);
    for t in 0..draw.n_rows() as i64 {
        let date = first + Duration::days(t);
        for d in 1..=tri.d_max() {
            for slot in 0..tri.n_slots() {
                let v = draw.value(date, d, slot).unwrap();
                assert!(v >= 0.0 && v.fract() == 0.0);
                if draw.status(date, d) == CellStatus::Observed {
                    let (r, g) = (slot / tri.n_groups(), slot % tri.n_groups());
                    assert_eq!(v, tri.get(tri.row_of(date), d, r, g).unwrap() as f64);
                }
            }
        }
    }
}

/// Without AR terms the mean fill is the exact expectation of a draw.
#[test]
fn sampled_nowcasts_average_to_the_point_without_ar() {
    let sc = common::scenario(3, 60, 23);
    let anchor = sc.spec.start_date + Duration::days(45);
    let (tri, model) = common::fitted(&sc, anchor, Variant::NoAr);
    let plan = FillPlan::new(&model, &tri, 7).unwrap();
    let mean = plan.fill(FillMode::Mean);
    let n = 4000;
    for r in 0..tri.n_districts() {
        for kind in [TargetKind::Nowcast, TargetKind::Forenowcast] {
            let point = aggregate_target(&mean, anchor, r, kind, 7).unwrap();
            let xs: Vec<f64> = (0..n)
                .map(|b| aggregate_target(&plan.fill(FillMode::Sampled { seed: 1, replicate: b }), anchor, r, kind, 7).unwrap())
                .collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((m - point).abs() < 4.0 * se + 1e-9, "district {r} {kind:?}: {m} vs {point} (se {se})");
        }
    }
}

#[test]
fn intervals_are_ordered_nested_and_thread_invariant() {
    let sc = common::scenario(4, 60, 24);
    let anchor = sc.spec.start_date + Duration::days(46);
    let (tri, model) = common::fitted(&sc, anchor, Variant::DEFAULT);
    let opts = PredictOptions { bootstrap_n: 200, seed: 9, ..Default::default() };
    let run = |threads: usize, level: f64| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| predict(&model, &tri, &PredictOptions { level, ..opts.clone() }).unwrap())
    };
    let wide = run(1, 0.9);
    let wide3 = run(3, 0.9);
    let narrow = run(2, 0.5);
    for kind in TargetKind::ALL {
        let (w, w3, n) = (wide.get(kind).unwrap(), wide3.get(kind).unwrap(), narrow.get(kind).unwrap());
        assert_eq!(w, w3);
        assert_eq!(w.len(), tri.n_districts());
        for (a, b) in w.iter().zip(n) {
            assert!(a.lower <= a.upper && a.lower >= 0.0);
            assert!(a.lower <= b.lower && b.upper <= a.upper, "{kind:?}: {a:?} vs {b:?}");
            assert_eq!(a.point, b.point);
        }
    }
}

#[test]
fn nowcast_of_fully_reported_rows_is_the_reported_total() {
    let sc = common::scenario(3, 60, 25);
    let anchor = sc.spec.start_date + Duration::days(45);
    let (tri, model) = common::fitted(&sc, anchor, Variant::DEFAULT);
    let filled = fill_cells(&model, &tri, 0, FillMode::Mean).unwrap();
    // rows at least d_max days old are complete, so k = 1 a week back is exact
    let earlier = anchor - Duration::days(tri.d_max() as i64);
    for r in 0..tri.n_districts() {
        let got = aggregate_target(&filled, earlier, r, TargetKind::Nowcast, 1).unwrap();
        let row = tri.row_of(earlier - Duration::days(1));
        let want: u64 = (1..=tri.d_max()).flat_map(|d| (0..tri.n_groups()).map(move |g| (d, g))).map(|(d, g)| tri.get(row, d, r, g).unwrap()).sum();
        assert_eq!(got, want as f64);
    }
    assert_eq!(filled.origin(), anchor - Duration::days(model.spec().window_days as i64 + 1));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let sc = common::scenario(3, 60, 26);
    let anchor = sc.spec.start_date + Duration::days(45);
    let (tri, model) = common::fitted(&sc, anchor, Variant::DEFAULT);
    let other = common::known_at(&sc, anchor - Duration::days(1), 21);
    assert!(matches!(fill_cells(&model, &other, 7, FillMode::Mean), Err(PredictError::Mismatch(_))));
    let bad = [
        PredictOptions { bootstrap_n: 1, ..Default::default() },
        PredictOptions { level: 1.0, ..Default::default() },
        PredictOptions { k: 0, ..Default::default() },
    ];
    for o in bad {
        assert!(matches!(predict(&model, &tri, &o), Err(PredictError::InvalidArgument(_))));
    }
}

#[test]
fn type7_quantiles() {
    let xs = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile_type7(&xs, 0.0), 1.0);
    assert_eq!(quantile_type7(&xs, 0.5), 2.5);
    assert!((quantile_type7(&xs, 0.9) - 3.7).abs() < 1e-12);
    assert_eq!(quantile_type7(&xs, 1.0), 4.0);
    assert_eq!(quantile_type7(&[7.0], 0.3), 7.0);
}

proptest! {
    #[test]
    fn type7_is_monotone_and_bounded(mut xs in proptest::collection::vec(-1e3f64..1e3, 1..60), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        xs.sort_by(f64::total_cmp);
        let (a, b) = (quantile_type7(&xs, p.min(q)), quantile_type7(&xs, p.max(q)));
        prop_assert!(a <= b);
        prop_assert!(xs[0] <= a && b <= xs[xs.len() - 1]);
        // fraction of the sample at or below the quantile is at least p (n - 1) / n
        let below = xs.iter().filter(|&&x| x <= b).count() as f64;
        prop_assert!(below >= (p.max(q) * (xs.len() - 1) as f64).floor() + 1.0 - 1e-9);
    }
}
