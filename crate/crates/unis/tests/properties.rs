//! Randomized invariant checks: construction is lossless and structurally
//! sound, every search strategy returns the linear-scan answer, the CDF
//! model behaves like a distribution function, and snapshots round-trip.

use proptest::collection::vec;
use proptest::prelude::*;
use unis::geometry::Point;
use unis::quantile::{cdf_train, predict_quantile_value};
use unis::search::{self, SearchStrategy};
use unis::snapshot::{load_tree, save_tree};
use unis::tree::{build, route_child, BmkdTree, TChoice, TreeConfig};

fn cfg(c: usize, t: usize, seed: u64) -> TreeConfig {
    TreeConfig { c, t: TChoice::Fixed(t), omega: 0.9, rng_seed: seed, ..TreeConfig::default() }
}

fn to_points(rows: Vec<Vec<f64>>) -> Vec<Point> {
    rows.into_iter().enumerate().map(|(i, coords)| Point::new(i as u64, coords)).collect()
}

/// `n` points of dimension `d` with coordinates in a bounded range.
fn points_strategy(max_n: usize) -> impl Strategy<Value = Vec<Point>> {
    (1usize..=4, 1usize..=max_n)
        .prop_flat_map(|(d, n)| vec(vec(-100.0..100.0f64, d), n))
        .prop_map(to_points)
}

/// Integer-grid coordinates: heavy duplication across and within dimensions.
fn gridded_points_strategy() -> impl Strategy<Value = Vec<Point>> {
    (1usize..=3, 1usize..=120)
        .prop_flat_map(|(d, n)| vec(vec((0i32..5).prop_map(f64::from), d), n))
        .prop_map(to_points)
}

fn sorted_ids(mut ids: Vec<u64>) -> Vec<u64> {
    ids.sort_unstable();
    ids
}

fn multiset(points: &[Point]) -> Vec<(u64, Vec<u64>)> {
    let mut m: Vec<(u64, Vec<u64>)> =
        points.iter().map(|p| (p.id, p.coords.iter().map(|c| c.to_bits()).collect())).collect();
    m.sort();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn build_preserves_the_point_multiset_and_audits_clean(
        points in points_strategy(300), seed in 0u64..1000, t in 2usize..=4,
    ) {
        let before = multiset(&points);
        let tree = build(points, cfg(8, t, seed)).unwrap();
        prop_assert_eq!(multiset(&tree.root.collect_points()), before);
        prop_assert!(tree.audit_structure().is_ok(), "{:?}", tree.audit_structure());
    }

    #[test]
    fn duplicated_coordinates_still_build_and_audit_clean(
        points in gridded_points_strategy(), seed in 0u64..1000,
    ) {
        let n = points.len();
        let d = points[0].dims();
        let mut tree = build(points, cfg(4, 3, seed)).unwrap();
        prop_assert_eq!(tree.len(), n);
        prop_assert!(tree.audit_structure().is_ok(), "{:?}", tree.audit_structure());
        prop_assert_eq!(tree.actionable_balance_violations(), 0);

        // Piling more mass onto the same few grid values must not leave
        // violations that a rebuild could have repaired.
        let batch: Vec<Point> =
            (0..60).map(|i| Point::new((n + i) as u64, vec![2.0; d])).collect();
        tree.insert(batch).unwrap();
        prop_assert!(tree.audit_structure().is_ok(), "{:?}", tree.audit_structure());
        prop_assert_eq!(tree.actionable_balance_violations(), 0);
    }

    #[test]
    fn insert_preserves_points_and_structure(
        initial in points_strategy(150),
        extra in vec(vec(-100.0..100.0f64, 3), 1..150),
        seed in 0u64..1000,
    ) {
        // Force both sets to 3-d so the batch is insertable.
        let initial: Vec<Point> = initial
            .into_iter()
            .map(|p| {
                let mut c = p.coords;
                c.resize(3, 0.0);
                Point::new(p.id, c)
            })
            .collect();
        let n0 = initial.len();
        let batch: Vec<Point> =
            extra.into_iter().enumerate().map(|(i, c)| Point::new((n0 + i) as u64, c)).collect();
        let mut all = initial.clone();
        all.extend(batch.iter().cloned());
        let expected = multiset(&all);

        let mut tree = build(initial, cfg(6, 3, seed)).unwrap();
        tree.insert(batch).unwrap();
        prop_assert_eq!(multiset(&tree.root.collect_points()), expected);
        prop_assert!(tree.audit_structure().is_ok(), "{:?}", tree.audit_structure());
        prop_assert_eq!(tree.actionable_balance_violations(), 0);
    }

    #[test]
    fn every_strategy_matches_the_linear_scan(
        points in points_strategy(250),
        queries in vec(vec(-120.0..120.0f64, 4), 1..6),
        k in 1usize..20,
        r in 0.0..80.0f64,
        seed in 0u64..1000,
    ) {
        let d = points[0].dims();
        let reference = points.clone();
        let tree = build(points, cfg(8, 3, seed)).unwrap();
        for q in &queries {
            let q = Point::new(u64::MAX, q[..d].to_vec());
            let lin_knn = search::linear_knn(&reference, &q, k);
            let lin_rad = sorted_ids(search::linear_radius(&reference, &q, r));
            for s in SearchStrategy::ALL {
                let got = search::knn(&tree, &q, k, s);
                prop_assert_eq!(&got.hits, &lin_knn.hits, "kNN, strategy {}", s);
                let got_rad = sorted_ids(search::radius(&tree, &q, r, s));
                prop_assert_eq!(&got_rad, &lin_rad, "radius, strategy {}", s);
            }
        }
    }

    #[test]
    fn knn_results_grow_by_prefix_and_contain_the_radius_ball(
        points in points_strategy(200),
        q in vec(-120.0..120.0f64, 4),
        k in 1usize..15,
        seed in 0u64..1000,
    ) {
        let d = points[0].dims();
        let n = points.len();
        let tree = build(points, cfg(8, 2, seed)).unwrap();
        let q = Point::new(u64::MAX, q[..d].to_vec());
        let small = search::knn(&tree, &q, k, SearchStrategy::RDfs);
        let large = search::knn(&tree, &q, k + 3, SearchStrategy::BBfs);
        // Deterministic (distance, id) ordering makes smaller-k results
        // exact prefixes of larger-k results.
        prop_assert_eq!(&large.hits[..small.hits.len()], &small.hits[..]);

        if let Some(&(_, kth_dist)) = small.hits.last() {
            let ball = search::radius(&tree, &q, kth_dist, SearchStrategy::RBfs);
            for &(id, _) in &small.hits {
                prop_assert!(ball.contains(&id), "kNN hit {id} missing from its own ball");
            }
            prop_assert!(ball.len() >= small.hits.len().min(n));
        }
    }

    #[test]
    fn snapshot_round_trip_preserves_len_audit_and_answers(
        points in points_strategy(200),
        q in vec(-120.0..120.0f64, 4),
        seed in 0u64..1000,
    ) {
        let d = points[0].dims();
        let tree = build(points, cfg(8, 3, seed)).unwrap();
        let mut buf = Vec::new();
        save_tree(&tree, &mut buf).unwrap();
        let restored = load_tree(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(restored.len(), tree.len());
        prop_assert!(restored.audit_structure().is_ok());
        let q = Point::new(u64::MAX, q[..d].to_vec());
        for s in SearchStrategy::ALL {
            prop_assert_eq!(
                search::knn(&restored, &q, 5, s).hits,
                search::knn(&tree, &q, 5, s).hits
            );
        }
        // Saving the restored tree reproduces the bytes exactly.
        let mut buf2 = Vec::new();
        save_tree(&restored, &mut buf2).unwrap();
        prop_assert_eq!(buf, buf2);
    }

    #[test]
    fn cdf_predictions_are_monotone_and_bounded(
        mut values in vec(-1000.0..1000.0f64, 20..400),
        probes in vec(-1200.0..1200.0f64, 10),
        seed in 0u64..1000,
    ) {
        let model = cdf_train(&values, 1.0, 16, seed).unwrap();
        let mut sorted_probes = probes;
        sorted_probes.sort_by(f64::total_cmp);
        let mut last = 0.0;
        for &x in &sorted_probes {
            let p = predict_quantile_value(&model, x);
            prop_assert!((0.0..=1.0).contains(&p), "predict({x}) = {p}");
            prop_assert!(p >= last - 1e-12, "not monotone: {p} after {last}");
            last = p;
        }
        values.sort_by(f64::total_cmp);
        prop_assert_eq!(predict_quantile_value(&model, values[0] - 1.0), 0.0);
        prop_assert!(predict_quantile_value(&model, values[values.len() - 1] + 1.0) >= 1.0 - 1e-12);
    }

    #[test]
    fn route_child_picks_the_enclosing_pivot_interval(
        mut pivots in vec(-100.0..100.0f64, 1..8),
        x in -150.0..150.0f64,
    ) {
        pivots.sort_by(f64::total_cmp);
        pivots.dedup();
        let i = route_child(&pivots, x);
        prop_assert!(i <= pivots.len());
        if i > 0 {
            prop_assert!(pivots[i - 1] < x, "left pivot must be strictly below x");
        }
        if i < pivots.len() {
            prop_assert!(pivots[i] >= x, "right pivot claims x (ties go left)");
        }
    }
}

/// Non-proptest regression: a tree built twice from the same inputs gives the
/// same structure (seeded RNG streams, no global state).
#[test]
fn rebuilding_from_identical_inputs_is_deterministic() {
    let make = || {
        let pts: Vec<Point> = (0..500)
            .map(|i| {
                let x = (i as f64 * 0.7133).sin() * 50.0;
                let y = (i as f64 * 1.9241).cos() * 50.0;
                Point::new(i, vec![x, y])
            })
            .collect();
        build(pts, cfg(10, 3, 77)).unwrap()
    };
    let (a, b): (BmkdTree, BmkdTree) = (make(), make());
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    save_tree(&a, &mut buf_a).unwrap();
    save_tree(&b, &mut buf_b).unwrap();
    assert_eq!(buf_a, buf_b);
}
