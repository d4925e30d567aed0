//! Points, bounding volumes, and the pruning predicates used by every search
//! strategy.
//!
//! All coordinates are finite `f64`; distance comparisons use exact float
//! compare with no epsilon, so oracle recomputations are bit-stable.

/// A `d`-dimensional data point with a unique ingestion id.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub id: u64,
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(id: u64, coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|x| x.is_finite()));
        Point { id, coords }
    }

    pub fn dims(&self) -> usize {
        self.coords.len()
    }
}

/// Minimum bounding rectangle: per-dimension `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mbr {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Mbr {
    /// Tightest rectangle enclosing `points`. Panics on an empty slice.
    pub fn of_points(points: &[Point]) -> Mbr {
        assert!(!points.is_empty(), "MBR of empty point set");
        let d = points[0].dims();
        let mut lo = points[0].coords.clone();
        let mut hi = points[0].coords.clone();
        for p in &points[1..] {
            for i in 0..d {
                lo[i] = lo[i].min(p.coords[i]);
                hi[i] = hi[i].max(p.coords[i]);
            }
        }
        Mbr { lo, hi }
    }

    /// The axis-aligned box circumscribing the ball of radius `r` around `q`.
    pub fn of_ball(q: &[f64], r: f64) -> Mbr {
        Mbr { lo: q.iter().map(|x| x - r).collect(), hi: q.iter().map(|x| x + r).collect() }
    }

    /// Grows the rectangle to cover `p`.
    pub fn extend(&mut self, p: &[f64]) {
        for ((lo, hi), x) in self.lo.iter_mut().zip(&mut self.hi).zip(p) {
            *lo = lo.min(*x);
            *hi = hi.max(*x);
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }
}

/// Minimum bounding ball: a center with the exact max distance to it.
///
/// The center is the arithmetic mean of the points enclosed when the ball was
/// built; the radius is maintained as the exact maximum distance from the
/// stored center, so enclosure stays exact even as points are added.
#[derive(Debug, Clone, PartialEq)]
pub struct Mbb {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Mbb {
    /// Ball centered at the centroid of `points` with exact max-distance
    /// radius. Panics on an empty slice.
    pub fn of_points(points: &[Point]) -> Mbb {
        assert!(!points.is_empty(), "MBB of empty point set");
        let d = points[0].dims();
        let mut center = vec![0.0; d];
        for p in points {
            for (c, x) in center.iter_mut().zip(&p.coords) {
                *c += x;
            }
        }
        let n = points.len() as f64;
        for c in center.iter_mut() {
            *c /= n;
        }
        let radius = points.iter().map(|p| dist_coords(&p.coords, &center)).fold(0.0, f64::max);
        Mbb { center, radius }
    }

    /// Grows the radius so `p` stays enclosed; the center is kept.
    pub fn extend(&mut self, p: &[f64]) {
        self.radius = self.radius.max(dist_coords(p, &self.center));
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        dist_coords(p, &self.center) <= self.radius
    }
}

/// Euclidean distance between two points.
pub fn dist(a: &Point, b: &Point) -> f64 {
    dist_coords(&a.coords, &b.coords)
}

/// Euclidean distance between two coordinate slices.
pub fn dist_coords(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rectangle-rectangle test: true iff the boxes share at least one point,
/// i.e. `max(lo1_i, lo2_i) <= min(hi1_i, hi2_i)` in every dimension.
pub fn mbr_intersects(r1: &Mbr, r2: &Mbr) -> bool {
    assert_eq!(r1.dims(), r2.dims(), "dimension mismatch");
    r1.lo
        .iter()
        .zip(&r1.hi)
        .zip(r2.lo.iter().zip(&r2.hi))
        .all(|((lo1, hi1), (lo2, hi2))| lo1.max(*lo2) <= hi1.min(*hi2))
}

/// Relative slack on every pruning allowance. Distances, ball centers, and
/// ball radii are computed quantities, so a point lying exactly on the query
/// boundary can drift past an exact test by a few ulps and get cut from the
/// result. Inflating the allowance only admits hairline nodes, which
/// exactness requires visiting anyway; it never prunes more.
const PRUNE_SLACK: f64 = 1e-12;

/// The pruning allowance `x` widened by the rounding slack.
pub fn inflate_allowance(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    x * (1.0 + PRUNE_SLACK)
}

/// Ball-ball test: true iff every point inside `b` is strictly farther than
/// `r` from `q`, i.e. `dist(b.center, q) > b.radius + r` (with the rounding
/// slack on the right side).
///
/// The inequality is strict: boundary-touching balls are visited.
pub fn ball_ball_prunable(b: &Mbb, q: &[f64], r: f64) -> bool {
    debug_assert!(r >= 0.0);
    dist_coords(&b.center, q) > inflate_allowance(b.radius + r)
}

/// Minimum Euclidean distance from `q` to rectangle `r`: each coordinate is
/// clamped into `[lo_i, hi_i]` before measuring. Zero iff `q` is inside `r`.
pub fn min_dist_point_mbr(q: &[f64], r: &Mbr) -> f64 {
    assert_eq!(q.len(), r.dims(), "dimension mismatch");
    q.iter()
        .zip(r.lo.iter().zip(&r.hi))
        .map(|(x, (lo, hi))| {
            let clamped = x.clamp(*lo, *hi);
            (x - clamped) * (x - clamped)
        })
        .sum::<f64>()
        .sqrt()
}

/// Minimum Euclidean distance from `q` to ball `b` (zero if inside).
pub fn min_dist_point_mbb(q: &[f64], b: &Mbb) -> f64 {
    (dist_coords(q, &b.center) - b.radius).max(0.0)
}

/// Rectangle against the box circumscribing the ball `(q, radius)`: true iff
/// they share no point, i.e. some dimension has `lo_i > q_i + radius` or
/// `hi_i < q_i - radius` (radius carries the rounding slack). Equivalent to
/// `!mbr_intersects(r, Mbr::of_ball(q, radius))` without building the box.
pub fn box_ball_disjoint(r: &Mbr, q: &[f64], radius: f64) -> bool {
    assert_eq!(q.len(), r.dims(), "dimension mismatch");
    let radius = inflate_allowance(radius);
    q.iter().zip(r.lo.iter().zip(&r.hi)).any(|(x, (lo, hi))| lo - x > radius || x - hi > radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pt(id: u64, coords: &[f64]) -> Point {
        Point::new(id, coords.to_vec())
    }

    #[test]
    fn dist_identity_is_zero() {
        let a = pt(0, &[0.0, 0.0]);
        assert_eq!(dist(&a, &a), 0.0);
    }

    #[test]
    fn dist_three_four_five() {
        let a = pt(0, &[0.0, 0.0]);
        let b = pt(1, &[3.0, 4.0]);
        assert_eq!(dist(&a, &b), 5.0);
        assert_eq!(dist(&b, &a), 5.0);
    }

    #[test]
    fn dist_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<Point> =
            (0..10).map(|i| pt(i, &[rng.gen::<f64>(), rng.gen(), rng.gen()])).collect();
        for a in &points {
            for b in &points {
                let mut acc = 0.0;
                for i in 0..3 {
                    let d = a.coords[i] - b.coords[i];
                    acc += d * d;
                }
                let oracle = acc.sqrt();
                let got = dist(a, b);
                let rel = (got - oracle).abs() / oracle.max(1e-300);
                assert!(rel < 1e-12, "rel error {rel}");
            }
        }
    }

    #[test]
    fn mbr_intersects_self() {
        let r = Mbr { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        assert!(mbr_intersects(&r, &r));
    }

    #[test]
    fn mbr_disjoint_boxes() {
        let r1 = Mbr { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        let r2 = Mbr { lo: vec![2.0, 2.0], hi: vec![3.0, 3.0] };
        assert!(!mbr_intersects(&r1, &r2));
        assert!(!mbr_intersects(&r2, &r1));
    }

    #[test]
    fn mbr_shared_corner_counts_as_intersecting() {
        let r1 = Mbr { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        let r2 = Mbr { lo: vec![1.0, 1.0], hi: vec![2.0, 2.0] };
        assert!(mbr_intersects(&r1, &r2));
    }

    #[test]
    fn ball_prune_never_fires_at_center() {
        let b = Mbb { center: vec![0.0, 0.0], radius: 1.0 };
        assert!(!ball_ball_prunable(&b, &[0.0, 0.0], 0.0));
        assert!(!ball_ball_prunable(&b, &[0.0, 0.0], 10.0));
    }

    #[test]
    fn ball_prune_direct_and_boundary() {
        let b = Mbb { center: vec![0.0, 0.0], radius: 1.0 };
        assert!(ball_ball_prunable(&b, &[5.0, 0.0], 1.0));
        // 2 = 1 + 1 is not strictly greater: boundary balls are kept.
        assert!(!ball_ball_prunable(&b, &[2.0, 0.0], 1.0));
    }

    #[test]
    fn min_dist_zero_inside() {
        let r = Mbr { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        assert_eq!(min_dist_point_mbr(&[0.5, 0.5], &r), 0.0);
        assert_eq!(min_dist_point_mbr(&[0.0, 1.0], &r), 0.0);
    }

    #[test]
    fn min_dist_outside_value() {
        let r = Mbr { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        assert_eq!(min_dist_point_mbr(&[3.0, 0.5], &r), 2.0);
    }

    #[test]
    fn min_dist_matches_boundary_sampling_oracle() {
        // The clamped distance must lower-bound the distance to any sampled
        // boundary or corner point of the rectangle.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let lo: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|x| x + rng.gen_range(0.0..5.0)).collect();
            let r = Mbr { lo: lo.clone(), hi: hi.clone() };
            let q: Vec<f64> = (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let d = min_dist_point_mbr(&q, &r);
            for corner in [[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]] {
                assert!(d <= dist_coords(&q, &corner) + 1e-12);
            }
            for _ in 0..16 {
                // Random point on the rectangle edge lattice.
                let mut p = [
                    rng.gen_range(lo[0]..=hi[0].max(lo[0] + f64::MIN_POSITIVE)),
                    rng.gen_range(lo[1]..=hi[1].max(lo[1] + f64::MIN_POSITIVE)),
                ];
                let side = rng.gen_range(0..2usize);
                p[side] = if rng.gen() { lo[side] } else { hi[side] };
                assert!(d <= dist_coords(&q, &p) + 1e-12);
            }
        }
    }

    #[test]
    fn min_dist_zero_iff_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let lo: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|x| x + rng.gen_range(0.0..5.0)).collect();
            let r = Mbr { lo, hi };
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-7.0..7.0)).collect();
            assert_eq!(min_dist_point_mbr(&q, &r) == 0.0, r.contains(&q));
        }
    }

    #[test]
    fn ball_prune_respects_triangle_inequality() {
        // A pruned ball can never contain a point within r of q.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let points: Vec<Point> = (0..8)
                .map(|i| pt(i, &[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]))
                .collect();
            let b = Mbb::of_points(&points);
            let q: Vec<f64> = vec![rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
            let r = rng.gen_range(0.0..4.0);
            if ball_ball_prunable(&b, &q, r) {
                for p in &points {
                    assert!(dist_coords(&p.coords, &q) > r);
                }
            }
        }
    }

    #[test]
    fn box_ball_disjoint_matches_explicit_box_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5000 {
            let lo: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|x| x + rng.gen_range(0.0..4.0)).collect();
            let r = Mbr { lo, hi };
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let radius = rng.gen_range(0.0..5.0);
            assert_eq!(
                box_ball_disjoint(&r, &q, radius),
                !mbr_intersects(&r, &Mbr::of_ball(&q, radius))
            );
        }
    }

    #[test]
    fn mbb_radius_is_exact_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let points: Vec<Point> =
            (0..50).map(|i| pt(i, &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])).collect();
        let b = Mbb::of_points(&points);
        let max = points.iter().map(|p| dist_coords(&p.coords, &b.center)).fold(0.0, f64::max);
        assert_eq!(b.radius, max);
        for p in &points {
            assert!(b.contains(&p.coords));
        }
    }
}
