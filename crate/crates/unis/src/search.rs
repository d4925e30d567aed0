//! Exact kNN and radius search under four traversal/volume strategies.
//!
//! The strategies pair a traversal (depth-first or breadth-first, FIFO) with
//! a bounding volume (rectangle or ball). Pruning per query kind:
//!
//! * kNN, `R_DFS`/`B_DFS`: node rectangle versus the box circumscribing the
//!   current k-th-distance ball (the rectangle test is shared by both DFS
//!   strategies; they differ in child visit order, which follows each
//!   strategy's own volume).
//! * kNN, `R_BFS`: ball-ball against the node ball.
//! * kNN, `B_BFS`: exact point-rectangle minimum distance.
//! * Radius, DFS: ball-ball against the node ball.
//! * Radius, BFS: node rectangle versus the query ball's box.
//!
//! All four return identical result sets; ties at the k-th distance resolve
//! by point id, so equivalence is exact even with equidistant points.

use crate::geometry::{
    ball_ball_prunable, box_ball_disjoint, dist_coords, inflate_allowance, min_dist_point_mbb,
    min_dist_point_mbr, Point,
};
use crate::tree::{BmkdTree, Node};
use std::collections::{BinaryHeap, VecDeque};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchStrategy {
    RDfs,
    RBfs,
    BDfs,
    BBfs,
}

impl SearchStrategy {
    pub const ALL: [SearchStrategy; 4] =
        [SearchStrategy::RDfs, SearchStrategy::RBfs, SearchStrategy::BDfs, SearchStrategy::BBfs];

    pub fn name(self) -> &'static str {
        match self {
            SearchStrategy::RDfs => "R_DFS",
            SearchStrategy::RBfs => "R_BFS",
            SearchStrategy::BDfs => "B_DFS",
            SearchStrategy::BBfs => "B_BFS",
        }
    }

    pub fn index(self) -> usize {
        match self {
            SearchStrategy::RDfs => 0,
            SearchStrategy::RBfs => 1,
            SearchStrategy::BDfs => 2,
            SearchStrategy::BBfs => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<SearchStrategy> {
        SearchStrategy::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<SearchStrategy> {
        match s.to_ascii_lowercase().replace('_', "").as_str() {
            "rdfs" => Some(SearchStrategy::RDfs),
            "rbfs" => Some(SearchStrategy::RBfs),
            "bdfs" => Some(SearchStrategy::BDfs),
            "bbfs" => Some(SearchStrategy::BBfs),
            _ => None,
        }
    }

    fn is_dfs(self) -> bool {
        matches!(self, SearchStrategy::RDfs | SearchStrategy::BDfs)
    }
}

impl std::fmt::Display for SearchStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// kNN hits: `(id, distance)` ascending by `(distance, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub hits: Vec<(u64, f64)>,
}

/// Instrumentation for one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    /// Leaf points whose distance to the query was computed.
    pub access_count: usize,
}

#[derive(Debug, PartialEq)]
struct HeapEntry {
    dist: f64,
    id: u64,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Holds the best `k` candidates seen so far; the worst is evicted first.
/// The k-th bound is `+inf` while underfull, so nothing prunes against a
/// partial result.
#[derive(Debug)]
pub struct BoundedMaxQueue {
    k: usize,
    heap: BinaryHeap<HeapEntry>,
}

impl BoundedMaxQueue {
    pub fn new(k: usize) -> Self {
        BoundedMaxQueue { k, heap: BinaryHeap::with_capacity(k.min(1 << 20) + 1) }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Current k-th best distance, `+inf` while underfull.
    pub fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |e| e.dist)
        }
    }

    pub fn offer(&mut self, dist: f64, id: u64) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(HeapEntry { dist, id });
            return;
        }
        let worst = self.heap.peek().expect("non-empty at capacity");
        if (dist, id) < (worst.dist, worst.id) {
            self.heap.pop();
            self.heap.push(HeapEntry { dist, id });
        }
    }

    pub fn into_result(self) -> KnnResult {
        let mut hits: Vec<(u64, f64)> = self.heap.into_iter().map(|e| (e.id, e.dist)).collect();
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        KnnResult { hits }
    }
}

fn knn_prunable(strategy: SearchStrategy, node: &Node, q: &[f64], bound: f64) -> bool {
    match strategy {
        SearchStrategy::RDfs | SearchStrategy::BDfs => box_ball_disjoint(node.mbr(), q, bound),
        SearchStrategy::RBfs => ball_ball_prunable(node.mbb(), q, bound),
        SearchStrategy::BBfs => min_dist_point_mbr(q, node.mbr()) > inflate_allowance(bound),
    }
}

fn radius_prunable(strategy: SearchStrategy, node: &Node, q: &[f64], r: f64) -> bool {
    if strategy.is_dfs() {
        ball_ball_prunable(node.mbb(), q, r)
    } else {
        box_ball_disjoint(node.mbr(), q, r)
    }
}

/// Child ordering key for DFS: each volume type sorts children by its own
/// lower bound on the distance to the query.
fn child_key(strategy: SearchStrategy, node: &Node, q: &[f64]) -> f64 {
    match strategy {
        SearchStrategy::BDfs => min_dist_point_mbb(q, node.mbb()),
        _ => min_dist_point_mbr(q, node.mbr()),
    }
}

/// Exact k nearest neighbors. `k >= n` returns all points.
pub fn knn(tree: &BmkdTree, q: &Point, k: usize, strategy: SearchStrategy) -> KnnResult {
    knn_with_stats(tree, q, k, strategy).0
}

pub fn knn_with_stats(
    tree: &BmkdTree,
    q: &Point,
    k: usize,
    strategy: SearchStrategy,
) -> (KnnResult, QueryStats) {
    knn_impl(tree, q, k, strategy, None).expect("no deadline set")
}

/// As `knn_with_stats` but gives up once `deadline` passes (checked at every
/// leaf scan). `None` means the deadline fired.
pub fn knn_with_deadline(
    tree: &BmkdTree,
    q: &Point,
    k: usize,
    strategy: SearchStrategy,
    deadline: Instant,
) -> Option<(KnnResult, QueryStats)> {
    knn_impl(tree, q, k, strategy, Some(deadline))
}

fn knn_impl(
    tree: &BmkdTree,
    q: &Point,
    k: usize,
    strategy: SearchStrategy,
    deadline: Option<Instant>,
) -> Option<(KnnResult, QueryStats)> {
    let mut queue = BoundedMaxQueue::new(k);
    let mut stats = QueryStats::default();
    if k == 0 {
        return Some((queue.into_result(), stats));
    }
    let qc = &q.coords;
    if strategy.is_dfs() {
        if !dfs_knn(&tree.root, qc, k, strategy, &mut queue, &mut stats, deadline) {
            return None;
        }
    } else {
        let mut fifo: VecDeque<&Node> = VecDeque::new();
        fifo.push_back(&tree.root);
        while let Some(node) = fifo.pop_front() {
            match node {
                Node::Leaf(leaf) => {
                    stats.access_count += leaf.points.len();
                    for p in &leaf.points {
                        queue.offer(dist_coords(&p.coords, qc), p.id);
                    }
                    if deadline.is_some_and(|d| Instant::now() > d) {
                        return None;
                    }
                }
                Node::Inner(inner) => {
                    if queue.len() < k || !knn_prunable(strategy, node, qc, queue.bound()) {
                        fifo.extend(inner.children.iter());
                    }
                }
            }
        }
    }
    Some((queue.into_result(), stats))
}

fn dfs_knn(
    node: &Node,
    q: &[f64],
    k: usize,
    strategy: SearchStrategy,
    queue: &mut BoundedMaxQueue,
    stats: &mut QueryStats,
    deadline: Option<Instant>,
) -> bool {
    match node {
        Node::Leaf(leaf) => {
            stats.access_count += leaf.points.len();
            for p in &leaf.points {
                queue.offer(dist_coords(&p.coords, q), p.id);
            }
            !deadline.is_some_and(|d| Instant::now() > d)
        }
        Node::Inner(inner) => {
            if queue.len() < k || !knn_prunable(strategy, node, q, queue.bound()) {
                let mut order: Vec<(f64, usize)> = inner
                    .children
                    .iter()
                    .enumerate()
                    .map(|(i, ch)| (child_key(strategy, ch, q), i))
                    .collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, i) in &order {
                    if !dfs_knn(&inner.children[i], q, k, strategy, queue, stats, deadline) {
                        return false;
                    }
                }
            }
            true
        }
    }
}

/// All point ids within distance `r` of `q` (inclusive), ascending by id.
pub fn radius(tree: &BmkdTree, q: &Point, r: f64, strategy: SearchStrategy) -> Vec<u64> {
    radius_with_stats(tree, q, r, strategy).0
}

pub fn radius_with_stats(
    tree: &BmkdTree,
    q: &Point,
    r: f64,
    strategy: SearchStrategy,
) -> (Vec<u64>, QueryStats) {
    radius_impl(tree, q, r, strategy, None).expect("no deadline set")
}

/// As `radius_with_stats` with a give-up deadline checked at leaf scans.
pub fn radius_with_deadline(
    tree: &BmkdTree,
    q: &Point,
    r: f64,
    strategy: SearchStrategy,
    deadline: Instant,
) -> Option<(Vec<u64>, QueryStats)> {
    radius_impl(tree, q, r, strategy, Some(deadline))
}

fn radius_impl(
    tree: &BmkdTree,
    q: &Point,
    r: f64,
    strategy: SearchStrategy,
    deadline: Option<Instant>,
) -> Option<(Vec<u64>, QueryStats)> {
    debug_assert!(r >= 0.0);
    let mut out: Vec<u64> = Vec::new();
    let mut stats = QueryStats::default();
    let qc = &q.coords;
    if strategy.is_dfs() {
        if !dfs_radius(&tree.root, qc, r, strategy, &mut out, &mut stats, deadline) {
            return None;
        }
    } else {
        let mut fifo: VecDeque<&Node> = VecDeque::new();
        fifo.push_back(&tree.root);
        while let Some(node) = fifo.pop_front() {
            match node {
                Node::Leaf(leaf) => {
                    stats.access_count += leaf.points.len();
                    for p in &leaf.points {
                        if dist_coords(&p.coords, qc) <= r {
                            out.push(p.id);
                        }
                    }
                    if deadline.is_some_and(|d| Instant::now() > d) {
                        return None;
                    }
                }
                Node::Inner(inner) => {
                    if !radius_prunable(strategy, node, qc, r) {
                        fifo.extend(inner.children.iter());
                    }
                }
            }
        }
    }
    out.sort_unstable();
    Some((out, stats))
}

fn dfs_radius(
    node: &Node,
    q: &[f64],
    r: f64,
    strategy: SearchStrategy,
    out: &mut Vec<u64>,
    stats: &mut QueryStats,
    deadline: Option<Instant>,
) -> bool {
    match node {
        Node::Leaf(leaf) => {
            stats.access_count += leaf.points.len();
            for p in &leaf.points {
                if dist_coords(&p.coords, q) <= r {
                    out.push(p.id);
                }
            }
            !deadline.is_some_and(|d| Instant::now() > d)
        }
        Node::Inner(inner) => {
            if !radius_prunable(strategy, node, q, r) {
                for child in &inner.children {
                    if !dfs_radius(child, q, r, strategy, out, stats, deadline) {
                        return false;
                    }
                }
            }
            true
        }
    }
}

/// Linear-scan kNN oracle under the same `(distance, id)` order.
pub fn linear_knn(points: &[Point], q: &Point, k: usize) -> KnnResult {
    let mut hits: Vec<(u64, f64)> =
        points.iter().map(|p| (p.id, dist_coords(&p.coords, &q.coords))).collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    hits.truncate(k);
    KnnResult { hits }
}

/// Linear-scan radius oracle: ids within `r`, ascending.
pub fn linear_radius(points: &[Point], q: &Point, r: f64) -> Vec<u64> {
    let mut out: Vec<u64> =
        points.iter().filter(|p| dist_coords(&p.coords, &q.coords) <= r).map(|p| p.id).collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build, TChoice, TreeConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_points(n: usize, d: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Point::new(i as u64, (0..d).map(|_| rng.gen_range(0.0..10.0)).collect()))
            .collect()
    }

    fn mixed_tree(points: &[Point], seed: u64) -> BmkdTree {
        let cut = points.len() / 2;
        let cfg =
            TreeConfig { c: 12, t: TChoice::Fixed(3), rng_seed: seed, ..TreeConfig::default() };
        let mut tree = build(points[..cut].to_vec(), cfg).unwrap();
        tree.insert(points[cut..].to_vec()).unwrap();
        tree
    }

    #[test]
    fn bounded_queue_keeps_smallest_pairs() {
        let mut q = BoundedMaxQueue::new(3);
        assert_eq!(q.bound(), f64::INFINITY);
        for (d, id) in [(5.0, 0), (1.0, 1), (4.0, 2), (2.0, 3), (4.0, 4)] {
            q.offer(d, id);
        }
        assert_eq!(q.bound(), 4.0);
        let res = q.into_result();
        assert_eq!(res.hits, vec![(1, 1.0), (3, 2.0), (2, 4.0)]);
    }

    #[test]
    fn bounded_queue_breaks_distance_ties_by_id() {
        let mut q = BoundedMaxQueue::new(2);
        q.offer(1.0, 9);
        q.offer(1.0, 3);
        q.offer(1.0, 7);
        let res = q.into_result();
        assert_eq!(res.hits, vec![(3, 1.0), (7, 1.0)]);
    }

    #[test]
    fn all_strategies_match_linear_scan() {
        let points = uniform_points(1_000, 3, 5);
        let tree = mixed_tree(&points, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let q = Point::new(u64::MAX, (0..3).map(|_| rng.gen_range(-1.0..11.0)).collect());
            let k = rng.gen_range(1..40);
            let expected = linear_knn(&points, &q, k);
            for s in SearchStrategy::ALL {
                assert_eq!(knn(&tree, &q, k, s), expected, "strategy {s}");
            }
            let r = rng.gen_range(0.0..6.0);
            let expected_r = linear_radius(&points, &q, r);
            for s in SearchStrategy::ALL {
                assert_eq!(radius(&tree, &q, r, s), expected_r, "strategy {s}");
            }
        }
    }

    #[test]
    fn equidistant_ties_are_identical_across_strategies() {
        // Integer grid: many exactly equal distances.
        let points: Vec<Point> = (0..400)
            .map(|i| Point::new(i as u64, vec![(i % 20) as f64, (i / 20) as f64]))
            .collect();
        let tree = mixed_tree(&points, 2);
        for (qx, qy, k) in [(10.0, 10.0, 8), (0.0, 0.0, 5), (9.5, 9.5, 12)] {
            let q = Point::new(u64::MAX, vec![qx, qy]);
            let expected = linear_knn(&points, &q, k);
            for s in SearchStrategy::ALL {
                assert_eq!(knn(&tree, &q, k, s), expected, "strategy {s}");
            }
        }
    }

    #[test]
    fn oversized_k_returns_everything() {
        let points = uniform_points(100, 2, 6);
        let tree = mixed_tree(&points, 3);
        let q = Point::new(u64::MAX, vec![5.0, 5.0]);
        for s in SearchStrategy::ALL {
            let res = knn(&tree, &q, 1_000, s);
            assert_eq!(res.hits.len(), 100);
            assert_eq!(res, linear_knn(&points, &q, 1_000));
        }
    }

    #[test]
    fn self_query_hits_itself_first() {
        let points = uniform_points(500, 3, 8);
        let tree = mixed_tree(&points, 4);
        for idx in [0usize, 123, 499] {
            let q = points[idx].clone();
            for s in SearchStrategy::ALL {
                let res = knn(&tree, &q, 1, s);
                assert_eq!(res.hits.len(), 1);
                assert_eq!(res.hits[0].1, 0.0);
            }
        }
    }

    #[test]
    fn radius_edge_cases() {
        let points = uniform_points(300, 2, 9);
        let tree = mixed_tree(&points, 5);
        let outside = Point::new(u64::MAX, vec![-100.0, -100.0]);
        for s in SearchStrategy::ALL {
            assert!(radius(&tree, &outside, 0.0, s).is_empty());
            assert_eq!(radius(&tree, &outside, 1e6, s).len(), 300);
        }
    }

    #[test]
    fn knn_results_are_prefix_monotone_in_k() {
        let points = uniform_points(400, 2, 10);
        let tree = mixed_tree(&points, 6);
        let q = Point::new(u64::MAX, vec![3.3, 7.7]);
        for s in SearchStrategy::ALL {
            let mut prev: Vec<(u64, f64)> = Vec::new();
            for k in 1..25 {
                let res = knn(&tree, &q, k, s);
                assert_eq!(&res.hits[..prev.len()], &prev[..]);
                prev = res.hits;
            }
        }
    }

    #[test]
    fn radius_contains_knn_hits_within_r() {
        let points = uniform_points(600, 3, 11);
        let tree = mixed_tree(&points, 7);
        let q = Point::new(u64::MAX, vec![5.0, 5.0, 5.0]);
        for s in SearchStrategy::ALL {
            let hits = knn(&tree, &q, 20, s).hits;
            let r = hits.last().unwrap().1;
            let ball = radius(&tree, &q, r, s);
            for (id, _) in hits {
                assert!(ball.binary_search(&id).is_ok());
            }
        }
    }

    #[test]
    fn access_count_bounds() {
        let points = uniform_points(2_000, 3, 12);
        let tree = mixed_tree(&points, 8);
        let q = points[42].clone();
        for s in SearchStrategy::ALL {
            let (_, stats) = knn_with_stats(&tree, &q, 5, s);
            assert!(stats.access_count <= 2_000);
            assert!(stats.access_count > 0);
        }

        // Single-leaf tree: nothing can be pruned.
        let few = uniform_points(20, 2, 13);
        let single = build(few.clone(), TreeConfig::default()).unwrap();
        let q = Point::new(u64::MAX, vec![0.0, 0.0]);
        for s in SearchStrategy::ALL {
            let (_, stats) = knn_with_stats(&single, &q, 3, s);
            assert_eq!(stats.access_count, 20);
        }
    }

    #[test]
    fn dfs_orderings_differ_but_results_agree() {
        // The two DFS strategies share the pruning rule yet walk children in
        // different orders; access counts may differ while results cannot.
        let points = uniform_points(3_000, 3, 14);
        let tree = mixed_tree(&points, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let q = Point::new(u64::MAX, (0..3).map(|_| rng.gen_range(0.0..10.0)).collect());
            let (a, _) = knn_with_stats(&tree, &q, 3, SearchStrategy::RDfs);
            let (b, _) = knn_with_stats(&tree, &q, 3, SearchStrategy::BDfs);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in SearchStrategy::ALL {
            assert_eq!(SearchStrategy::parse(s.name()), Some(s));
            assert_eq!(SearchStrategy::from_index(s.index()), Some(s));
        }
        assert_eq!(SearchStrategy::parse("rdfs"), Some(SearchStrategy::RDfs));
        assert_eq!(SearchStrategy::parse("nope"), None);
    }
}
