//! Balanced multi-way KD-tree with model-predicted split pivots.
//!
//! Non-leaf nodes split one dimension (cycling by depth) into up to `t`
//! sub-spaces at `t-1` pivots selected from a learned CDF model of that
//! dimension. Bulk insertion routes batches down the tree in place and
//! restores the per-child size bound on backtrack by rebuilding the smallest
//! contiguous child range that can absorb the skew.

use crate::geometry::{Mbb, Mbr, Point};
use crate::partition::{select_t, AnnealParams, DEFAULT_T_MAX};
use crate::quantile::{self, TwoStageCdfModel, DEFAULT_DELTA, DEFAULT_KAPPA, DEFAULT_L};
use crate::{sub_seed, Result, UnisError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default leaf capacity.
pub const DEFAULT_LEAF_CAPACITY: usize = 30;
/// Default balance factor.
pub const DEFAULT_OMEGA: f64 = 0.75;

/// Partition number: fixed by the caller or chosen by cost minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TChoice {
    Fixed(usize),
    Auto,
}

/// Construction and maintenance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeConfig {
    /// Leaf capacity.
    pub c: usize,
    /// Model training sampling rate in (0, 1].
    pub delta: f64,
    /// Sub-model count of the CDF model.
    pub l: usize,
    /// Half-width of the pivot candidate window.
    pub kappa: f64,
    /// Balance factor in (0.5, 1): child size must stay below
    /// `omega * size / (degree - 1)`.
    pub omega: f64,
    /// Partition number.
    pub t: TChoice,
    /// Seed from which every internal RNG stream is derived.
    pub rng_seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            c: DEFAULT_LEAF_CAPACITY,
            delta: DEFAULT_DELTA,
            l: DEFAULT_L,
            kappa: DEFAULT_KAPPA,
            omega: DEFAULT_OMEGA,
            t: TChoice::Auto,
            rng_seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(UnisError::Usage("leaf capacity must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(UnisError::Usage(format!("delta must be in (0, 1], got {}", self.delta)));
        }
        if self.l == 0 {
            return Err(UnisError::Usage("sub-model count must be positive".into()));
        }
        if !(self.kappa >= 0.0 && self.kappa <= 1.0) {
            return Err(UnisError::Usage(format!("kappa must be in [0, 1], got {}", self.kappa)));
        }
        if !(self.omega > 0.5 && self.omega < 1.0) {
            return Err(UnisError::Usage(format!("omega must be in (0.5, 1), got {}", self.omega)));
        }
        if let TChoice::Fixed(t) = self.t {
            if t < 2 {
                return Err(UnisError::Usage(format!(
                    "partition number must be at least 2, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Leaf: stored points with their exact bounding volumes.
#[derive(Debug, Clone)]
pub struct LeafNode {
    pub points: Vec<Point>,
    pub mbr: Mbr,
    pub mbb: Mbb,
}

/// Non-leaf: pivot-partitioned children plus the retained CDF model of the
/// split dimension and a reservoir of pending inserted values that feed the
/// model's incremental update at the next rebuild.
///
/// `mbb.center` is fixed at creation; inserts only grow the radius, so the
/// ball stays a valid (possibly loose) enclosure without subtree rescans.
#[derive(Debug, Clone)]
pub struct NonLeafNode {
    pub split_dim: usize,
    pub pivots: Vec<f64>,
    pub children: Vec<Node>,
    pub size: usize,
    pub mbr: Mbr,
    pub mbb: Mbb,
    pub model: Option<TwoStageCdfModel>,
    pub pending: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Node {
    Leaf(LeafNode),
    Inner(NonLeafNode),
}

impl Node {
    pub fn size(&self) -> usize {
        match self {
            Node::Leaf(l) => l.points.len(),
            Node::Inner(n) => n.size,
        }
    }

    pub fn mbr(&self) -> &Mbr {
        match self {
            Node::Leaf(l) => &l.mbr,
            Node::Inner(n) => &n.mbr,
        }
    }

    pub fn mbb(&self) -> &Mbb {
        match self {
            Node::Leaf(l) => &l.mbb,
            Node::Inner(n) => &n.mbb,
        }
    }

    pub fn collect_points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.size());
        self.collect_into(&mut out);
        out
    }

    fn collect_into(&self, out: &mut Vec<Point>) {
        match self {
            Node::Leaf(l) => out.extend(l.points.iter().cloned()),
            Node::Inner(n) => n.children.iter().for_each(|c| c.collect_into(out)),
        }
    }

    fn take_points_into(self, out: &mut Vec<Point>) {
        match self {
            Node::Leaf(mut l) => out.append(&mut l.points),
            Node::Inner(n) => n.children.into_iter().for_each(|c| c.take_points_into(out)),
        }
    }
}

/// One rebuild trigger: points the selective range rebuild touched versus the
/// whole-node (scapegoat) counterfactual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RebuildRecord {
    pub selective_points: usize,
    pub scapegoat_points: usize,
}

#[derive(Debug, Clone)]
pub struct BmkdTree {
    pub root: Node,
    pub config: TreeConfig,
    pub dims: usize,
    /// Partition number every split uses (resolved once per tree).
    pub resolved_t: usize,
    /// Next RNG stream index; every model training and insert draws a fresh
    /// stream derived from `config.rng_seed`.
    pub seed_counter: u64,
    /// Bumped once per completed insert; lets feature snapshots detect that
    /// the structure they were taken from has changed.
    pub mutation_counter: u64,
    /// Per-trigger rebuild instrumentation, appended across inserts.
    pub rebuild_log: Vec<RebuildRecord>,
}

/// Index of the child whose pivot interval contains `x`: the first pivot
/// `>= x` claims it (ties go left), values above every pivot go last.
pub fn route_child(pivots: &[f64], x: f64) -> usize {
    pivots.partition_point(|&p| p < x)
}

struct BuildCtx<'a> {
    cfg: &'a TreeConfig,
    t: usize,
    seed_counter: &'a mut u64,
    exact_pivots: bool,
}

/// Builds a tree with model-predicted pivots.
pub fn build(data: Vec<Point>, cfg: TreeConfig) -> Result<BmkdTree> {
    build_with(data, cfg, false)
}

/// Builds a tree with exact-sorting pivots: identical routing semantics, the
/// split values come from full per-node sorts. Serves as the balance and
/// timing oracle for the predicted-pivot builder.
pub fn build_baseline(data: Vec<Point>, cfg: TreeConfig) -> Result<BmkdTree> {
    build_with(data, cfg, true)
}

fn build_with(data: Vec<Point>, cfg: TreeConfig, exact_pivots: bool) -> Result<BmkdTree> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(UnisError::Usage("cannot build a tree from an empty dataset".into()));
    }
    let dims = data[0].dims();
    if dims == 0 {
        return Err(UnisError::Data("points must have at least one dimension".into()));
    }
    for (i, p) in data.iter().enumerate() {
        if p.dims() != dims {
            return Err(UnisError::Data(format!(
                "point {i} has {} dimensions, expected {dims}",
                p.dims()
            )));
        }
        if p.coords.iter().any(|v| !v.is_finite()) {
            return Err(UnisError::Data(format!("point {i} has a non-finite coordinate")));
        }
    }
    let t = match cfg.t {
        TChoice::Fixed(t) => t,
        TChoice::Auto => {
            select_t(data.len(), cfg.c, DEFAULT_T_MAX, &AnnealParams::default(), cfg.rng_seed).t
        }
    };
    let mut seed_counter = 0u64;
    let root = {
        let mut ctx = BuildCtx { cfg: &cfg, t, seed_counter: &mut seed_counter, exact_pivots };
        build_node(data, 0, &mut ctx)
    };
    Ok(BmkdTree {
        root,
        config: cfg,
        dims,
        resolved_t: t,
        seed_counter,
        mutation_counter: 0,
        rebuild_log: Vec::new(),
    })
}

fn make_leaf(points: Vec<Point>) -> Node {
    let mbr = Mbr::of_points(&points);
    let mbb = Mbb::of_points(&points);
    Node::Leaf(LeafNode { points, mbr, mbb })
}

/// Picks the split dimension: the first, starting from `depth mod d`, along
/// which the points are not constant. `None` means every dimension is
/// constant and the node must stay a leaf regardless of capacity.
fn pick_split_dim(points: &[Point], depth: usize) -> Option<usize> {
    let d = points[0].dims();
    for off in 0..d {
        let j = (depth + off) % d;
        let first = points[0].coords[j];
        if points.iter().any(|p| p.coords[j] != first) {
            return Some(j);
        }
    }
    None
}

/// Exact split values: for `t`-way fan-out, the value at rank
/// `round(i * n / t)` of the sorted dimension values, `i = 1..t-1`.
fn exact_cut_values(values: &[f64], t: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..t)
        .map(|i| {
            let pos = ((2 * i * n + t) / (2 * t)).clamp(1, n);
            sorted[pos - 1]
        })
        .collect()
}

/// Orders, dedups, and bounds candidate pivots so every resulting child is
/// non-empty: pivots must exceed `lower_bound` (exclusive) and stay strictly
/// below the maximum value. An emptied set falls back to the largest value
/// below the maximum.
fn sanitize_pivots(mut raw: Vec<f64>, values: &[f64], lower_bound: Option<f64>) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    raw.sort_by(f64::total_cmp);
    raw.dedup();
    raw.retain(|&p| p < max && lower_bound.is_none_or(|lb| p > lb));
    if raw.is_empty() {
        let mut below = f64::NEG_INFINITY;
        for &v in values {
            if v < max && v > below {
                below = v;
            }
        }
        if below.is_finite() && lower_bound.is_none_or(|lb| below > lb) {
            raw.push(below);
        }
    }
    raw
}

fn partition_points(points: Vec<Point>, pivots: &[f64], dim: usize) -> Vec<Vec<Point>> {
    let mut buckets: Vec<Vec<Point>> = (0..=pivots.len()).map(|_| Vec::new()).collect();
    for p in points {
        buckets[route_child(pivots, p.coords[dim])].push(p);
    }
    buckets
}

/// Drops pivots whose bucket came out empty (predicted pivots need not be
/// data values, so two of them can land between the same pair of points).
/// Each removal merges the empty bucket into its right neighbor (left
/// neighbor for a trailing empty), keeping routing consistent.
fn prune_empty_buckets(pivots: &mut Vec<f64>, buckets: &mut Vec<Vec<Point>>) {
    let mut j = 0;
    while j < buckets.len() {
        if buckets[j].is_empty() && buckets.len() > 1 {
            buckets.remove(j);
            pivots.remove(j.min(pivots.len() - 1));
        } else {
            j += 1;
        }
    }
}

/// True when a perfectly even `deg`-way split of `size` points would satisfy
/// the balance bound. When false, no pivot choice can balance this node at
/// this fan-out: the violation is structural to the (t, omega) pair or to
/// integer granularity, and rebuilding cannot remove it.
fn balance_feasible(size: usize, deg: usize, omega: f64) -> bool {
    deg >= 2 && (size.div_ceil(deg) as f64) < omega * size as f64 / (deg - 1) as f64
}

fn buckets_balanced(buckets: &[Vec<Point>], total: usize, omega: f64) -> bool {
    let deg = buckets.len();
    if deg < 2 {
        return total < 2;
    }
    let bound = omega * total as f64 / (deg - 1) as f64;
    buckets.iter().all(|b| (b.len() as f64) < bound)
}

fn build_node(points: Vec<Point>, depth: usize, ctx: &mut BuildCtx) -> Node {
    if points.len() <= ctx.cfg.c {
        return make_leaf(points);
    }
    let Some(dim) = pick_split_dim(&points, depth) else {
        // Every dimension is constant: an oversized leaf is the only shape
        // that can hold these duplicates.
        return make_leaf(points);
    };
    let size = points.len();
    let mbr = Mbr::of_points(&points);
    let mbb = Mbb::of_points(&points);
    let values: Vec<f64> = points.iter().map(|p| p.coords[dim]).collect();
    let seed = sub_seed(ctx.cfg.rng_seed, *ctx.seed_counter);
    *ctx.seed_counter += 1;
    let model = quantile::cdf_train(&values, ctx.cfg.delta, ctx.cfg.l, seed)
        .expect("config was validated and nodes above capacity hold at least 2 values");
    let raw = if ctx.exact_pivots {
        exact_cut_values(&values, ctx.t)
    } else {
        predict_pivots(&values, ctx.t, &model, ctx.cfg.kappa)
    };
    let mut pivots = sanitize_pivots(raw, &values, None);
    let mut buckets = partition_points(points, &pivots, dim);
    prune_empty_buckets(&mut pivots, &mut buckets);
    if !ctx.exact_pivots
        && !buckets_balanced(&buckets, size, ctx.cfg.omega)
        && balance_feasible(size, buckets.len(), ctx.cfg.omega)
    {
        // Model-predicted pivots missed a balance bound achievable at the
        // fan-out they produced (small samples or heavy duplicates); redo
        // this split with exact cuts. When even an even split at the
        // produced fan-out would violate the bound, the skew is structural
        // to (t, omega) or to integer granularity and a redo buys nothing.
        let pts: Vec<Point> = buckets.into_iter().flatten().collect();
        pivots = sanitize_pivots(exact_cut_values(&values, ctx.t), &values, None);
        buckets = partition_points(pts, &pivots, dim);
        prune_empty_buckets(&mut pivots, &mut buckets);
    }
    debug_assert!(buckets.iter().all(|b| !b.is_empty()));
    let children: Vec<Node> = buckets.into_iter().map(|b| build_node(b, depth + 1, ctx)).collect();
    Node::Inner(NonLeafNode {
        split_dim: dim,
        pivots,
        children,
        size,
        mbr,
        mbb,
        model: Some(model),
        pending: Vec::new(),
    })
}

/// Selects up to `t-1` split values for `values` from the model's CDF
/// predictions at the target quantiles `1/t .. (t-1)/t`, then collapses
/// duplicates and drops values that would create empty children.
pub fn predict_pivots(values: &[f64], t: usize, model: &TwoStageCdfModel, kappa: f64) -> Vec<f64> {
    let targets: Vec<f64> = (1..t).map(|i| i as f64 / t as f64).collect();
    let raw = quantile::select_pivots(model, values, &targets, kappa);
    sanitize_pivots(raw, values, None)
}

/// True iff every child's size is strictly below
/// `omega * size / (degree - 1)`. Degenerate single-child nodes count as
/// balanced only while effectively empty.
pub fn is_omega_balanced(node: &NonLeafNode, omega: f64) -> bool {
    first_unbalanced_child(node, omega).is_none()
}

fn first_unbalanced_child(node: &NonLeafNode, omega: f64) -> Option<usize> {
    let deg = node.children.len();
    if deg < 2 {
        return if node.size < 2 { None } else { Some(0) };
    }
    let bound = omega * node.size as f64 / (deg - 1) as f64;
    node.children.iter().position(|ch| ch.size() as f64 >= bound)
}

/// Replays the node's last-resort repair (exact cuts at its current fan-out
/// on its own split-dim values, as a full-range rebuild would apply them)
/// and reports whether that result meets the balance bound. False means the
/// violation is baked into the value multiset or the (fan-out, omega) pair.
fn exact_redo_satisfies(node: &NonLeafNode, omega: f64) -> bool {
    let values: Vec<f64> = node
        .children
        .iter()
        .flat_map(|c| c.collect_points())
        .map(|p| p.coords[node.split_dim])
        .collect();
    let pivots = sanitize_pivots(exact_cut_values(&values, node.children.len()), &values, None);
    let mut sizes = vec![0usize; pivots.len() + 1];
    for &v in &values {
        sizes[route_child(&pivots, v)] += 1;
    }
    sizes.retain(|&s| s > 0);
    if sizes.len() < 2 {
        return false;
    }
    let bound = omega * node.size as f64 / (sizes.len() - 1) as f64;
    sizes.iter().all(|&s| (s as f64) < bound)
}

/// Smallest contiguous child range containing `offender` whose point count
/// stays below `(width - 1) / (degree - 1) * omega * size`; ties prefer
/// narrower, then leftmost ranges. Falls back to the full range when no
/// proper sub-range qualifies.
pub fn select_rebuild_range(node: &NonLeafNode, offender: usize, omega: f64) -> (usize, usize) {
    let deg = node.children.len();
    if deg < 2 {
        return (0, deg.saturating_sub(1));
    }
    let scale = omega * node.size as f64 / (deg - 1) as f64;
    let mut best: Option<(usize, usize, usize)> = None; // (zeta, width, i0)
    for i0 in 0..=offender {
        for i1 in offender..deg {
            if i0 == 0 && i1 == deg - 1 {
                continue;
            }
            let zeta: usize = node.children[i0..=i1].iter().map(Node::size).sum();
            if (zeta as f64) < (i1 - i0) as f64 * scale {
                let key = (zeta, i1 - i0, i0);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
    }
    match best {
        Some((_, width, i0)) => (i0, i0 + width),
        None => (0, deg - 1),
    }
}

/// Rebuilds the children in `range` from their own points.
///
/// The node's CDF model absorbs the pending inserted values first; the
/// interior pivots are then re-predicted from the updated model (or cut
/// exactly when `exact` is set or no model is retained) and the range's
/// points are re-partitioned and rebuilt. Children outside the range and the
/// node's point population are untouched.
pub fn rebuild_range(
    node: &mut NonLeafNode,
    range: (usize, usize),
    cfg: &TreeConfig,
    t: usize,
    depth: usize,
    seed_counter: &mut u64,
    exact: bool,
) {
    let (i0, i1) = range;
    let deg = node.children.len();
    debug_assert!(i0 <= i1 && i1 < deg);

    let pending = std::mem::take(&mut node.pending);
    if let Some(model) = &node.model {
        if !pending.is_empty() {
            if let Ok(updated) = quantile::update_incremental(model, &pending, &[]) {
                node.model = Some(updated);
            }
        }
    }

    let left_bound = if i0 > 0 { Some(node.pivots[i0 - 1]) } else { None };
    let right_bound = if i1 < deg - 1 { Some(node.pivots[i1]) } else { None };

    let mut points = Vec::new();
    for child in node.children.splice(i0..=i1, std::iter::empty()) {
        child.take_points_into(&mut points);
    }
    let width = i1 - i0 + 1;
    let values: Vec<f64> = points.iter().map(|p| p.coords[node.split_dim]).collect();

    let raw = match (&node.model, exact) {
        (Some(model), false) => {
            // The model predicts whole-node CDF values; rescale them so the
            // range's own span maps to [0, 1] and split it evenly.
            let lo = left_bound.map_or(0.0, |p| quantile::predict_quantile_value(model, p));
            let hi = right_bound.map_or(1.0, |p| quantile::predict_quantile_value(model, p));
            let span = hi - lo;
            let local = |x: f64| {
                if span > 0.0 {
                    ((quantile::predict_quantile_value(model, x) - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            };
            let targets: Vec<f64> = (1..width).map(|j| j as f64 / width as f64).collect();
            quantile::select_pivots_fn(&local, &values, &targets, cfg.kappa)
        }
        _ => exact_cut_values(&values, width),
    };
    let mut pivots = sanitize_pivots(raw, &values, left_bound);
    let mut buckets = partition_points(points, &pivots, node.split_dim);
    prune_empty_buckets(&mut pivots, &mut buckets);
    // New range children must meet the node-level balance bound, or calling
    // this to repair a violation could hand back another one. Mirror the
    // build-time guard: redo with exact cuts when the bound is achievable.
    let range_total: usize = buckets.iter().map(Vec::len).sum();
    let node_bound = |final_deg: usize| {
        cfg.omega * node.size as f64 / (final_deg.saturating_sub(1).max(1)) as f64
    };
    let achievable = width >= 2 && (range_total.div_ceil(width) as f64) < node_bound(deg);
    let violated = {
        let bound = node_bound(deg - width + buckets.len());
        buckets.iter().any(|b| b.len() as f64 >= bound)
    };
    if !exact && violated && achievable {
        let pts: Vec<Point> = buckets.into_iter().flatten().collect();
        pivots = sanitize_pivots(exact_cut_values(&values, width), &values, left_bound);
        buckets = partition_points(pts, &pivots, node.split_dim);
        prune_empty_buckets(&mut pivots, &mut buckets);
    }
    let mut ctx = BuildCtx { cfg, t, seed_counter, exact_pivots: exact };
    let new_children: Vec<Node> =
        buckets.into_iter().map(|b| build_node(b, depth + 1, &mut ctx)).collect();
    let at = i0.min(node.pivots.len());
    node.pivots.splice(at..(at + width - 1).min(node.pivots.len()), pivots);
    let insert_at = i0.min(node.children.len());
    node.children.splice(insert_at..insert_at, new_children);
    debug_assert_eq!(node.pivots.len() + 1, node.children.len());
    debug_assert_eq!(node.size, node.children.iter().map(Node::size).sum::<usize>());
}

struct InsertCtx<'a> {
    cfg: &'a TreeConfig,
    t: usize,
    seed_counter: u64,
    rng: ChaCha8Rng,
    rebuilds: Vec<RebuildRecord>,
}

impl BmkdTree {
    /// Assembles a tree directly from parts; callers are responsible for the
    /// structural invariants (used by deserialization and tests).
    pub fn from_parts(root: Node, config: TreeConfig, dims: usize, resolved_t: usize) -> BmkdTree {
        BmkdTree {
            root,
            config,
            dims,
            resolved_t,
            seed_counter: 0,
            mutation_counter: 0,
            rebuild_log: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.root.size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn collect_points(&self) -> Vec<Point> {
        self.root.collect_points()
    }

    /// `(depth, point count)` of every leaf, pre-order.
    pub fn leaf_stats(&self) -> Vec<(usize, usize)> {
        fn walk(node: &Node, depth: usize, out: &mut Vec<(usize, usize)>) {
            match node {
                Node::Leaf(l) => out.push((depth, l.points.len())),
                Node::Inner(n) => n.children.iter().for_each(|c| walk(c, depth + 1, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, 0, &mut out);
        out
    }

    /// Bulk-inserts a batch in place. Batches route down the existing pivots;
    /// overflowing leaves split; on backtrack every violated child triggers a
    /// range rebuild, so the balance bound holds again when this returns.
    pub fn insert(&mut self, batch: Vec<Point>) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        for (i, p) in batch.iter().enumerate() {
            if p.dims() != self.dims {
                return Err(UnisError::Data(format!(
                    "batch point {i} has {} dimensions, expected {}",
                    p.dims(),
                    self.dims
                )));
            }
            if p.coords.iter().any(|v| !v.is_finite()) {
                return Err(UnisError::Data(format!(
                    "batch point {i} has a non-finite coordinate"
                )));
            }
        }
        let stream = sub_seed(self.config.rng_seed, self.seed_counter);
        self.seed_counter += 1;
        let cfg = self.config.clone();
        let mut ctx = InsertCtx {
            cfg: &cfg,
            t: self.resolved_t,
            seed_counter: self.seed_counter,
            rng: ChaCha8Rng::seed_from_u64(stream),
            rebuilds: Vec::new(),
        };
        insert_node(&mut self.root, batch, 0, &mut ctx);
        self.seed_counter = ctx.seed_counter;
        self.rebuild_log.append(&mut ctx.rebuilds);
        self.mutation_counter += 1;
        Ok(())
    }

    /// Number of non-leaf nodes violating the balance bound.
    pub fn balance_violations(&self) -> usize {
        fn walk(node: &Node, omega: f64, count: &mut usize) {
            if let Node::Inner(inner) = node {
                if !is_omega_balanced(inner, omega) {
                    *count += 1;
                }
                inner.children.iter().for_each(|c| walk(c, omega, count));
            }
        }
        let mut count = 0;
        walk(&self.root, self.config.omega, &mut count);
        count
    }

    /// Number of balance violations a rebuild could actually remove: the
    /// node violates the bound, yet replaying its last-resort repair (exact
    /// cuts at the current fan-out over the node's own split-dim values)
    /// would satisfy it. Violations that are structural to the (t, omega)
    /// pair, to integer granularity at small sizes, or to duplicated values
    /// no pivot can separate are excluded; no rebuild can remove those.
    pub fn actionable_balance_violations(&self) -> usize {
        fn walk(node: &Node, omega: f64, count: &mut usize) {
            if let Node::Inner(inner) = node {
                if !is_omega_balanced(inner, omega) && exact_redo_satisfies(inner, omega) {
                    *count += 1;
                }
                inner.children.iter().for_each(|c| walk(c, omega, count));
            }
        }
        let mut count = 0;
        walk(&self.root, self.config.omega, &mut count);
        count
    }

    /// Full structural audit: cached sizes, pivot ordering, routing
    /// intervals, bounding-volume enclosure, leaf capacity, and child/pivot
    /// arity. Returns the first violation found.
    pub fn audit_structure(&self) -> Result<()> {
        fn walk(node: &Node, c: usize, dims: usize) -> Result<usize> {
            match node {
                Node::Leaf(leaf) => {
                    if leaf.points.is_empty() {
                        return Err(UnisError::Data("empty leaf".into()));
                    }
                    let all_equal = leaf.points.iter().all(|p| p.coords == leaf.points[0].coords);
                    if leaf.points.len() > c && !all_equal {
                        return Err(UnisError::Data(format!(
                            "leaf holds {} points over capacity {c}",
                            leaf.points.len()
                        )));
                    }
                    for p in &leaf.points {
                        if p.dims() != dims {
                            return Err(UnisError::Data("dimension mismatch in leaf".into()));
                        }
                        if !leaf.mbr.contains(&p.coords) || !leaf.mbb.contains(&p.coords) {
                            return Err(UnisError::Data(format!(
                                "point {} escapes its leaf volume",
                                p.id
                            )));
                        }
                    }
                    Ok(leaf.points.len())
                }
                Node::Inner(inner) => {
                    if inner.children.len() != inner.pivots.len() + 1 {
                        return Err(UnisError::Data("child/pivot arity mismatch".into()));
                    }
                    if inner.pivots.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(UnisError::Data("pivots not strictly ascending".into()));
                    }
                    let mut total = 0;
                    for (i, child) in inner.children.iter().enumerate() {
                        total += walk(child, c, dims)?;
                        for p in child.collect_points() {
                            let x = p.coords[inner.split_dim];
                            if route_child(&inner.pivots, x) != i {
                                return Err(UnisError::Data(format!(
                                    "point {} routes outside child {i}",
                                    p.id
                                )));
                            }
                            if !inner.mbr.contains(&p.coords) || !inner.mbb.contains(&p.coords) {
                                return Err(UnisError::Data(format!(
                                    "point {} escapes an inner volume",
                                    p.id
                                )));
                            }
                        }
                    }
                    if total != inner.size {
                        return Err(UnisError::Data(format!(
                            "cached size {} but {total} points found",
                            inner.size
                        )));
                    }
                    Ok(total)
                }
            }
        }
        walk(&self.root, self.config.c, self.dims).map(|_| ())
    }
}

fn insert_node(node: &mut Node, batch: Vec<Point>, depth: usize, ctx: &mut InsertCtx) {
    match node {
        Node::Leaf(leaf) => {
            for p in &batch {
                leaf.mbr.extend(&p.coords);
                leaf.mbb.extend(&p.coords);
            }
            leaf.points.extend(batch);
            if leaf.points.len() > ctx.cfg.c {
                let points = std::mem::take(&mut leaf.points);
                let mut bctx = BuildCtx {
                    cfg: ctx.cfg,
                    t: ctx.t,
                    seed_counter: &mut ctx.seed_counter,
                    exact_pivots: false,
                };
                *node = build_node(points, depth, &mut bctx);
            }
        }
        Node::Inner(inner) => {
            inner.size += batch.len();
            for p in &batch {
                inner.mbr.extend(&p.coords);
                inner.mbb.extend(&p.coords);
                // Reservoir of split-dim values at the training sampling
                // rate; feeds the model update at the next range rebuild.
                if ctx.rng.gen::<f64>() < ctx.cfg.delta {
                    inner.pending.push(p.coords[inner.split_dim]);
                }
            }
            let mut buckets: Vec<Vec<Point>> =
                (0..inner.children.len()).map(|_| Vec::new()).collect();
            for p in batch {
                buckets[route_child(&inner.pivots, p.coords[inner.split_dim])].push(p);
            }
            for (i, bucket) in buckets.into_iter().enumerate() {
                if !bucket.is_empty() {
                    insert_node(&mut inner.children[i], bucket, depth + 1, ctx);
                }
            }
            rebalance(inner, depth, ctx);
        }
    }
}

fn rebalance(inner: &mut NonLeafNode, depth: usize, ctx: &mut InsertCtx) {
    let omega = ctx.cfg.omega;
    let mut selective_budget = inner.children.len() + 1;
    loop {
        // Act only on violations a rebuild can actually remove; when even a
        // perfectly even split would violate the bound, rebuilding is churn.
        if !balance_feasible(inner.size, inner.children.len(), omega) {
            break;
        }
        let Some(offender) = first_unbalanced_child(inner, omega) else {
            break;
        };
        let range = if selective_budget > 0 {
            select_rebuild_range(inner, offender, omega)
        } else {
            (0, inner.children.len() - 1)
        };
        let selective: usize = inner.children[range.0..=range.1].iter().map(Node::size).sum();
        ctx.rebuilds
            .push(RebuildRecord { selective_points: selective, scapegoat_points: inner.size });
        let exact = selective_budget == 0;
        rebuild_range(inner, range, ctx.cfg, ctx.t, depth, &mut ctx.seed_counter, exact);
        if exact {
            // The exact full-range rebuild is as balanced as any pivot
            // choice can make this node.
            break;
        }
        selective_budget -= 1;
    }
}
