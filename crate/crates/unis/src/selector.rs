//! Learned per-query search-strategy selection.
//!
//! A query is embedded as raw features (coordinates plus the query parameter)
//! together as index-aware features: for every leaf captured in a
//! [`LeafSnapshot`], a path-overlap score between the query's leaf path and
//! that leaf's path. A random forest trained on timed ground truth ranks the
//! four search strategies per query; quality is scored by mean reciprocal
//! rank of the true fastest strategy.

use crate::geometry::Point;
use crate::search::{
    knn_with_deadline, knn_with_stats, radius_with_deadline, radius_with_stats, KnnResult,
    SearchStrategy,
};
use crate::tree::{route_child, BmkdTree, Node};
use crate::{sub_seed, Result, UnisError};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Read, Write};
use std::time::{Duration, Instant};

/// Child indices along the root-to-leaf path (root excluded, leaf implied).
pub type LeafPathCode = Vec<u16>;

/// Leaf paths of every leaf in the tree, in pre-order, stamped with the
/// tree's mutation counter at capture time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafSnapshot {
    pub stamp: u64,
    pub codes: Vec<LeafPathCode>,
}

/// Path-overlap score between two leaf paths: `2 * shared - max(len_a,
/// len_b)`. Equal paths score their own length; paths that fork at the root
/// score the negated longer depth.
pub fn code_metric(a: &LeafPathCode, b: &LeafPathCode) -> i64 {
    let shared = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count() as i64;
    2 * shared - (a.len().max(b.len())) as i64
}

/// Routes a point down the tree and records the child index at every level.
pub fn leaf_code_of(tree: &BmkdTree, p: &Point) -> LeafPathCode {
    assert_eq!(p.coords.len(), tree.dims, "point dimensionality mismatch");
    let mut code = Vec::new();
    let mut node = &tree.root;
    while let Node::Inner(inner) = node {
        let child = route_child(&inner.pivots, p.coords[inner.split_dim]);
        code.push(child as u16);
        node = &inner.children[child];
    }
    code
}

/// Path-overlap score between the leaves two points route to.
pub fn index_metric(tree: &BmkdTree, a: &Point, b: &Point) -> i64 {
    code_metric(&leaf_code_of(tree, a), &leaf_code_of(tree, b))
}

/// Captures the leaf paths of the current tree.
pub fn snapshot_leaves(tree: &BmkdTree) -> LeafSnapshot {
    fn walk(node: &Node, code: &mut Vec<u16>, out: &mut Vec<LeafPathCode>) {
        match node {
            Node::Leaf(_) => out.push(code.clone()),
            Node::Inner(inner) => {
                for (i, child) in inner.children.iter().enumerate() {
                    code.push(i as u16);
                    walk(child, code, out);
                    code.pop();
                }
            }
        }
    }
    let mut codes = Vec::new();
    walk(&tree.root, &mut Vec::new(), &mut codes);
    LeafSnapshot { stamp: tree.mutation_counter, codes }
}

/// Per-query feature vector: raw query description plus one path-overlap
/// score per snapshot leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    /// Query coordinates followed by the query parameter (k or radius).
    pub f1: Vec<f64>,
    /// Path-overlap score against every leaf in the snapshot.
    pub f2: Vec<f64>,
}

impl QueryFeatures {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.f1.len() + self.f2.len());
        out.extend_from_slice(&self.f1);
        out.extend_from_slice(&self.f2);
        out
    }
}

/// Embeds a query against a leaf snapshot. Fails with
/// [`UnisError::SnapshotStale`] if the tree changed since the snapshot.
pub fn extract_features(
    tree: &BmkdTree,
    snapshot: &LeafSnapshot,
    q: &Point,
    param: f64,
) -> Result<QueryFeatures> {
    if snapshot.stamp != tree.mutation_counter {
        return Err(UnisError::SnapshotStale);
    }
    if q.coords.len() != tree.dims {
        return Err(UnisError::Usage(format!(
            "query has {} dimensions, tree has {}",
            q.coords.len(),
            tree.dims
        )));
    }
    let mut f1 = q.coords.clone();
    f1.push(param);
    let qcode = leaf_code_of(tree, q);
    let f2 = snapshot.codes.iter().map(|c| code_metric(&qcode, c) as f64).collect();
    Ok(QueryFeatures { f1, f2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    Knn,
    Radius,
}

impl Workload {
    pub fn name(self) -> &'static str {
        match self {
            Workload::Knn => "knn",
            Workload::Radius => "radius",
        }
    }

    pub fn parse(s: &str) -> Option<Workload> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Some(Workload::Knn),
            "radius" => Some(Workload::Radius),
            _ => None,
        }
    }
}

/// How a sampled fraction `tau` of the data extent becomes a search radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusFormula {
    /// `sqrt(sum extent_i^2) * tau`: radius scales with the diagonal.
    Normalized,
    /// `sum extent_i^2 * tau`: squared-diagonal scale; large radii that
    /// usually cover most of the data set.
    Literal,
}

/// Ground-truth generation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtConfig {
    pub workload: Workload,
    pub radius_formula: RadiusFormula,
    /// kNN workloads draw k uniformly from `1..=max_k`.
    pub max_k: usize,
    /// Untimed runs before measurement, per strategy.
    pub warmups: usize,
    /// Timed repetitions whose median is the strategy's cost.
    pub reps: usize,
    /// A strategy is abandoned once it exceeds this multiple of the best
    /// median seen so far for the same query.
    pub abort_factor: f64,
}

impl Default for GtConfig {
    fn default() -> Self {
        GtConfig {
            workload: Workload::Knn,
            radius_formula: RadiusFormula::Normalized,
            max_k: 1000,
            warmups: 5,
            reps: 3,
            abort_factor: 1.5,
        }
    }
}

/// One timed training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    /// Index of the fastest strategy (see [`SearchStrategy::index`]).
    pub label: usize,
    /// Median seconds per strategy; `+inf` where the run was abandoned.
    pub times: [f64; 4],
}

/// Index of the smallest time, ties to the lowest index.
pub fn true_fastest(times: &[f64; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if times[i] < times[best] {
            best = i;
        }
    }
    best
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

enum Job {
    Knn(usize),
    Radius(f64),
}

#[derive(PartialEq)]
enum QueryOutput {
    Knn(KnnResult),
    Radius(Vec<u64>),
}

fn run_query(
    tree: &BmkdTree,
    q: &Point,
    job: &Job,
    s: SearchStrategy,
    limit: Option<Duration>,
) -> Option<QueryOutput> {
    match (job, limit) {
        (Job::Knn(k), None) => Some(QueryOutput::Knn(knn_with_stats(tree, q, *k, s).0)),
        (Job::Knn(k), Some(d)) => {
            knn_with_deadline(tree, q, *k, s, Instant::now() + d).map(|(r, _)| QueryOutput::Knn(r))
        }
        (Job::Radius(r), None) => Some(QueryOutput::Radius(radius_with_stats(tree, q, *r, s).0)),
        (Job::Radius(r), Some(d)) => radius_with_deadline(tree, q, *r, s, Instant::now() + d)
            .map(|(ids, _)| QueryOutput::Radius(ids)),
    }
}

/// Times every strategy on `n_samples` queries drawn from `data` and labels
/// each query with its fastest strategy.
///
/// Per query: strategies run in a fixed order; each gets `warmups` untimed
/// runs and `reps` timed runs (median taken). Once one strategy has a
/// median, later strategies run under a deadline of `abort_factor` times the
/// best median; an abandoned strategy scores `+inf`, which cannot change the
/// winner. Completed strategies must return identical results; any mismatch
/// aborts generation, since it means an exactness bug.
pub fn generate_ground_truth(
    tree: &BmkdTree,
    data: &[Point],
    n_samples: usize,
    rng_seed: u64,
    gt: &GtConfig,
) -> Result<Vec<LabeledSample>> {
    if data.is_empty() {
        return Err(UnisError::Usage("ground truth needs a non-empty query pool".into()));
    }
    if gt.reps == 0 {
        return Err(UnisError::Usage("ground truth needs at least one timed repetition".into()));
    }
    if gt.workload == Workload::Knn && gt.max_k == 0 {
        return Err(UnisError::Usage("max_k must be positive for a kNN workload".into()));
    }
    let snapshot = snapshot_leaves(tree);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(rng_seed, 0));
    let mbr = tree.root.mbr();
    let extent_sq: f64 =
        mbr.lo.iter().zip(mbr.hi.iter()).map(|(lo, hi)| (hi - lo) * (hi - lo)).sum();
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let q = data[rng.gen_range(0..data.len())].clone();
        let (param, job) = match gt.workload {
            Workload::Knn => {
                let k = rng.gen_range(1..=gt.max_k);
                (k as f64, Job::Knn(k))
            }
            Workload::Radius => {
                let tau: f64 = rng.gen();
                let r = match gt.radius_formula {
                    RadiusFormula::Normalized => extent_sq.sqrt() * tau,
                    RadiusFormula::Literal => extent_sq * tau,
                };
                (r, Job::Radius(r))
            }
        };
        let mut times = [f64::INFINITY; 4];
        let mut best = f64::INFINITY;
        let mut reference: Option<QueryOutput> = None;
        for s in SearchStrategy::ALL {
            // Floor the deadline well above timer noise so a strategy close
            // to the best is never spuriously abandoned.
            let limit = if best.is_finite() {
                Some(Duration::from_secs_f64((best * gt.abort_factor).max(2e-5)))
            } else {
                None
            };
            let mut completed = true;
            let mut audited = false;
            let mut meas = Vec::with_capacity(gt.reps);
            for rep in 0..(gt.warmups + gt.reps) {
                let t0 = Instant::now();
                match run_query(tree, &q, &job, s, limit) {
                    None => {
                        completed = false;
                        break;
                    }
                    Some(out) => {
                        let dt = t0.elapsed().as_secs_f64();
                        if rep >= gt.warmups {
                            meas.push(dt);
                        }
                        if !audited {
                            match &reference {
                                None => reference = Some(out),
                                Some(r0) => {
                                    if *r0 != out {
                                        return Err(UnisError::Data(
                                            "search strategies disagreed on a ground-truth query"
                                                .into(),
                                        ));
                                    }
                                }
                            }
                            audited = true;
                        }
                    }
                }
            }
            if completed && meas.len() == gt.reps {
                let m = median(meas);
                times[s.index()] = m;
                best = best.min(m);
            }
        }
        let label = true_fastest(&times);
        let features = extract_features(tree, &snapshot, &q, param)?.flat();
        samples.push(LabeledSample { features, label, times });
    }
    Ok(samples)
}

/// Random-forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 50, max_depth: 12, min_leaf: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DNode {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { counts: [u32; 4] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<DNode>,
}

/// A trained strategy ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    /// Degenerate training data collapses the model to one constant class.
    pub constant: Option<usize>,
    pub warning: Option<String>,
    pub trees: Vec<DecisionTree>,
}

fn label_counts(samples: &[LabeledSample], idxs: &[u32]) -> [u32; 4] {
    let mut counts = [0u32; 4];
    for &i in idxs {
        counts[samples[i as usize].label] += 1;
    }
    counts
}

fn majority(counts: &[u32; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    best
}

fn gini(counts: &[u32; 4]) -> f64 {
    let n: u32 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n) * (c as f64 / n)).sum::<f64>()
}

fn grow(
    samples: &[LabeledSample],
    idxs: Vec<u32>,
    depth: usize,
    cfg: &ForestConfig,
    n_features: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<DNode>,
) -> u32 {
    let counts = label_counts(samples, &idxs);
    let id = nodes.len() as u32;
    nodes.push(DNode::Leaf { counts });
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if depth >= cfg.max_depth || idxs.len() < 2 * cfg.min_leaf || pure {
        return id;
    }

    // Examine a sqrt-sized random subset of features, in ascending order for
    // a deterministic tie-break (first best split found wins).
    let m = ((n_features as f64).sqrt().ceil() as usize).clamp(1, n_features);
    let mut feats: Vec<usize> = rand::seq::index::sample(rng, n_features, m).into_vec();
    feats.sort_unstable();

    let mut best: Option<(f64, usize, f64)> = None; // (weighted gini, feature, threshold)
    let total = idxs.len() as f64;
    for &f in &feats {
        let mut vals: Vec<(f64, usize)> = idxs
            .iter()
            .map(|&i| (samples[i as usize].features[f], samples[i as usize].label))
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u32; 4];
        let mut right = counts;
        for i in 0..vals.len() - 1 {
            left[vals[i].1] += 1;
            right[vals[i].1] -= 1;
            if vals[i].0 == vals[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = vals.len() - nl;
            if nl < cfg.min_leaf || nr < cfg.min_leaf {
                continue;
            }
            let score = (nl as f64 * gini(&left) + nr as f64 * gini(&right)) / total;
            let threshold = 0.5 * (vals[i].0 + vals[i + 1].0);
            if best.is_none() || score < best.unwrap().0 {
                best = Some((score, f, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return id;
    };
    let (l_idx, r_idx): (Vec<u32>, Vec<u32>) =
        idxs.into_iter().partition(|&i| samples[i as usize].features[feature] <= threshold);
    let left = grow(samples, l_idx, depth + 1, cfg, n_features, rng, nodes);
    let right = grow(samples, r_idx, depth + 1, cfg, n_features, rng, nodes);
    nodes[id as usize] = DNode::Split { feature, threshold, left, right };
    id
}

/// Trains the ranker. Fewer than 100 samples or fewer than two distinct
/// labels yield a constant predictor with a warning instead of a forest.
pub fn train_forest(samples: &[LabeledSample], cfg: &ForestConfig) -> Result<ForestModel> {
    if cfg.n_trees == 0 {
        return Err(UnisError::Usage("forest needs at least one tree".into()));
    }
    let n_features = samples.first().map_or(0, |s| s.features.len());
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != n_features {
            return Err(UnisError::Data(format!(
                "sample {i} has {} features, expected {n_features}",
                s.features.len()
            )));
        }
        if s.label >= 4 {
            return Err(UnisError::Data(format!("sample {i} has label {} > 3", s.label)));
        }
    }

    let mut seen = [false; 4];
    for s in samples {
        seen[s.label] = true;
    }
    let distinct = seen.iter().filter(|&&b| b).count();
    if samples.len() < 100 || distinct < 2 {
        let counts = label_counts(samples, &(0..samples.len() as u32).collect::<Vec<_>>());
        let reason = if samples.len() < 100 {
            format!("only {} training samples (need 100)", samples.len())
        } else {
            "all training samples share one label".to_string()
        };
        return Ok(ForestModel {
            config: *cfg,
            n_features,
            constant: Some(majority(&counts)),
            warning: Some(format!("constant predictor: {reason}")),
            trees: Vec::new(),
        });
    }

    let n = samples.len();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for ti in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, ti as u64));
        let idxs: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
        let mut nodes = Vec::new();
        grow(samples, idxs, 0, cfg, n_features, &mut rng, &mut nodes);
        trees.push(DecisionTree { nodes });
    }
    Ok(ForestModel { config: *cfg, n_features, constant: None, warning: None, trees })
}

/// Ranks the four strategies for one feature vector, most votes first (ties
/// to the lower strategy index).
pub fn predict_ranked(model: &ForestModel, features: &[f64]) -> Result<[SearchStrategy; 4]> {
    if features.len() != model.n_features {
        return Err(UnisError::Usage(format!(
            "feature vector has {} entries, model expects {}",
            features.len(),
            model.n_features
        )));
    }
    let mut votes = [0u64; 4];
    if let Some(c) = model.constant {
        votes[c] = 1;
    } else {
        for tree in &model.trees {
            let mut at = 0usize;
            loop {
                match &tree.nodes[at] {
                    DNode::Leaf { counts } => {
                        votes[majority(counts)] += 1;
                        break;
                    }
                    DNode::Split { feature, threshold, left, right } => {
                        at = if features[*feature] <= *threshold {
                            *left as usize
                        } else {
                            *right as usize
                        };
                    }
                }
            }
        }
    }
    let mut order = [0usize, 1, 2, 3];
    order.sort_by_key(|&i| (std::cmp::Reverse(votes[i]), i));
    Ok(order.map(|i| SearchStrategy::from_index(i).expect("index < 4")))
}

/// Mean reciprocal rank of each sample's true fastest strategy in the
/// model's ranking.
pub fn mrr(model: &ForestModel, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(UnisError::Usage("mrr needs at least one sample".into()));
    }
    let mut sum = 0.0;
    for s in samples {
        let ranking = predict_ranked(model, &s.features)?;
        let truth = true_fastest(&s.times);
        let pos = ranking.iter().position(|st| st.index() == truth).expect("all four ranked");
        sum += 1.0 / (pos + 1) as f64;
    }
    Ok(sum / samples.len() as f64)
}

/// Fraction of samples whose top-ranked strategy is the true fastest.
pub fn top1_accuracy(model: &ForestModel, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(UnisError::Usage("accuracy needs at least one sample".into()));
    }
    let mut hits = 0usize;
    for s in samples {
        let ranking = predict_ranked(model, &s.features)?;
        if ranking[0].index() == true_fastest(&s.times) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Expected value of [`mrr_random_control`]: the mean reciprocal rank of a
/// uniformly random ranking, (1 + 1/2 + 1/3 + 1/4) / 4.
pub const RANDOM_CONTROL_EXPECTATION: f64 = 25.0 / 48.0;

/// MRR of a uniformly random ranking per sample; a sanity floor for trained
/// models.
pub fn mrr_random_control(samples: &[LabeledSample], seed: u64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for s in samples {
        let mut order = [0usize, 1, 2, 3];
        order.shuffle(&mut rng);
        let truth = true_fastest(&s.times);
        let pos = order.iter().position(|&i| i == truth).expect("permutation of 0..4");
        sum += 1.0 / (pos + 1) as f64;
    }
    sum / samples.len() as f64
}

/// Writes samples as CSV: `f0..f{m-1}, label, t_<strategy>...`. Infinite
/// times serialize as `inf` and parse back exactly.
pub fn samples_to_csv<W: Write>(samples: &[LabeledSample], w: &mut W) -> Result<()> {
    let n_feat = samples.first().map_or(0, |s| s.features.len());
    let mut header: Vec<String> = (0..n_feat).map(|i| format!("f{i}")).collect();
    header.push("label".to_string());
    for s in SearchStrategy::ALL {
        header.push(format!("t_{}", s.name()));
    }
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        let mut row: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        row.push(SearchStrategy::from_index(s.label).expect("label < 4").name().to_string());
        for t in s.times {
            row.push(t.to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parses the CSV format written by [`samples_to_csv`].
pub fn samples_from_csv<R: BufRead>(r: R) -> Result<Vec<LabeledSample>> {
    let mut lines = r.lines();
    let header =
        lines.next().ok_or_else(|| UnisError::Data("empty CSV: missing header".into()))??;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    let label_idx = cols
        .iter()
        .position(|c| *c == "label")
        .ok_or_else(|| UnisError::Data("CSV header has no 'label' column".into()))?;
    if cols.len() != label_idx + 5 {
        return Err(UnisError::Data(
            "CSV header must end with 'label' and four time columns".into(),
        ));
    }
    let n_feat = label_idx;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let row = lineno + 2;
        if fields.len() != cols.len() {
            return Err(UnisError::Data(format!(
                "CSV row {row}: {} fields, expected {}",
                fields.len(),
                cols.len()
            )));
        }
        let mut features = Vec::with_capacity(n_feat);
        for f in &fields[..n_feat] {
            features.push(
                f.parse::<f64>().map_err(|_| {
                    UnisError::Data(format!("CSV row {row}: bad feature value {f:?}"))
                })?,
            );
        }
        let label = SearchStrategy::parse(fields[n_feat])
            .ok_or_else(|| {
                UnisError::Data(format!("CSV row {row}: bad label {:?}", fields[n_feat]))
            })?
            .index();
        let mut times = [0.0f64; 4];
        for (i, f) in fields[n_feat + 1..].iter().enumerate() {
            times[i] = f
                .parse::<f64>()
                .map_err(|_| UnisError::Data(format!("CSV row {row}: bad time value {f:?}")))?;
        }
        out.push(LabeledSample { features, label, times });
    }
    Ok(out)
}

const MODEL_MAGIC: &[u8; 4] = b"UNSL";
const MODEL_VERSION: u32 = 1;

/// Serializes a trained model with the leaf snapshot it was trained against.
pub fn save_model<W: Write>(model: &ForestModel, snapshot: &LeafSnapshot, w: &mut W) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(MODEL_VERSION)?;
    w.write_u32::<LittleEndian>(model.config.n_trees as u32)?;
    w.write_u32::<LittleEndian>(model.config.max_depth as u32)?;
    w.write_u32::<LittleEndian>(model.config.min_leaf as u32)?;
    w.write_u64::<LittleEndian>(model.config.seed)?;
    w.write_u64::<LittleEndian>(model.n_features as u64)?;
    match model.constant {
        None => {
            w.write_u8(0)?;
            w.write_u8(0)?;
        }
        Some(c) => {
            w.write_u8(1)?;
            w.write_u8(c as u8)?;
        }
    }
    let warning = model.warning.as_deref().unwrap_or("");
    w.write_u32::<LittleEndian>(warning.len() as u32)?;
    w.write_all(warning.as_bytes())?;
    w.write_u32::<LittleEndian>(model.trees.len() as u32)?;
    for tree in &model.trees {
        w.write_u32::<LittleEndian>(tree.nodes.len() as u32)?;
        for node in &tree.nodes {
            match node {
                DNode::Leaf { counts } => {
                    w.write_u8(0)?;
                    for &c in counts {
                        w.write_u32::<LittleEndian>(c)?;
                    }
                }
                DNode::Split { feature, threshold, left, right } => {
                    w.write_u8(1)?;
                    w.write_u32::<LittleEndian>(*feature as u32)?;
                    w.write_f64::<LittleEndian>(*threshold)?;
                    w.write_u32::<LittleEndian>(*left)?;
                    w.write_u32::<LittleEndian>(*right)?;
                }
            }
        }
    }
    w.write_u64::<LittleEndian>(snapshot.stamp)?;
    w.write_u64::<LittleEndian>(snapshot.codes.len() as u64)?;
    for code in &snapshot.codes {
        w.write_u32::<LittleEndian>(code.len() as u32)?;
        for &c in code {
            w.write_u16::<LittleEndian>(c)?;
        }
    }
    Ok(())
}

/// Loads a model written by [`save_model`].
pub fn load_model<R: Read>(r: &mut R) -> Result<(ForestModel, LeafSnapshot)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(UnisError::Data("not a strategy-model file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(UnisError::Data(format!("unsupported model version {version}")));
    }
    let config = ForestConfig {
        n_trees: r.read_u32::<LittleEndian>()? as usize,
        max_depth: r.read_u32::<LittleEndian>()? as usize,
        min_leaf: r.read_u32::<LittleEndian>()? as usize,
        seed: r.read_u64::<LittleEndian>()?,
    };
    let n_features = r.read_u64::<LittleEndian>()? as usize;
    let has_constant = r.read_u8()? != 0;
    let constant_class = r.read_u8()? as usize;
    let constant = if has_constant {
        if constant_class >= 4 {
            return Err(UnisError::Data("constant class out of range".into()));
        }
        Some(constant_class)
    } else {
        None
    };
    let warn_len = r.read_u32::<LittleEndian>()? as usize;
    let mut warn_bytes = vec![0u8; warn_len];
    r.read_exact(&mut warn_bytes)?;
    let warning = if warn_len == 0 {
        None
    } else {
        Some(
            String::from_utf8(warn_bytes)
                .map_err(|_| UnisError::Data("model warning is not valid UTF-8".into()))?,
        )
    };
    let n_trees = r.read_u32::<LittleEndian>()? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = r.read_u32::<LittleEndian>()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            match r.read_u8()? {
                0 => {
                    let mut counts = [0u32; 4];
                    for c in &mut counts {
                        *c = r.read_u32::<LittleEndian>()?;
                    }
                    nodes.push(DNode::Leaf { counts });
                }
                1 => {
                    let feature = r.read_u32::<LittleEndian>()? as usize;
                    let threshold = r.read_f64::<LittleEndian>()?;
                    let left = r.read_u32::<LittleEndian>()?;
                    let right = r.read_u32::<LittleEndian>()?;
                    nodes.push(DNode::Split { feature, threshold, left, right });
                }
                tag => {
                    return Err(UnisError::Data(format!("unknown tree node tag {tag}")));
                }
            }
        }
        trees.push(DecisionTree { nodes });
    }
    let stamp = r.read_u64::<LittleEndian>()?;
    let n_codes = r.read_u64::<LittleEndian>()? as usize;
    let mut codes = Vec::with_capacity(n_codes);
    for _ in 0..n_codes {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut code = Vec::with_capacity(len);
        for _ in 0..len {
            code.push(r.read_u16::<LittleEndian>()?);
        }
        codes.push(code);
    }
    Ok((
        ForestModel { config, n_features, constant, warning, trees },
        LeafSnapshot { stamp, codes },
    ))
}
