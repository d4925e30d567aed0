//! Benchmark and maintenance harness for the index library: synthetic data,
//! index construction (predicted pivots and the exact-sorting baseline), bulk
//! insertion, query benchmarking under fixed or auto-selected strategies, and
//! the selector training/evaluation pipeline.
//!
//! Structured results are JSON lines on stdout; human-readable summaries go
//! to stderr. Exit codes: 0 success, 2 usage error, 3 data error, 4 audit
//! failure.

mod dataset;

use clap::{Args, Parser, Subcommand};
use dataset::{Dist, FileFormat};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use unis::geometry::Point;
use unis::search::{self, SearchStrategy};
use unis::selector::{
    self, ForestConfig, ForestModel, GtConfig, LeafSnapshot, RadiusFormula, Workload,
};
use unis::snapshot::{load_tree_from_path, save_tree_to_path};
use unis::tree::{self, BmkdTree, TChoice, TreeConfig};
use unis::UnisError;

/// Write one stdout line; a reader closing the pipe early (`... | head`)
/// ends the run quietly instead of panicking mid-write.
fn write_stdout_line(args: std::fmt::Arguments) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if out.write_fmt(args).and_then(|()| out.write_all(b"\n")).is_err() {
        std::process::exit(0);
    }
}

macro_rules! outln {
    ($($t:tt)*) => { write_stdout_line(std::format_args!($($t)*)) };
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            let (code, label, msg) = match &e {
                CliError::Usage(m) => (2, "usage error", m),
                CliError::Data(m) => (3, "data error", m),
                CliError::Audit(m) => (4, "audit failure", m),
            };
            eprintln!("{label}: {msg}");
            std::process::exit(code);
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Audit(String),
}

impl From<UnisError> for CliError {
    fn from(e: UnisError) -> CliError {
        match e {
            UnisError::Usage(m) => CliError::Usage(m),
            UnisError::SnapshotStale => CliError::Data(
                "selector model is stale: the index changed after training; retrain with `unis train`"
                    .into(),
            ),
            UnisError::Data(m) => CliError::Data(m),
            UnisError::Io(e) => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "unis",
    version,
    about = "Multi-way KD index with learned split pivots: build, insert, query, and strategy-selector benchmarking"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset file
    GenData(GenDataArgs),
    /// Build an index with model-predicted pivots
    Build(BuildArgs),
    /// Build an index with exact sorted cuts (balance and timing oracle)
    BaselineBuild(BuildArgs),
    /// Bulk-insert a dataset into an existing index
    Insert(InsertArgs),
    /// Run kNN or radius queries against an index
    Query(QueryArgs),
    /// Time every strategy per query and write labeled training samples
    GenGt(GenGtArgs),
    /// Train the query-strategy ranker from labeled samples
    Train(TrainArgs),
    /// Evaluate a trained ranker on labeled samples
    Eval(EvalArgs),
    /// Structural and balance audit of an index snapshot
    Audit(AuditArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output file
    #[arg(long)]
    out: PathBuf,
    /// Number of points
    #[arg(long)]
    n: usize,
    /// Dimensions per point
    #[arg(long)]
    d: usize,
    /// Distribution: uniform, gaussian, clustered
    #[arg(long, default_value = "uniform")]
    dist: String,
    /// Cluster count for the clustered distribution
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    /// Output format: csv, bin
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CfgArgs {
    /// Leaf capacity
    #[arg(long)]
    c: Option<usize>,
    /// Fixed partition number (children per non-leaf node)
    #[arg(long, conflicts_with = "t_auto")]
    t: Option<usize>,
    /// Pick the partition number by minimizing the path-length objective
    #[arg(long)]
    t_auto: bool,
    /// Model training sampling rate in (0, 1]
    #[arg(long)]
    delta: Option<f64>,
    /// Sub-model count of the CDF model
    #[arg(long)]
    l: Option<usize>,
    /// Half-width of the pivot candidate window
    #[arg(long)]
    kappa: Option<f64>,
    /// Balance factor in (0.5, 1)
    #[arg(long)]
    omega: Option<f64>,
    /// Master RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// key=value config file; explicit flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Input dataset (CSV or binary)
    #[arg(long)]
    input: PathBuf,
    /// Output snapshot file
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: CfgArgs,
}

#[derive(Args)]
struct InsertArgs {
    /// Existing index snapshot
    #[arg(long)]
    snapshot: PathBuf,
    /// Dataset of points to insert
    #[arg(long)]
    input: PathBuf,
    /// Output snapshot file (may equal --snapshot)
    #[arg(long)]
    out: PathBuf,
    /// Insert in batches of this many points (default: one batch)
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct QueryArgs {
    /// Index snapshot
    #[arg(long)]
    snapshot: PathBuf,
    /// Query points file
    #[arg(long)]
    queries: PathBuf,
    /// rdfs, rbfs, bdfs, bbfs, all, or auto
    #[arg(long, default_value = "all")]
    strategy: String,
    /// kNN workload: neighbors per query
    #[arg(long)]
    k: Option<usize>,
    /// Radius workload: search radius
    #[arg(long)]
    radius: Option<f64>,
    /// Trained selector model (required for --strategy auto)
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct GenGtArgs {
    /// Index snapshot
    #[arg(long)]
    snapshot: PathBuf,
    /// Query pool; queries are sampled from it
    #[arg(long)]
    input: PathBuf,
    /// Output samples CSV
    #[arg(long)]
    out: PathBuf,
    /// Number of labeled samples
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// knn or radius
    #[arg(long, default_value = "knn")]
    workload: String,
    /// kNN workloads draw k uniformly from 1..=max-k
    #[arg(long, default_value_t = 1000)]
    max_k: usize,
    /// Scale radii by the squared extent instead of the diagonal
    #[arg(long)]
    literal_radius_formula: bool,
    /// Untimed runs per strategy before measuring
    #[arg(long, default_value_t = 5)]
    warmups: usize,
    /// Timed repetitions per strategy (median taken)
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Abandon a strategy beyond this multiple of the best median
    #[arg(long, default_value_t = 1.5)]
    abort_factor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled samples CSV from gen-gt
    #[arg(long)]
    input: PathBuf,
    /// Index snapshot the samples were generated against
    #[arg(long)]
    snapshot: PathBuf,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    /// Trees in the forest
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value_t = 12)]
    max_depth: usize,
    /// Minimum samples per tree leaf
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    /// Forest training seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the train/holdout shuffle
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Fraction of samples held out for evaluation
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Labeled samples CSV to evaluate on
    #[arg(long)]
    input: PathBuf,
    /// Seed of the random-ranking control
    #[arg(long, default_value_t = 0)]
    control_seed: u64,
}

#[derive(Args)]
struct AuditArgs {
    /// Index snapshot
    #[arg(long)]
    snapshot: PathBuf,
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Build(a) => cmd_build(a, false),
        Cmd::BaselineBuild(a) => cmd_build(a, true),
        Cmd::Insert(a) => cmd_insert(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::GenGt(a) => cmd_gen_gt(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Audit(a) => cmd_audit(a),
    }
}

/// Flags > config file > defaults.
fn resolve_config(args: &CfgArgs) -> CliResult<TreeConfig> {
    let mut cfg = TreeConfig::default();
    if let Some(path) = &args.config {
        apply_config_file(&mut cfg, path)?;
    }
    if let Some(c) = args.c {
        cfg.c = c;
    }
    if args.t_auto {
        cfg.t = TChoice::Auto;
    }
    if let Some(t) = args.t {
        cfg.t = TChoice::Fixed(t);
    }
    if let Some(delta) = args.delta {
        cfg.delta = delta;
    }
    if let Some(l) = args.l {
        cfg.l = l;
    }
    if let Some(kappa) = args.kappa {
        cfg.kappa = kappa;
    }
    if let Some(omega) = args.omega {
        cfg.omega = omega;
    }
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_config_file(cfg: &mut TreeConfig, path: &Path) -> CliResult {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad =
            |what: &str| CliError::Usage(format!("{} line {}: {what}", path.display(), lineno + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "c" => cfg.c = value.parse().map_err(|_| bad("c must be a positive integer"))?,
            "t" => {
                cfg.t = if value.eq_ignore_ascii_case("auto") {
                    TChoice::Auto
                } else {
                    TChoice::Fixed(value.parse().map_err(|_| bad("t must be an integer or auto"))?)
                }
            }
            "delta" => cfg.delta = value.parse().map_err(|_| bad("delta must be a number"))?,
            "l" => cfg.l = value.parse().map_err(|_| bad("l must be a positive integer"))?,
            "kappa" => cfg.kappa = value.parse().map_err(|_| bad("kappa must be a number"))?,
            "omega" => cfg.omega = value.parse().map_err(|_| bad("omega must be a number"))?,
            "seed" => cfg.rng_seed = value.parse().map_err(|_| bad("seed must be an integer"))?,
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }
    Ok(())
}

fn cfg_json(cfg: &TreeConfig) -> Value {
    json!({
        "c": cfg.c,
        "t": match cfg.t { TChoice::Fixed(t) => json!(t), TChoice::Auto => json!("auto") },
        "delta": cfg.delta,
        "l": cfg.l,
        "kappa": cfg.kappa,
        "omega": cfg.omega,
        "seed": cfg.rng_seed,
    })
}

/// Shared fields of every emitted record; one JSON object per line.
struct RecordCtx {
    command: &'static str,
    dataset: String,
    n: usize,
    d: usize,
    cfg: Value,
    seed: u64,
}

impl RecordCtx {
    fn emit(&self, metric: &str, value: Value, unit: &str, wall_s: f64, extra: &[(&str, Value)]) {
        let mut obj = json!({
            "command": self.command,
            "dataset": self.dataset,
            "n": self.n,
            "d": self.d,
            "cfg": self.cfg,
            "metric": metric,
            "value": value,
            "unit": unit,
            "wall_s": wall_s,
            "seed": self.seed,
        });
        for (k, v) in extra {
            obj[*k] = v.clone();
        }
        outln!("{obj}");
    }

    /// Timing record: carries its repetition count and aggregation.
    fn emit_timing(&self, metric: &str, seconds: f64, reps: usize, extra: &[(&str, Value)]) {
        let mut all = vec![("reps", json!(reps)), ("aggregation", json!("median"))];
        all.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
        self.emit(metric, json!(seconds), "seconds", seconds, &all);
    }
}

fn file_stem(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into())
}

fn cmd_gen_data(a: GenDataArgs) -> CliResult {
    if a.n == 0 || a.d == 0 {
        return Err(CliError::Usage("gen-data needs --n and --d at least 1".into()));
    }
    let dist = Dist::parse(&a.dist)
        .ok_or_else(|| CliError::Usage(format!("unknown distribution {:?}", a.dist)))?;
    let format = FileFormat::parse(&a.format)
        .ok_or_else(|| CliError::Usage(format!("unknown format {:?}", a.format)))?;
    let t0 = Instant::now();
    let points = dataset::generate(dist, a.n, a.d, a.clusters, a.seed);
    dataset::write_points(&a.out, &points, format)?;
    let ctx = RecordCtx {
        command: "gen-data",
        dataset: file_stem(&a.out),
        n: a.n,
        d: a.d,
        cfg: json!({ "dist": a.dist, "clusters": a.clusters }),
        seed: a.seed,
    };
    ctx.emit("points_written", json!(a.n), "points", t0.elapsed().as_secs_f64(), &[]);
    eprintln!("wrote {} ({} x {}, {})", a.out.display(), a.n, a.d, a.dist);
    Ok(())
}

fn depth_histogram(tree: &BmkdTree) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for (depth, _) in tree.leaf_stats() {
        *hist.entry(depth).or_insert(0) += 1;
    }
    hist
}

fn cmd_build(a: BuildArgs, baseline: bool) -> CliResult {
    let cfg = resolve_config(&a.cfg)?;
    let points = dataset::read_points(&a.input, 0, false)?;
    let (n, d) = (points.len(), points[0].dims());
    let t0 = Instant::now();
    let tree = if baseline {
        tree::build_baseline(points, cfg.clone())?
    } else {
        tree::build(points, cfg.clone())?
    };
    let build_s = t0.elapsed().as_secs_f64();
    save_tree_to_path(&tree, &a.out)?;
    let ctx = RecordCtx {
        command: if baseline { "baseline-build" } else { "build" },
        dataset: file_stem(&a.input),
        n,
        d,
        cfg: cfg_json(&cfg),
        seed: cfg.rng_seed,
    };
    ctx.emit_timing("build_time", build_s, 1, &[]);
    ctx.emit("resolved_t", json!(tree.resolved_t), "children", build_s, &[]);
    ctx.emit("aepl", json!(unis::partition::aepl_empirical(&tree)), "comparisons", build_s, &[]);
    let hist = depth_histogram(&tree);
    for (depth, count) in &hist {
        ctx.emit("leaves_at_depth", json!(count), "leaves", build_s, &[("depth", json!(depth))]);
    }
    eprintln!(
        "{} {} points (d={d}, t={}) in {build_s:.3}s -> {}; leaf depths {:?}",
        if baseline { "baseline-built" } else { "built" },
        n,
        tree.resolved_t,
        a.out.display(),
        hist
    );
    Ok(())
}

fn cmd_insert(a: InsertArgs) -> CliResult {
    let mut tree = load_tree_from_path(&a.snapshot)?;
    let points = dataset::read_points(&a.input, tree.len() as u64, true)?;
    if points.iter().any(|p| p.dims() != tree.dims) {
        return Err(CliError::Data(format!(
            "{}: points have a different dimension than the index ({})",
            a.input.display(),
            tree.dims
        )));
    }
    let batch_size = match a.batch_size {
        Some(0) => return Err(CliError::Usage("--batch-size must be at least 1".into())),
        Some(b) => b,
        None => points.len().max(1),
    };
    let ctx = RecordCtx {
        command: "insert",
        dataset: file_stem(&a.input),
        n: points.len(),
        d: tree.dims,
        cfg: cfg_json(&tree.config),
        seed: tree.config.rng_seed,
    };
    let mut inserted = 0usize;
    let mut batch_index = 0usize;
    let mut batches = vec![Vec::new()];
    for p in points {
        if batches.last().map(Vec::len) == Some(batch_size) {
            batches.push(Vec::new());
        }
        batches.last_mut().expect("never empty").push(p);
    }
    for batch in batches {
        let batch_points = batch.len();
        let log_before = tree.rebuild_log.len();
        let t0 = Instant::now();
        tree.insert(batch)?;
        let dt = t0.elapsed().as_secs_f64();
        inserted += batch_points;
        let new = &tree.rebuild_log[log_before..];
        let selective: usize = new.iter().map(|r| r.selective_points).sum();
        let scapegoat: usize = new.iter().map(|r| r.scapegoat_points).sum();
        let extra = [("batch", json!(batch_index)), ("batch_points", json!(batch_points))];
        ctx.emit_timing("insert_batch_time", dt, 1, &extra);
        ctx.emit("rebuild_triggers", json!(new.len()), "rebuilds", dt, &extra);
        ctx.emit("selective_rebuild_points", json!(selective), "points", dt, &extra);
        ctx.emit("scapegoat_rebuild_points", json!(scapegoat), "points", dt, &extra);
        batch_index += 1;
    }
    save_tree_to_path(&tree, &a.out)?;
    eprintln!(
        "inserted {inserted} points in {batch_index} batch(es); index now holds {} -> {}",
        tree.len(),
        a.out.display()
    );
    Ok(())
}

enum Job {
    Knn(usize),
    Radius(f64),
}

/// A query's result in comparable form (hit ids sorted for set equality).
fn run_job(tree: &BmkdTree, q: &Point, job: &Job, s: SearchStrategy) -> (Vec<u64>, usize, usize) {
    match job {
        Job::Knn(k) => {
            let (res, stats) = search::knn_with_stats(tree, q, *k, s);
            let mut ids: Vec<u64> = res.hits.iter().map(|&(id, _)| id).collect();
            ids.sort_unstable();
            (ids, res.hits.len(), stats.access_count)
        }
        Job::Radius(r) => {
            let (ids, stats) = search::radius_with_stats(tree, q, *r, s);
            (ids, 0, stats.access_count)
        }
    }
}

fn cmd_query(a: QueryArgs) -> CliResult {
    let tree = load_tree_from_path(&a.snapshot)?;
    let queries = dataset::read_points(&a.queries, 0, false)?;
    if queries.iter().any(|p| p.dims() != tree.dims) {
        return Err(CliError::Data(format!(
            "{}: query dimension differs from the index ({})",
            a.queries.display(),
            tree.dims
        )));
    }
    let (job, param, workload) = match (a.k, a.radius) {
        (Some(k), None) => {
            if k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            (Job::Knn(k), k as f64, "knn")
        }
        (None, Some(r)) => {
            if r.is_nan() || r < 0.0 {
                return Err(CliError::Usage("--radius must be non-negative".into()));
            }
            (Job::Radius(r), r, "radius")
        }
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --k (kNN) or --radius (range search)".into(),
            ))
        }
    };
    let ctx = RecordCtx {
        command: "query",
        dataset: file_stem(&a.queries),
        n: tree.len(),
        d: tree.dims,
        cfg: cfg_json(&tree.config),
        seed: tree.config.rng_seed,
    };
    let base_extra = |q: usize| [("query", json!(q)), ("workload", json!(workload))];

    match a.strategy.to_ascii_lowercase().as_str() {
        "all" => {
            let mut means = [0.0f64; 4];
            for (qi, q) in queries.iter().enumerate() {
                let mut reference: Option<Vec<u64>> = None;
                for s in SearchStrategy::ALL {
                    let t0 = Instant::now();
                    let (ids, hits, accessed) = run_job(&tree, q, &job, s);
                    let dt = t0.elapsed().as_secs_f64();
                    means[s.index()] += dt;
                    let mut extra = base_extra(qi).to_vec();
                    extra.push(("strategy", json!(s.name())));
                    extra.push(("access_count", json!(accessed)));
                    extra.push(("results", json!(if hits > 0 { hits } else { ids.len() })));
                    ctx.emit_timing("query_time", dt, 1, &extra);
                    match &reference {
                        None => reference = Some(ids),
                        Some(r0) => {
                            if *r0 != ids {
                                return Err(CliError::Audit(format!(
                                    "strategy {} disagrees with {} on query {qi}",
                                    s.name(),
                                    SearchStrategy::ALL[0].name()
                                )));
                            }
                        }
                    }
                }
            }
            eprintln!("cross-strategy audit passed on {} queries", queries.len());
            for s in SearchStrategy::ALL {
                let mean = means[s.index()] / queries.len() as f64;
                ctx.emit(
                    "mean_query_time",
                    json!(mean),
                    "seconds",
                    mean,
                    &[("strategy", json!(s.name())), ("workload", json!(workload))],
                );
                eprintln!("  {:<6} mean {:.3e}s", s.name(), mean);
            }
        }
        "auto" => {
            let model_path = a.model.ok_or_else(|| {
                CliError::Usage("--strategy auto needs --model; train one with `unis train`".into())
            })?;
            let (model, leaves) = load_model_file(&model_path)?;
            let mut run_total = 0.0;
            let mut predict_total = 0.0;
            let mut shares = [0usize; 4];
            for (qi, q) in queries.iter().enumerate() {
                let t0 = Instant::now();
                let features = selector::extract_features(&tree, &leaves, q, param)?;
                let ranked = selector::predict_ranked(&model, &features.flat())?;
                let predict_s = t0.elapsed().as_secs_f64();
                let s = ranked[0];
                shares[s.index()] += 1;
                let t1 = Instant::now();
                let (_, _, accessed) = run_job(&tree, q, &job, s);
                let dt = t1.elapsed().as_secs_f64();
                run_total += dt;
                predict_total += predict_s;
                let mut extra = base_extra(qi).to_vec();
                extra.push(("strategy", json!(s.name())));
                extra.push(("access_count", json!(accessed)));
                extra.push(("predict_seconds", json!(predict_s)));
                ctx.emit_timing("query_time", dt, 1, &extra);
            }
            let nq = queries.len() as f64;
            ctx.emit(
                "mean_query_time",
                json!(run_total / nq),
                "seconds",
                run_total / nq,
                &[("strategy", json!("auto")), ("workload", json!(workload))],
            );
            ctx.emit(
                "mean_predict_time",
                json!(predict_total / nq),
                "seconds",
                predict_total / nq,
                &[("workload", json!(workload))],
            );
            eprintln!(
                "auto: mean query {:.3e}s + predict {:.3e}s over {} queries",
                run_total / nq,
                predict_total / nq,
                queries.len()
            );
            for s in SearchStrategy::ALL {
                eprintln!("  picked {:<6} {}x", s.name(), shares[s.index()]);
            }
        }
        other => {
            let s = SearchStrategy::parse(other).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown strategy {other:?}; use rdfs, rbfs, bdfs, bbfs, all, or auto"
                ))
            })?;
            let mut total = 0.0;
            for (qi, q) in queries.iter().enumerate() {
                let t0 = Instant::now();
                let (ids, hits, accessed) = run_job(&tree, q, &job, s);
                let dt = t0.elapsed().as_secs_f64();
                total += dt;
                let mut extra = base_extra(qi).to_vec();
                extra.push(("strategy", json!(s.name())));
                extra.push(("access_count", json!(accessed)));
                extra.push(("results", json!(if hits > 0 { hits } else { ids.len() })));
                ctx.emit_timing("query_time", dt, 1, &extra);
            }
            let mean = total / queries.len() as f64;
            ctx.emit(
                "mean_query_time",
                json!(mean),
                "seconds",
                mean,
                &[("strategy", json!(s.name())), ("workload", json!(workload))],
            );
            eprintln!("{} mean {:.3e}s over {} queries", s.name(), mean, queries.len());
        }
    }
    Ok(())
}

fn cmd_gen_gt(a: GenGtArgs) -> CliResult {
    let tree = load_tree_from_path(&a.snapshot)?;
    let pool = dataset::read_points(&a.input, 0, false)?;
    if pool.iter().any(|p| p.dims() != tree.dims) {
        return Err(CliError::Data(format!(
            "{}: query-pool dimension differs from the index ({})",
            a.input.display(),
            tree.dims
        )));
    }
    let workload = Workload::parse(&a.workload)
        .ok_or_else(|| CliError::Usage(format!("unknown workload {:?}", a.workload)))?;
    let gt = GtConfig {
        workload,
        radius_formula: if a.literal_radius_formula {
            RadiusFormula::Literal
        } else {
            RadiusFormula::Normalized
        },
        max_k: a.max_k,
        warmups: a.warmups,
        reps: a.reps,
        abort_factor: a.abort_factor,
    };
    let t0 = Instant::now();
    let samples = selector::generate_ground_truth(&tree, &pool, a.samples, a.seed, &gt)?;
    let dt = t0.elapsed().as_secs_f64();
    let file = File::create(&a.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out.display())))?;
    let mut w = BufWriter::new(file);
    selector::samples_to_csv(&samples, &mut w)?;
    w.flush()?;
    let ctx = RecordCtx {
        command: "gen-gt",
        dataset: file_stem(&a.input),
        n: tree.len(),
        d: tree.dims,
        cfg: cfg_json(&tree.config),
        seed: a.seed,
    };
    ctx.emit("samples_written", json!(samples.len()), "samples", dt, &[]);
    let mut shares = [0usize; 4];
    for s in &samples {
        shares[s.label] += 1;
    }
    eprintln!(
        "labeled {} samples ({}) in {dt:.2}s -> {}",
        samples.len(),
        workload.name(),
        a.out.display()
    );
    for s in SearchStrategy::ALL {
        ctx.emit(
            "label_share",
            json!(shares[s.index()] as f64 / samples.len() as f64),
            "fraction",
            dt,
            &[("strategy", json!(s.name()))],
        );
        eprintln!("  fastest {:<6} {}x", s.name(), shares[s.index()]);
    }
    Ok(())
}

fn load_model_file(path: &Path) -> CliResult<(ForestModel, LeafSnapshot)> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    Ok(selector::load_model(&mut r)?)
}

fn read_samples_file(path: &Path) -> CliResult<Vec<selector::LabeledSample>> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(selector::samples_from_csv(BufReader::new(file))?)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(CliError::Usage("--holdout must be in [0, 1)".into()));
    }
    let samples = read_samples_file(&a.input)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("{}: no samples to train on", a.input.display())));
    }
    let tree = load_tree_from_path(&a.snapshot)?;
    let leaves = selector::snapshot_leaves(&tree);
    // Deterministic shuffle, then split off the holdout tail.
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(a.split_seed));
    let n_hold = (samples.len() as f64 * a.holdout).round() as usize;
    let (train_idx, hold_idx) = order.split_at(samples.len() - n_hold);
    let train_set: Vec<selector::LabeledSample> =
        train_idx.iter().map(|&i| samples[i].clone()).collect();
    let hold_set: Vec<selector::LabeledSample> =
        hold_idx.iter().map(|&i| samples[i].clone()).collect();
    let fc = ForestConfig {
        n_trees: a.trees,
        max_depth: a.max_depth,
        min_leaf: a.min_leaf,
        seed: a.seed,
    };
    let t0 = Instant::now();
    let model = selector::train_forest(&train_set, &fc)?;
    let train_s = t0.elapsed().as_secs_f64();
    let file = File::create(&a.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out.display())))?;
    let mut w = BufWriter::new(file);
    selector::save_model(&model, &leaves, &mut w)?;
    w.flush()?;
    let ctx = RecordCtx {
        command: "train",
        dataset: file_stem(&a.input),
        n: train_set.len(),
        d: samples[0].features.len(),
        cfg: json!({
            "trees": a.trees, "max_depth": a.max_depth, "min_leaf": a.min_leaf,
            "holdout": a.holdout, "split_seed": a.split_seed,
        }),
        seed: a.seed,
    };
    ctx.emit_timing("train_time", train_s, 1, &[]);
    ctx.emit("train_samples", json!(train_set.len()), "samples", train_s, &[]);
    ctx.emit("holdout_samples", json!(hold_set.len()), "samples", train_s, &[]);
    if let Some(warning) = &model.warning {
        ctx.emit("training_warning", json!(warning), "text", train_s, &[]);
        eprintln!("warning: {warning}");
    }
    if !hold_set.is_empty() {
        let mrr = selector::mrr(&model, &hold_set)?;
        let top1 = selector::top1_accuracy(&model, &hold_set)?;
        let control = selector::mrr_random_control(&hold_set, a.split_seed);
        ctx.emit("mrr_holdout", json!(mrr), "score", train_s, &[]);
        ctx.emit("top1_holdout", json!(top1), "fraction", train_s, &[]);
        ctx.emit("mrr_random_control", json!(control), "score", train_s, &[]);
        eprintln!(
            "trained on {} samples in {train_s:.2}s; holdout {}: MRR {mrr:.3}, top-1 {top1:.3} (random control {control:.3}) -> {}",
            train_set.len(),
            hold_set.len(),
            a.out.display()
        );
    } else {
        eprintln!("trained on {} samples in {train_s:.2}s -> {}", train_set.len(), a.out.display());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let (model, _) = load_model_file(&a.model)?;
    let samples = read_samples_file(&a.input)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("{}: empty test set", a.input.display())));
    }
    let mrr = selector::mrr(&model, &samples)?;
    let top1 = selector::top1_accuracy(&model, &samples)?;
    let control = selector::mrr_random_control(&samples, a.control_seed);
    let mut picked = [0usize; 4];
    for s in &samples {
        let ranked = selector::predict_ranked(&model, &s.features)?;
        picked[ranked[0].index()] += 1;
    }
    let ctx = RecordCtx {
        command: "eval",
        dataset: file_stem(&a.input),
        n: samples.len(),
        d: samples[0].features.len(),
        cfg: json!({
            "trees": model.config.n_trees, "max_depth": model.config.max_depth,
            "min_leaf": model.config.min_leaf,
        }),
        seed: a.control_seed,
    };
    ctx.emit("mrr", json!(mrr), "score", 0.0, &[]);
    ctx.emit("top1_accuracy", json!(top1), "fraction", 0.0, &[]);
    ctx.emit("mrr_random_control", json!(control), "score", 0.0, &[]);
    eprintln!(
        "eval on {} samples: MRR {mrr:.3}, top-1 {top1:.3}, random control {control:.3}",
        samples.len()
    );
    for s in SearchStrategy::ALL {
        ctx.emit(
            "selection_share",
            json!(picked[s.index()] as f64 / samples.len() as f64),
            "fraction",
            0.0,
            &[("strategy", json!(s.name()))],
        );
        eprintln!("  picks {:<6} {}x", s.name(), picked[s.index()]);
    }
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> CliResult {
    let tree = load_tree_from_path(&a.snapshot)?;
    if let Err(e) = tree.audit_structure() {
        return Err(CliError::Audit(format!("{}: {e}", a.snapshot.display())));
    }
    let strict = tree.balance_violations();
    let actionable = tree.actionable_balance_violations();
    let ctx = RecordCtx {
        command: "audit",
        dataset: file_stem(&a.snapshot),
        n: tree.len(),
        d: tree.dims,
        cfg: cfg_json(&tree.config),
        seed: tree.config.rng_seed,
    };
    ctx.emit("structure_ok", json!(true), "bool", 0.0, &[]);
    ctx.emit("balance_violations", json!(strict), "nodes", 0.0, &[]);
    ctx.emit("actionable_balance_violations", json!(actionable), "nodes", 0.0, &[]);
    let hist = depth_histogram(&tree);
    for (depth, count) in &hist {
        ctx.emit("leaves_at_depth", json!(count), "leaves", 0.0, &[("depth", json!(depth))]);
    }
    eprintln!(
        "audit ok: {} points, strict balance violations {strict} (actionable {actionable}), leaf depths {:?}",
        tree.len(),
        hist
    );
    if actionable > 0 {
        return Err(CliError::Audit(format!(
            "{actionable} balance violation(s) a rebuild could remove"
        )));
    }
    Ok(())
}
