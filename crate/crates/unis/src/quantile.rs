//! Two-stage regression model of a one-dimensional CDF.
//!
//! The first stage is a linear root model mapping a value `x` to one of `l`
//! cluster ids, `u = l*alpha*x + l*beta`, fit by closed-form least squares on
//! a small training sample. The second stage holds `l` piecewise-linear
//! sub-models, each anchored at the min/max of its cluster, which interpolate
//! the CDF locally. The model supports exact incremental update from lists of
//! inserted and removed values without retraining on the full data.

use crate::{sub_seed, Result, UnisError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default sampling rate for model training.
pub const DEFAULT_DELTA: f64 = 0.01;
/// Default number of second-stage sub-models.
pub const DEFAULT_L: usize = 100;
/// Default half-width of the pivot candidate window.
pub const DEFAULT_KAPPA: f64 = 0.15;

/// Sums over the training sample backing the root model fit.
///
/// Recomputing every field from the retained sample in sorted order
/// reproduces each value exactly; all updates re-sum in that canonical order
/// so incremental and from-scratch statistics are bit-equal.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n_pts: usize,
    pub s_x: f64,
    pub s_x2: f64,
    pub s_u: f64,
    pub s_xu: f64,
}

impl SufficientStats {
    /// Sums over `pairs` in their stored order. Callers keep pairs sorted by
    /// `(x, u)` so the summation order is canonical.
    fn from_pairs(pairs: &[(f64, f64)]) -> SufficientStats {
        let mut s =
            SufficientStats { n_pts: pairs.len(), s_x: 0.0, s_x2: 0.0, s_u: 0.0, s_xu: 0.0 };
        for &(x, u) in pairs {
            s.s_x += x;
            s.s_x2 += x * x;
            s.s_u += u;
            s.s_xu += x * u;
        }
        s
    }
}

/// First-stage linear model routing a value to a cluster id.
#[derive(Debug, Clone, PartialEq)]
pub struct RootModel {
    pub alpha: f64,
    pub beta: f64,
    pub l: usize,
    pub stats: SufficientStats,
}

impl RootModel {
    /// Cluster id for `x`: `clamp(floor(l*alpha*x + l*beta), 0, l-1)`.
    pub fn route(&self, x: f64) -> usize {
        let l = self.l as f64;
        let u = (l * self.alpha * x + l * self.beta).floor();
        if u.is_nan() || u < 0.0 {
            0
        } else if u >= l {
            self.l - 1
        } else {
            u as usize
        }
    }
}

/// Second-stage sub-model: linear interpolation between two CDF anchors,
/// clamped to `[cdf_min, cdf_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    pub x_min: f64,
    pub x_max: f64,
    pub cdf_min: f64,
    pub cdf_max: f64,
}

impl SubModel {
    fn predict(&self, x: f64) -> f64 {
        if self.x_max <= self.x_min {
            return if x >= self.x_min { self.cdf_max } else { self.cdf_min };
        }
        let frac = ((x - self.x_min) / (self.x_max - self.x_min)).clamp(0.0, 1.0);
        self.cdf_min + frac * (self.cdf_max - self.cdf_min)
    }
}

/// The trained two-stage CDF model.
///
/// `sample` retains the training pairs `(x, u)` sorted by `(x, u)`; it backs
/// sub-model refits and exact statistic recomputation on update. Memory per
/// model is proportional to the sample, not the indexed data.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageCdfModel {
    pub root: RootModel,
    pub subs: Vec<SubModel>,
    pub sample: Vec<(f64, f64)>,
}

fn sort_pairs(pairs: &mut [(f64, f64)]) {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
}

/// Least-squares slope/intercept of `u` on `x`, scaled down by `l`.
///
/// Returns `(alpha, beta)` with `u ~= l*alpha*x + l*beta`. A singular system
/// (all `x` equal) or a negative slope degenerates to a constant route at the
/// mean cluster; routing must stay monotone in `x` for the sub-model layer to
/// partition the sample into contiguous runs.
fn fit_root(stats: &SufficientStats, l: usize) -> (f64, f64) {
    let n = stats.n_pts as f64;
    let det = n * stats.s_x2 - stats.s_x * stats.s_x;
    let lf = l as f64;
    if det <= 0.0 || !det.is_finite() {
        return (0.0, (stats.s_u / n) / lf);
    }
    let a = (n * stats.s_xu - stats.s_x * stats.s_u) / det;
    if !(a.is_finite() && a >= 0.0) {
        return (0.0, (stats.s_u / n) / lf);
    }
    let b = (stats.s_u - a * stats.s_x) / n;
    (a / lf, b / lf)
}

/// Anchors one sub-model per cluster from sorted `(x, cdf)` tuples.
///
/// Routing is monotone in `x`, so each cluster is a contiguous run. Empty
/// clusters between runs interpolate across the gap; empty clusters before
/// the first or after the last run degenerate to steps at the sample bounds.
fn fit_subs(root: &RootModel, tuples: &[(f64, f64)]) -> Vec<SubModel> {
    debug_assert!(!tuples.is_empty());
    let l = root.l;
    let mut runs: Vec<Option<SubModel>> = vec![None; l];
    for &(x, cdf) in tuples {
        let c = root.route(x);
        match &mut runs[c] {
            Some(run) => {
                run.x_max = x;
                run.cdf_max = cdf;
            }
            None => runs[c] = Some(SubModel { x_min: x, x_max: x, cdf_min: cdf, cdf_max: cdf }),
        }
    }
    let x_lo = tuples[0].0;
    let x_hi = tuples[tuples.len() - 1].0;
    let mut subs = Vec::with_capacity(l);
    let mut prev: Option<(f64, f64)> = None;
    for c in 0..l {
        match &runs[c] {
            Some(run) => {
                subs.push(run.clone());
                prev = Some((run.x_max, run.cdf_max));
            }
            None => {
                let (px, pc) = prev.unwrap_or((x_lo, 0.0));
                let next = runs[c + 1..].iter().flatten().next();
                let (nx, nc) = next.map_or((x_hi, 1.0), |r| (r.x_min, r.cdf_min));
                subs.push(SubModel { x_min: px, x_max: nx, cdf_min: pc, cdf_max: nc });
            }
        }
    }
    subs
}

fn model_from_pairs(mut pairs: Vec<(f64, f64)>, l: usize) -> TwoStageCdfModel {
    sort_pairs(&mut pairs);
    let stats = SufficientStats::from_pairs(&pairs);
    let (alpha, beta) = fit_root(&stats, l);
    let root = RootModel { alpha, beta, l, stats };
    let m = pairs.len() as f64;
    let tuples: Vec<(f64, f64)> =
        pairs.iter().enumerate().map(|(i, &(x, _))| (x, (i + 1) as f64 / m)).collect();
    let subs = fit_subs(&root, &tuples);
    TwoStageCdfModel { root, subs, sample: pairs }
}

/// Trains the two-stage model on a uniform sample of `values`.
///
/// Draws `max(2, ceil(delta * n))` values without replacement using
/// `rng_seed`, sorts them, assigns each sorted sample value the CDF of its
/// one-based rank, fits the root model on targets `u = floor(l * cdf)`
/// clamped to `[0, l-1]`, then anchors the sub-models per routed cluster.
pub fn cdf_train(values: &[f64], delta: f64, l: usize, rng_seed: u64) -> Result<TwoStageCdfModel> {
    if values.len() < 2 {
        return Err(UnisError::Usage(format!(
            "cdf_train needs at least 2 values, got {}",
            values.len()
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(UnisError::Usage(format!("sampling rate must be in (0, 1], got {delta}")));
    }
    if l == 0 {
        return Err(UnisError::Usage("sub-model count must be positive".into()));
    }
    let n = values.len();
    let m = ((delta * n as f64).ceil() as usize).clamp(2, n);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(rng_seed, 0));
    let mut xs: Vec<f64> =
        rand::seq::index::sample(&mut rng, n, m).into_iter().map(|i| values[i]).collect();
    xs.sort_by(f64::total_cmp);
    let lf = l as f64;
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = (i + 1) as f64 / m as f64;
            (x, (lf * cdf).floor().min(lf - 1.0))
        })
        .collect();
    Ok(model_from_pairs(pairs, l))
}

/// Predicted CDF value for `x`, in `[0, 1]` and monotone in `x`.
pub fn predict_quantile_value(m: &TwoStageCdfModel, x: f64) -> f64 {
    if m.sample.is_empty() {
        return 0.0;
    }
    if x < m.sample[0].0 {
        return 0.0;
    }
    let cluster = m.root.route(x);
    m.subs[cluster].predict(x).clamp(0.0, 1.0)
}

/// Applies an insert/remove delta to the model.
///
/// Inserted values get cluster targets from the current root routing; removed
/// values must match retained sample entries bit-exactly (one pair is removed
/// per occurrence). Statistics are re-summed over the updated sample in
/// canonical order, so they equal a from-scratch recomputation exactly; the
/// root is refit from the updated sums and the sub-models are re-anchored
/// from the updated sample ranks.
pub fn update_incremental(
    m: &TwoStageCdfModel,
    inserted: &[f64],
    removed: &[f64],
) -> Result<TwoStageCdfModel> {
    let mut pairs = m.sample.clone();
    for &x in inserted {
        pairs.push((x, m.root.route(x) as f64));
    }
    for &x in removed {
        let idx = pairs.iter().position(|&(px, _)| px == x).ok_or_else(|| {
            UnisError::Usage(format!("removed value {x} is not in the retained sample"))
        })?;
        pairs.swap_remove(idx);
    }
    if pairs.len() < 2 {
        return Err(UnisError::Usage("update would leave fewer than 2 sample values".into()));
    }
    Ok(model_from_pairs(pairs, m.root.l))
}

/// Pivot values for `targets` (ascending quantiles in `(0, 1)`).
///
/// One scan over `values` collects, per target `q`, the candidates whose
/// predicted CDF falls in `[q - kappa, q + kappa]`. Within each window the
/// candidate at the window-relative rank of `q` is selected (the median of a
/// window centered on `q`). An empty window widens `kappa` by doubling up to
/// `1/t`; if still empty the exact empirical quantile is taken.
pub fn select_pivots(
    m: &TwoStageCdfModel,
    values: &[f64],
    targets: &[f64],
    kappa: f64,
) -> Vec<f64> {
    select_pivots_fn(&|x| predict_quantile_value(m, x), values, targets, kappa)
}

/// The window engine behind `select_pivots`, generic over the prediction
/// function so callers can rescale a model to a sub-range of its domain.
pub(crate) fn select_pivots_fn(
    predict: &dyn Fn(f64) -> f64,
    values: &[f64],
    targets: &[f64],
    kappa: f64,
) -> Vec<f64> {
    let t_bound = 1.0 / (targets.len() + 1) as f64;
    let mut predicted: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        predicted.push(predict(v));
    }
    let mut pivots = Vec::with_capacity(targets.len());
    for &q in targets {
        let mut k = kappa;
        let mut candidates = collect_window(values, &predicted, q, k);
        while candidates.is_empty() && k < t_bound {
            k = (k * 2.0).max(t_bound / 1024.0).min(1.0);
            candidates = collect_window(values, &predicted, q, k);
        }
        let pivot = if candidates.is_empty() {
            exact_quantile(values, q)
        } else {
            let lo = (q - k).max(0.0);
            let hi = (q + k).min(1.0);
            let rel = if hi > lo { (q - lo) / (hi - lo) } else { 0.5 };
            let idx = (rel * (candidates.len() - 1) as f64 + 0.5).floor() as usize;
            let idx = idx.min(candidates.len() - 1);
            *candidates.select_nth_unstable_by(idx, |a, b| a.total_cmp(b)).1
        };
        pivots.push(pivot);
    }
    pivots
}

fn collect_window(values: &[f64], predicted: &[f64], q: f64, kappa: f64) -> Vec<f64> {
    let lo = (q - kappa).max(0.0);
    let hi = (q + kappa).min(1.0);
    values.iter().zip(predicted).filter(|&(_, &p)| lo <= p && p <= hi).map(|(&v, _)| v).collect()
}

fn exact_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    let idx = ((q * (v.len() - 1) as f64) + 0.5).floor() as usize;
    let idx = idx.min(v.len() - 1);
    *v.select_nth_unstable_by(idx, |a, b| a.total_cmp(b)).1
}

/// Quantile prediction error: distance between `q` and the empirical rank of
/// the pivot the model selects for `q` (midpoint rank convention).
pub fn prediction_error_r(m: &TwoStageCdfModel, values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let pivot = select_pivots(m, values, &[q], DEFAULT_KAPPA)[0];
    let less = values.iter().filter(|&&v| v < pivot).count() as f64;
    let equal = values.iter().filter(|&&v| v == pivot).count() as f64;
    let rank = (less + 0.5 * equal) / values.len() as f64;
    (q - rank).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ecdf(values: &[f64], x: f64) -> f64 {
        values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64
    }

    #[test]
    fn rejects_tiny_input() {
        assert!(cdf_train(&[1.0], 0.5, 10, 0).is_err());
        assert!(cdf_train(&[], 0.5, 10, 0).is_err());
    }

    #[test]
    fn uniform_midpoint_prediction() {
        let values: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let m = cdf_train(&values, 0.5, 10, 42).unwrap();
        let p = predict_quantile_value(&m, 500.0);
        assert!((0.45..=0.55).contains(&p), "predict(500) = {p}");
    }

    #[test]
    fn constant_values_form_a_step() {
        let values = vec![7.5; 64];
        let m = cdf_train(&values, 1.0, 100, 1).unwrap();
        assert_eq!(predict_quantile_value(&m, 7.5), 1.0);
        assert_eq!(predict_quantile_value(&m, 7.5 - 1e-9), 0.0);
        assert_eq!(predict_quantile_value(&m, 8.0), 1.0);
    }

    #[test]
    fn root_fit_two_anchor_pairs() {
        let l = 100usize;
        let pairs = vec![(0.0, 0.0), (1.0, (l - 1) as f64)];
        let stats = SufficientStats::from_pairs(&pairs);
        let (alpha, beta) = fit_root(&stats, l);
        assert_eq!(alpha, 99.0 / 100.0);
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn predict_tracks_empirical_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let m = cdf_train(&values, 0.1, 100, 9).unwrap();
        for _ in 0..100 {
            let x = rng.gen_range(-5.0..5.0);
            let err = (predict_quantile_value(&m, x) - ecdf(&values, x)).abs();
            assert!(err < 0.05, "err {err} at {x}");
        }
    }

    #[test]
    fn predict_clamps_outside_sample() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let m = cdf_train(&values, 1.0, 10, 5).unwrap();
        assert_eq!(predict_quantile_value(&m, -1.0), 0.0);
        assert_eq!(predict_quantile_value(&m, 1000.0), 1.0);
    }

    #[test]
    fn empty_update_is_bit_exact_identity() {
        let values: Vec<f64> = (0..500).map(|i| (i as f64).sin() * 10.0).collect();
        let m = cdf_train(&values, 0.2, 20, 4).unwrap();
        let m2 = update_incremental(&m, &[], &[]).unwrap();
        assert_eq!(m.root.alpha.to_bits(), m2.root.alpha.to_bits());
        assert_eq!(m.root.beta.to_bits(), m2.root.beta.to_bits());
        assert_eq!(m.root.stats, m2.root.stats);
    }

    #[test]
    fn update_matches_from_scratch_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let values: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.0..100.0)).collect();
        let mut m = cdf_train(&values, 0.1, 50, 77).unwrap();
        for _ in 0..50 {
            let inserted: Vec<f64> =
                (0..rng.gen_range(0..20)).map(|_| rng.gen_range(0.0..100.0)).collect();
            let n_rm = rng.gen_range(0..m.sample.len().min(5));
            let removed: Vec<f64> = rand::seq::index::sample(&mut rng, m.sample.len(), n_rm)
                .into_iter()
                .map(|i| m.sample[i].0)
                .collect();

            // Independent bookkeeping of the expected pair multiset.
            let mut expected = m.sample.clone();
            for &x in &inserted {
                expected.push((x, m.root.route(x) as f64));
            }
            for &x in &removed {
                let i = expected.iter().position(|&(px, _)| px == x).unwrap();
                expected.swap_remove(i);
            }
            sort_pairs(&mut expected);
            let oracle = SufficientStats::from_pairs(&expected);

            m = update_incremental(&m, &inserted, &removed).unwrap();
            assert_eq!(m.root.stats, oracle, "stats must match from-scratch sums exactly");
        }
    }

    #[test]
    fn inserting_above_max_lowers_old_max_rank() {
        let values: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let m = cdf_train(&values, 1.0, 20, 2).unwrap();
        let old_max = 199.0;
        assert_eq!(predict_quantile_value(&m, old_max), 1.0);
        let inserted: Vec<f64> = (0..100).map(|i| 200.0 + i as f64).collect();
        let m2 = update_incremental(&m, &inserted, &[]).unwrap();
        assert!(predict_quantile_value(&m2, old_max) < 1.0);
    }

    #[test]
    fn removal_of_unknown_value_is_rejected() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let m = cdf_train(&values, 1.0, 10, 2).unwrap();
        assert!(update_incremental(&m, &[], &[12345.0]).is_err());
    }

    #[test]
    fn exact_model_has_zero_error_at_median() {
        let values: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let m = cdf_train(&values, 1.0, 100, 6).unwrap();
        assert_eq!(prediction_error_r(&m, &values, 0.5), 0.0);
    }

    #[test]
    fn median_window_with_all_candidates_selects_exact_median() {
        // kappa = 1/2 for the median expands the window to [0, 1]: every
        // value is a candidate and the relative rank picks the true median.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut values: Vec<f64> = (0..101).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = cdf_train(&values, 1.0, 100, 3).unwrap();
        let pivot = select_pivots(&m, &values, &[0.5], 0.5)[0];
        values.sort_by(f64::total_cmp);
        assert_eq!(pivot, values[50]);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let values: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>()).collect();
        let a = cdf_train(&values, 0.05, 100, 1234).unwrap();
        let b = cdf_train(&values, 0.05, 100, 1234).unwrap();
        assert_eq!(a, b);
        let c = cdf_train(&values, 0.05, 100, 1235).unwrap();
        assert_ne!(a.sample, c.sample);
    }

    #[test]
    fn prediction_is_monotone_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..50 {
            let n = rng.gen_range(2..2000);
            let values: Vec<f64> = match case % 3 {
                0 => (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect(),
                1 => (0..n).map(|_| rng.gen::<f64>().powi(4) * 1e6).collect(),
                _ => (0..n).map(|_| rng.gen_range(0..5) as f64).collect(),
            };
            let m = cdf_train(&values, 0.3, rng.gen_range(1..40), case).unwrap();
            let mut probes: Vec<f64> = (0..200).map(|_| rng.gen_range(-150.0..150.0)).collect();
            probes.sort_by(f64::total_cmp);
            let mut prev = 0.0;
            for &x in &probes {
                let p = predict_quantile_value(&m, x);
                assert!((0.0..=1.0).contains(&p));
                assert!(p >= prev, "monotonicity violated: {p} < {prev} at x = {x}");
                prev = p;
            }
        }
    }
}
