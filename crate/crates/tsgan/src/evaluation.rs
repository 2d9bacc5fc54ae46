//! Distributional and dependence metrics: earth-mover distance and the
//! binned log-probability (DY) metric on lagged returns, autocorrelation
//! and leverage-effect scores over a generated ensemble, and the report
//! that collects one row per model.

use crate::autodiff::AdError;
use crate::garch::GarchError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty sample")]
    EmptySample,
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("constant series; correlation undefined")]
    ConstantSeries,
    #[error("path source: {0}")]
    Source(String),
}

impl From<AdError> for EvalError {
    fn from(e: AdError) -> Self {
        EvalError::Source(e.to_string())
    }
}

impl From<GarchError> for EvalError {
    fn from(e: GarchError) -> Self {
        EvalError::Source(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Evaluation configuration; the defaults follow the benchmark protocol
/// (lags 1/5/20/100, 250 autocorrelation lags, 500 paths of length 4000,
/// five historical observations per DY bin).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub lags: Vec<usize>,
    pub acf_max_lag: usize,
    pub ensemble_size: usize,
    pub path_length: usize,
    pub dy_bin_occupancy: usize,
    /// Overlapping (stride one) lag aggregation; the non-overlapping
    /// variant is exposed for comparison.
    pub overlapping_lags: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            lags: vec![1, 5, 20, 100],
            acf_max_lag: 250,
            ensemble_size: 500,
            path_length: 4000,
            dy_bin_occupancy: 5,
            overlapping_lags: true,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.acf_max_lag >= self.path_length {
            return Err(EvalError::TooShort {
                needed: self.acf_max_lag + 1,
                got: self.path_length,
            });
        }
        if self.lags.iter().any(|&l| l == 0)
            || self.acf_max_lag == 0
            || self.ensemble_size == 0
            || self.path_length == 0
            || self.dy_bin_occupancy == 0
        {
            return Err(EvalError::EmptySample);
        }
        Ok(())
    }
}

/// Rolling sums of `lag` consecutive returns (stride one), i.e. the
/// `lag`-step log returns of the underlying path.
pub fn lagged_returns(r: &[f64], lag: usize) -> Result<Vec<f64>> {
    lagged_returns_with(r, lag, true)
}

/// As [`lagged_returns`]; `overlapping = false` uses stride `lag` instead
/// of stride one.
pub fn lagged_returns_with(r: &[f64], lag: usize, overlapping: bool) -> Result<Vec<f64>> {
    if lag == 0 || r.len() < lag {
        return Err(EvalError::TooShort {
            needed: lag.max(1),
            got: r.len(),
        });
    }
    if lag == 1 {
        return Ok(r.to_vec());
    }
    let mut sums = Vec::new();
    if overlapping {
        let mut acc: f64 = r[..lag].iter().sum();
        sums.push(acc);
        for t in lag..r.len() {
            acc += r[t] - r[t - lag];
            sums.push(acc);
        }
    } else {
        let mut t = 0;
        while t + lag <= r.len() {
            sums.push(r[t..t + lag].iter().sum());
            t += lag;
        }
    }
    Ok(sums)
}

/// Exact Wasserstein-1 distance between two empirical distributions:
/// the integral of |F_a - F_b| over the merged support, computed by
/// piecewise-constant integration. Handles unequal sample sizes.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.total_cmp(y));
    xb.sort_by(|x, y| x.total_cmp(y));
    let (n, m) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut emd = 0.0;
    let mut prev: Option<f64> = None;
    while i < xa.len() || j < xb.len() {
        let next_a = xa.get(i).copied().unwrap_or(f64::INFINITY);
        let next_b = xb.get(j).copied().unwrap_or(f64::INFINITY);
        let cur = next_a.min(next_b);
        if let Some(p) = prev {
            let fa = i as f64 / n;
            let fb = j as f64 / m;
            emd += (fa - fb).abs() * (cur - p);
        }
        while i < xa.len() && xa[i] == cur {
            i += 1;
        }
        while j < xb.len() && xb[j] == cur {
            j += 1;
        }
        prev = Some(cur);
    }
    Ok(emd)
}

/// Partition of the real line into consecutive bins holding `occupancy`
/// historical observations each (the last takes the remainder; the outer
/// bins extend to infinity).
#[derive(Debug, Clone)]
pub struct HistoricalBins {
    /// Upper edges of all bins except the last (which is unbounded).
    edges: Vec<f64>,
    hist_counts: Vec<usize>,
    hist_total: usize,
}

impl HistoricalBins {
    pub fn build(hist: &[f64], occupancy: usize) -> Result<Self> {
        if hist.len() < occupancy || occupancy == 0 {
            return Err(EvalError::TooShort {
                needed: occupancy.max(1),
                got: hist.len(),
            });
        }
        let mut sorted = hist.to_vec();
        sorted.sort_by(|x, y| x.total_cmp(y));
        let bins = sorted.len() / occupancy;
        let mut edges = Vec::with_capacity(bins - 1);
        let mut hist_counts = vec![occupancy; bins];
        for j in 0..bins - 1 {
            edges.push(sorted[(j + 1) * occupancy - 1]);
        }
        hist_counts[bins - 1] = sorted.len() - (bins - 1) * occupancy;
        Ok(Self {
            edges,
            hist_counts,
            hist_total: sorted.len(),
        })
    }

    pub fn num_bins(&self) -> usize {
        self.hist_counts.len()
    }

    fn bin_of(&self, v: f64) -> usize {
        // first bin whose upper edge is >= v
        self.edges.partition_point(|e| *e < v)
    }

    pub fn counts(&self, sample: &[f64]) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_bins()];
        for &v in sample {
            counts[self.bin_of(v)] += 1;
        }
        counts
    }
}

/// Sum over bins of |log P_hist - log P_gen| on an equiprobable historical
/// partition; generated frequencies carry add-one smoothing so empty bins
/// stay finite.
pub fn dy_metric(hist: &[f64], gen: &[f64], occupancy: usize) -> Result<f64> {
    if gen.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let bins = HistoricalBins::build(hist, occupancy)?;
    let gen_counts = bins.counts(gen);
    let b = bins.num_bins() as f64;
    let n_gen = gen.len() as f64;
    let mut dy = 0.0;
    for (h, g) in bins.hist_counts.iter().zip(&gen_counts) {
        let p_h = *h as f64 / bins.hist_total as f64;
        let p_g = (*g as f64 + 1.0) / (n_gen + b);
        dy += (p_h.ln() - p_g.ln()).abs();
    }
    Ok(dy)
}

/// Sample Pearson correlation of two equally long slices.
fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(EvalError::ConstantSeries);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Autocorrelation at lags `1..=max_lag`: entry `tau-1` is the Pearson
/// correlation of the series against itself shifted by `tau`.
pub fn acf(r: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if r.len() <= max_lag {
        return Err(EvalError::TooShort {
            needed: max_lag + 1,
            got: r.len(),
        });
    }
    (1..=max_lag)
        .map(|tau| pearson(&r[..r.len() - tau], &r[tau..]))
        .collect()
}

/// Leverage curve at lags `1..=max_lag`: correlation of future squared
/// returns with current returns.
pub fn leverage_effect(r: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if r.len() <= max_lag {
        return Err(EvalError::TooShort {
            needed: max_lag + 1,
            got: r.len(),
        });
    }
    let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
    (1..=max_lag)
        .map(|tau| pearson(&r[..r.len() - tau], &sq[tau..]))
        .collect()
}

/// Elementwise transform applied before the autocorrelation score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Abs,
    Square,
}

impl Transform {
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Transform::Identity => r.to_vec(),
            Transform::Abs => r.iter().map(|v| v.abs()).collect(),
            Transform::Square => r.iter().map(|v| v * v).collect(),
        }
    }
}

/// Euclidean distance between the historical autocorrelation curve and the
/// ensemble mean of per-path curves, after the elementwise transform.
pub fn acf_score(hist: &[f64], paths: &[Vec<f64>], transform: Transform, max_lag: usize) -> Result<f64> {
    if paths.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let hist_curve = acf(&transform.apply(hist), max_lag)?;
    curve_ensemble_score(&hist_curve, paths, max_lag, |p| acf(&transform.apply(p), max_lag))
}

/// Euclidean distance between historical and ensemble-mean leverage curves.
pub fn leverage_score(hist: &[f64], paths: &[Vec<f64>], max_lag: usize) -> Result<f64> {
    if paths.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let hist_curve = leverage_effect(hist, max_lag)?;
    curve_ensemble_score(&hist_curve, paths, max_lag, |p| leverage_effect(p, max_lag))
}

/// `|| hist - mean_i curve_i ||_2`, accumulated as the mean of per-path
/// difference curves so an ensemble of exact copies scores exactly zero.
fn curve_ensemble_score<F>(
    hist_curve: &[f64],
    paths: &[Vec<f64>],
    max_lag: usize,
    per_path: F,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let curves: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| per_path(p))
        .collect::<Result<_>>()?;
    let mut mean_diff = vec![0.0; max_lag];
    for curve in &curves {
        for ((d, h), c) in mean_diff.iter_mut().zip(hist_curve).zip(curve) {
            *d += h - c;
        }
    }
    let k = curves.len() as f64;
    Ok(mean_diff.iter().map(|d| (d / k) * (d / k)).sum::<f64>().sqrt())
}

fn ensemble_mean_curve<F>(paths: &[Vec<f64>], max_lag: usize, per_path: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let curves: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| per_path(p))
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; max_lag];
    for curve in &curves {
        for (m, c) in mean.iter_mut().zip(curve) {
            *m += c;
        }
    }
    let k = curves.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    Ok(mean)
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Anything that can produce generated return paths by index; index `i`
/// must always yield the same path, so evaluation parallelizes without
/// changing results.
pub trait PathSource: Sync {
    fn sample_path(&self, index: usize, length: usize) -> Result<Vec<f64>>;
    fn model_name(&self) -> String;
}

/// Replays a fixed series for every index (self-evaluation oracle).
pub struct ReplaySource {
    pub series: Vec<f64>,
    pub name: String,
}

impl PathSource for ReplaySource {
    fn sample_path(&self, _index: usize, length: usize) -> Result<Vec<f64>> {
        if self.series.len() < length {
            return Err(EvalError::TooShort {
                needed: length,
                got: self.series.len(),
            });
        }
        Ok(self.series[..length].to_vec())
    }

    fn model_name(&self) -> String {
        self.name.clone()
    }
}

/// One row of the benchmark table: every metric for one model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub seed: u64,
    /// (lag, value) pairs in configuration order.
    pub emd: Vec<(usize, f64)>,
    pub dy: Vec<(usize, f64)>,
    pub acf_identity: f64,
    pub acf_absolute: f64,
    pub acf_squared: f64,
    pub leverage: f64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let all_finite = self
            .emd
            .iter()
            .chain(self.dy.iter())
            .map(|(_, v)| *v)
            .chain([self.acf_identity, self.acf_absolute, self.acf_squared, self.leverage])
            .all(|v| v.is_finite() && v >= 0.0);
        if !all_finite {
            return Err(EvalError::Source("report contains negative or non-finite values".into()));
        }
        Ok(())
    }

    /// CSV header matching [`Self::to_csv_row`].
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["model".to_string(), "seed".to_string()];
        cols.extend(self.emd.iter().map(|(lag, _)| format!("emd_{lag}")));
        cols.extend(self.dy.iter().map(|(lag, _)| format!("dy_{lag}")));
        cols.push("acf_id".into());
        cols.push("acf_abs".into());
        cols.push("acf_sq".into());
        cols.push("leverage".into());
        cols.join(",")
    }

    /// One CSV row in benchmark-table column order: EMD per lag, DY per
    /// lag, the three ACF scores, then the leverage score.
    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![self.model.clone(), self.seed.to_string()];
        cols.extend(self.emd.iter().map(|(_, v)| format!("{v}")));
        cols.extend(self.dy.iter().map(|(_, v)| format!("{v}")));
        cols.push(format!("{}", self.acf_identity));
        cols.push(format!("{}", self.acf_absolute));
        cols.push(format!("{}", self.acf_squared));
        cols.push(format!("{}", self.leverage));
        cols.join(",")
    }
}

/// Run the full metric suite for one model: EMD and DY on pooled lagged
/// returns across the ensemble, ACF scores for the three transforms and
/// the leverage score.
pub fn evaluate_model(
    hist: &[f64],
    source: &dyn PathSource,
    cfg: &MetricConfig,
    seed: u64,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let paths: Vec<Vec<f64>> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|i| source.sample_path(i, cfg.path_length))
        .collect::<Result<_>>()?;

    let mut emd = Vec::with_capacity(cfg.lags.len());
    let mut dy = Vec::with_capacity(cfg.lags.len());
    for &lag in &cfg.lags {
        let hist_lagged = lagged_returns_with(hist, lag, cfg.overlapping_lags)?;
        // pool per-path lagged returns across the ensemble
        let mut gen_lagged = Vec::new();
        for p in &paths {
            gen_lagged.extend(lagged_returns_with(p, lag, cfg.overlapping_lags)?);
        }
        emd.push((lag, emd_1d(&hist_lagged, &gen_lagged)?));
        dy.push((lag, dy_metric(&hist_lagged, &gen_lagged, cfg.dy_bin_occupancy)?));
    }

    let report = MetricsReport {
        model: source.model_name(),
        seed,
        emd,
        dy,
        acf_identity: acf_score(hist, &paths, Transform::Identity, cfg.acf_max_lag)?,
        acf_absolute: acf_score(hist, &paths, Transform::Abs, cfg.acf_max_lag)?,
        acf_squared: acf_score(hist, &paths, Transform::Square, cfg.acf_max_lag)?,
        leverage: leverage_score(hist, &paths, cfg.acf_max_lag)?,
    };
    report.validate()?;
    Ok(report)
}

// ── plot data ───────────────────────────────────────────────────────────

/// Equal-width histogram densities over the combined range, for export.
pub fn histogram_data(hist: &[f64], gen: &[f64], bins: usize) -> Result<Vec<(f64, f64, f64)>> {
    if hist.is_empty() || gen.is_empty() || bins == 0 {
        return Err(EvalError::EmptySample);
    }
    let lo = hist
        .iter()
        .chain(gen)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = hist
        .iter()
        .chain(gen)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut h_counts = vec![0usize; bins];
    let mut g_counts = vec![0usize; bins];
    let clamp = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &v in hist {
        h_counts[clamp(v)] += 1;
    }
    for &v in gen {
        g_counts[clamp(v)] += 1;
    }
    Ok((0..bins)
        .map(|j| {
            let center = lo + (j as f64 + 0.5) * width;
            let hd = h_counts[j] as f64 / (hist.len() as f64 * width);
            let gd = g_counts[j] as f64 / (gen.len() as f64 * width);
            (center, hd, gd)
        })
        .collect())
}

/// Historical curve, ensemble mean curve and the white-noise confidence
/// half-width `1.96 / sqrt(T)` per lag, for export.
pub fn acf_curve_data(
    hist: &[f64],
    paths: &[Vec<f64>],
    transform: Transform,
    max_lag: usize,
) -> Result<Vec<(usize, f64, f64, f64)>> {
    let hist_curve = acf(&transform.apply(hist), max_lag)?;
    let mean_curve = ensemble_mean_curve(paths, max_lag, |p| acf(&transform.apply(p), max_lag))?;
    let band = 1.96 / (hist.len() as f64).sqrt();
    Ok((1..=max_lag)
        .map(|tau| (tau, hist_curve[tau - 1], mean_curve[tau - 1], band))
        .collect())
}

/// Leverage-effect analogue of [`acf_curve_data`].
pub fn leverage_curve_data(
    hist: &[f64],
    paths: &[Vec<f64>],
    max_lag: usize,
) -> Result<Vec<(usize, f64, f64, f64)>> {
    let hist_curve = leverage_effect(hist, max_lag)?;
    let mean_curve = ensemble_mean_curve(paths, max_lag, |p| leverage_effect(p, max_lag))?;
    let band = 1.96 / (hist.len() as f64).sqrt();
    Ok((1..=max_lag)
        .map(|tau| (tau, hist_curve[tau - 1], mean_curve[tau - 1], band))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_sample(n: usize, mean: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + mean
            })
            .collect()
    }

    #[test]
    fn lagged_returns_identity_and_sums() {
        let r = vec![1.0, 2.0, 3.0];
        assert_eq!(lagged_returns(&r, 1).unwrap(), r);
        assert_eq!(lagged_returns(&r, 2).unwrap(), vec![3.0, 5.0]);
        assert!(matches!(
            lagged_returns(&r, 4),
            Err(EvalError::TooShort { .. })
        ));
        // non-overlapping variant strides by the lag
        let r6 = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        assert_eq!(lagged_returns_with(&r6, 2, false).unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn lagged_returns_reconstruct_price_differences() {
        let prices: Vec<f64> = (1..=30).map(|i| 100.0 * (1.0 + 0.01 * i as f64)).collect();
        let returns = crate::preprocessing::log_returns(&prices).unwrap();
        let lag = 7;
        let lagged = lagged_returns(&returns, lag).unwrap();
        for (k, v) in lagged.iter().enumerate() {
            let direct = prices[k + lag].ln() - prices[k].ln();
            assert!((v - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn emd_identical_and_point_masses() {
        let x = normal_sample(500, 0.0, 1);
        assert_eq!(emd_1d(&x, &x).unwrap(), 0.0);
        assert!((emd_1d(&[0.0], &[2.5]).unwrap() - 2.5).abs() < 1e-15);
        assert!((emd_1d(&[0.0], &[-1.5]).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(emd_1d(&[], &[1.0]), Err(EvalError::EmptySample)));
    }

    #[test]
    fn emd_of_mean_shifted_normals_is_the_shift() {
        let a = normal_sample(100_000, 0.0, 2);
        let b = normal_sample(100_000, 0.5, 3);
        let d = emd_1d(&a, &b).unwrap();
        assert!((d - 0.5).abs() < 0.02, "EMD {d}");
    }

    #[test]
    fn emd_equals_order_statistics_formula_for_equal_sizes() {
        // for equal sample sizes the CDF integral reduces to the mean
        // absolute difference of order statistics (equal up to rounding)
        let mut a = normal_sample(5000, 0.0, 4);
        let mut b = normal_sample(5000, 0.3, 5);
        let viaintegral = emd_1d(&a, &b).unwrap();
        a.sort_by(|x, y| x.total_cmp(y));
        b.sort_by(|x, y| x.total_cmp(y));
        let via_order: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.len() as f64;
        assert!(
            (viaintegral - via_order).abs() <= 1e-12 * via_order.max(1.0),
            "{viaintegral} vs {via_order}"
        );
    }

    #[test]
    fn emd_is_symmetric() {
        let a = normal_sample(3000, 0.0, 6);
        let b = normal_sample(2000, 0.4, 7); // unequal sizes
        let ab = emd_1d(&a, &b).unwrap();
        let ba = emd_1d(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn dy_self_comparison_is_small() {
        let x = normal_sample(10_000, 0.0, 8);
        // same sample on both sides: only smoothing distortion remains
        let dy = dy_metric(&x, &x, 5).unwrap();
        let bins = (x.len() / 5) as f64;
        assert!(dy < 0.05 * bins, "self DY {dy} vs bins {bins}");
    }

    #[test]
    fn dy_is_finite_for_disjoint_supports() {
        let hist = normal_sample(1000, 0.0, 9);
        let gen: Vec<f64> = normal_sample(1000, 0.0, 10).iter().map(|v| v + 100.0).collect();
        let dy = dy_metric(&hist, &gen, 5).unwrap();
        assert!(dy.is_finite());
        assert!(dy > 0.0);
    }

    #[test]
    fn dy_orders_same_distribution_below_shifted() {
        for seed in 0..20 {
            let hist = normal_sample(100_000, 0.0, 100 + seed);
            let same = normal_sample(100_000, 0.0, 200 + seed);
            let shifted = normal_sample(100_000, 1.0, 300 + seed);
            let dy_same = dy_metric(&hist, &same, 5).unwrap();
            let dy_shifted = dy_metric(&hist, &shifted, 5).unwrap();
            assert!(
                dy_same < dy_shifted,
                "seed {seed}: same {dy_same} vs shifted {dy_shifted}"
            );
        }
    }

    #[test]
    fn acf_of_alternating_series() {
        let r: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c = acf(&r, 2).unwrap();
        assert!((c[0] + 1.0).abs() < 1e-6, "lag-1 ACF {}", c[0]);
        assert!((c[1] - 1.0).abs() < 1e-6, "lag-2 ACF {}", c[1]);
    }

    #[test]
    fn acf_of_white_noise_stays_in_band() {
        let r = normal_sample(10_000, 0.0, 11);
        let c = acf(&r, 100).unwrap();
        let band = 4.0 / (r.len() as f64).sqrt();
        let outside = c.iter().filter(|v| v.abs() > band).count();
        assert!(outside <= 1, "{outside} of 100 lags outside the band");
    }

    #[test]
    fn acf_rejects_constant_series() {
        let r = vec![2.0; 50];
        assert!(matches!(acf(&r, 3), Err(EvalError::ConstantSeries)));
    }

    #[test]
    fn acf_score_zero_on_identical_ensemble() {
        let hist = normal_sample(3000, 0.0, 12);
        let paths: Vec<Vec<f64>> = (0..10).map(|_| hist.clone()).collect();
        for t in [Transform::Identity, Transform::Abs, Transform::Square] {
            assert_eq!(acf_score(&hist, &paths, t, 50).unwrap(), 0.0);
        }
        assert_eq!(leverage_score(&hist, &paths, 50).unwrap(), 0.0);
    }

    #[test]
    fn acf_score_small_between_independent_noise() {
        // The score between independent white-noise ensembles is pure
        // estimator fluctuation: each lag contributes variance ~ 1/T, so
        // score^2 ~ (S/T) * chi-square-like concentration. The bound below
        // is sqrt(S/T) inflated by three relative standard deviations.
        let (t, s) = (4000usize, 250usize);
        let hist = normal_sample(t, 0.0, 13);
        let paths: Vec<Vec<f64>> = (0..50).map(|i| normal_sample(t, 0.0, 500 + i)).collect();
        let score = acf_score(&hist, &paths, Transform::Square, s).unwrap();
        let bound = (s as f64 / t as f64).sqrt() * (1.0 + 3.0 * (2.0 / s as f64).sqrt());
        assert!(score < bound, "white-noise ACF score {score} vs bound {bound}");
    }

    #[test]
    fn acf_score_ignores_path_order() {
        let hist = normal_sample(2000, 0.0, 14);
        let mut paths: Vec<Vec<f64>> = (0..8).map(|i| normal_sample(2000, 0.0, 700 + i)).collect();
        let a = acf_score(&hist, &paths, Transform::Abs, 40).unwrap();
        paths.reverse();
        let b = acf_score(&hist, &paths, Transform::Abs, 40).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leverage_zero_for_symmetric_noise() {
        let r = normal_sample(10_000, 0.0, 15);
        let curve = leverage_effect(&r, 100).unwrap();
        let band = 4.0 / (r.len() as f64).sqrt();
        let outside = curve.iter().filter(|v| v.abs() > band).count();
        assert!(outside <= 1, "{outside} of 100 lags outside band");
    }

    #[test]
    fn leverage_detects_constructed_asymmetry() {
        // volatility spikes after negative returns only
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 50_000;
        let mut r = Vec::with_capacity(n);
        let mut prev: f64 = 0.0;
        for _ in 0..n {
            let boost = if prev < 0.0 { 4.0 * prev * prev } else { 0.0 };
            let var: f64 = 1e-4 + 0.5 * boost;
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = var.sqrt() * z;
            r.push(x);
            prev = x;
        }
        let curve = leverage_effect(&r, 5).unwrap();
        assert!(curve[0] < 0.0, "lag-1 leverage {}", curve[0]);
    }

    #[test]
    fn scores_are_continuous_in_the_ensemble() {
        let hist = normal_sample(2000, 0.0, 17);
        let paths: Vec<Vec<f64>> = (0..10).map(|i| normal_sample(2000, 0.0, 900 + i)).collect();
        let base_acf = acf_score(&hist, &paths, Transform::Square, 50).unwrap();
        let base_lev = leverage_score(&hist, &paths, 50).unwrap();
        let mut perturbed = paths.clone();
        perturbed[3][100] += 1e-6;
        let p_acf = acf_score(&hist, &perturbed, Transform::Square, 50).unwrap();
        let p_lev = leverage_score(&hist, &perturbed, 50).unwrap();
        assert!((p_acf - base_acf).abs() < 1e-3);
        assert!((p_lev - base_lev).abs() < 1e-3);
    }

    #[test]
    fn self_evaluation_is_exact_zero_on_curves() {
        let hist = normal_sample(3000, 0.0, 18);
        let source = ReplaySource {
            series: hist.clone(),
            name: "replay".into(),
        };
        let cfg = MetricConfig {
            lags: vec![1, 5],
            acf_max_lag: 40,
            ensemble_size: 4,
            path_length: 3000,
            dy_bin_occupancy: 5,
            overlapping_lags: true,
        };
        let report = evaluate_model(&hist, &source, &cfg, 0).unwrap();
        for (_, v) in &report.emd {
            assert_eq!(*v, 0.0);
        }
        assert_eq!(report.acf_identity, 0.0);
        assert_eq!(report.acf_absolute, 0.0);
        assert_eq!(report.acf_squared, 0.0);
        assert_eq!(report.leverage, 0.0);
        report.validate().unwrap();
    }

    #[test]
    fn garch_self_report_beats_mismatched_generator() {
        use crate::garch::{garch_simulate, GarchParams};
        struct GarchSource {
            params: GarchParams,
            seed: u64,
        }
        impl PathSource for GarchSource {
            fn sample_path(&self, index: usize, length: usize) -> Result<Vec<f64>> {
                Ok(garch_simulate(
                    &self.params,
                    length,
                    self.seed.wrapping_add(index as u64),
                )?)
            }
            fn model_name(&self) -> String {
                "garch".into()
            }
        }
        let truth = GarchParams {
            omega: 1e-5,
            alpha: 0.1,
            beta: 0.85,
            mu: 0.0,
        };
        let hist = garch_simulate(&truth, 4000, 20_000).unwrap();
        let cfg = MetricConfig {
            lags: vec![1, 5],
            acf_max_lag: 50,
            ensemble_size: 40,
            path_length: 4000,
            dy_bin_occupancy: 5,
            overlapping_lags: true,
        };
        let matched = evaluate_model(
            &hist,
            &GarchSource {
                params: truth,
                seed: 1,
            },
            &cfg,
            1,
        )
        .unwrap();
        matched.validate().unwrap();
        let wrong = GarchParams {
            omega: 4e-4,
            alpha: 0.02,
            beta: 0.1,
            mu: 0.002,
        };
        let mismatched = evaluate_model(
            &hist,
            &GarchSource {
                params: wrong,
                seed: 1,
            },
            &cfg,
            1,
        )
        .unwrap();
        assert!(matched.emd[0].1 < mismatched.emd[0].1);
        assert!(matched.dy[0].1 < mismatched.dy[0].1);
    }

    #[test]
    fn report_round_trips_through_json_and_csv() {
        let report = MetricsReport {
            model: "test".into(),
            seed: 7,
            emd: vec![(1, 0.01), (5, 0.02)],
            dy: vec![(1, 3.0), (5, 4.0)],
            acf_identity: 0.1,
            acf_absolute: 0.2,
            acf_squared: 0.3,
            leverage: 0.4,
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(
            report.csv_header(),
            "model,seed,emd_1,emd_5,dy_1,dy_5,acf_id,acf_abs,acf_sq,leverage"
        );
        assert_eq!(report.to_csv_row().split(',').count(), 10);
    }

    #[test]
    fn histogram_densities_integrate_to_one() {
        let hist = normal_sample(5000, 0.0, 19);
        let gen = normal_sample(5000, 0.2, 20);
        let rows = histogram_data(&hist, &gen, 50).unwrap();
        let width = rows[1].0 - rows[0].0;
        let h_mass: f64 = rows.iter().map(|(_, h, _)| h * width).sum();
        let g_mass: f64 = rows.iter().map(|(_, _, g)| g * width).sum();
        assert!((h_mass - 1.0).abs() < 1e-9);
        assert!((g_mass - 1.0).abs() < 1e-9);
    }
}
