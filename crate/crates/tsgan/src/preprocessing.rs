//! Return preprocessing: log returns, normalization, the Lambert W tail
//! transform and its maximum-likelihood fit, rolling windows and the
//! bias-corrected window sampler.
//!
//! The pipeline applied before training is: log returns, normalize,
//! inverse Lambert W (which Gaussianizes heavy tails), normalize again.
//! Every step is invertible, so generated output can be mapped back to the
//! price domain exactly.

use crate::optim::nelder_mead;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("prices must be strictly positive (offending value {0})")]
    NonPositivePrice(f64),
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series is constant; normalization undefined")]
    ConstantSeries,
    #[error("lambert_w0: argument {0} below -1/e")]
    LambertDomain(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("likelihood optimization did not converge after {iterations} iterations (best log-likelihood {loglik})")]
    NoConvergence {
        best: LambertParams,
        loglik: f64,
        iterations: usize,
    },
    #[error("pipeline stage mismatch: expected {expected:?}, got {got:?}")]
    StageMismatch { expected: Stage, got: Stage },
}

pub type Result<T> = std::result::Result<T, PrepError>;

/// How far through the pipeline a return series has traveled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Raw log returns (step 1 output).
    Raw,
    /// After the first normalization.
    Normalized,
    /// After the inverse Lambert W transform.
    Gaussianized,
    /// After the second normalization; the domain the networks see.
    Ready,
}

/// A one-dimensional log return series carrying its pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReturnSeries {
    pub values: Vec<f64>,
    pub stage: Stage,
}

impl LogReturnSeries {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            stage: Stage::Raw,
        }
    }

    pub fn ready(values: Vec<f64>) -> Self {
        Self {
            values,
            stage: Stage::Ready,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Log returns of a strictly positive price series: `r_t = ln(s_t / s_{t-1})`.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(PrepError::TooShort {
            needed: 2,
            got: prices.len(),
        });
    }
    if let Some(&bad) = prices.iter().find(|p| **p <= 0.0 || !p.is_finite()) {
        return Err(PrepError::NonPositivePrice(bad));
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Rebuild a price path from log returns and the initial price.
pub fn prices_from_returns(s0: f64, returns: &[f64]) -> Vec<f64> {
    let mut prices = Vec::with_capacity(returns.len() + 1);
    let mut log_price = s0.ln();
    prices.push(s0);
    for r in returns {
        log_price += r;
        prices.push(log_price.exp());
    }
    prices
}

/// Location/scale used by the normalization steps; the scale is the sample
/// standard deviation with the n-1 denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerParams {
    pub mean: f64,
    pub std: f64,
}

impl NormalizerParams {
    pub fn fit(x: &[f64]) -> Result<Self> {
        if x.len() < 2 {
            return Err(PrepError::TooShort {
                needed: 2,
                got: x.len(),
            });
        }
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        if var == 0.0 {
            return Err(PrepError::ConstantSeries);
        }
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v * self.std + self.mean).collect()
    }
}

/// Fit and apply in one step.
pub fn normalize(x: &[f64]) -> Result<(Vec<f64>, NormalizerParams)> {
    let params = NormalizerParams::fit(x)?;
    Ok((params.apply(x), params))
}

// ── Lambert W ───────────────────────────────────────────────────────────

/// Principal branch of the Lambert W function, `w * exp(w) = x` with
/// `w >= -1`, for `x >= -1/e`.
///
/// Halley iteration; the initial guess is `ln(1 + x)` on the nonnegative
/// axis and a series around the branch point for negative arguments.
pub fn lambert_w0(x: f64) -> Result<f64> {
    const INV_E: f64 = 1.0 / std::f64::consts::E;
    if x < -INV_E {
        // tolerate float dust at the branch point
        if x > -INV_E - 1e-12 {
            return Ok(-1.0);
        }
        return Err(PrepError::LambertDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = if x >= 0.0 {
        x.ln_1p()
    } else {
        // series around the branch point w = -1
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0
    };
    for _ in 0..50 {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= 1e-13 * x.abs().max(1.0) {
            return Ok(w);
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if !w.is_finite() {
            return Err(PrepError::LambertDomain(x));
        }
    }
    Ok(w)
}

/// Location/scale/tail parameters of the Lambert W x Gaussian transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambertParams {
    pub location: f64,
    pub scale: f64,
    pub delta: f64,
}

impl LambertParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(PrepError::InvalidParams(format!("scale {} must be positive", self.scale)));
        }
        if self.delta < 0.0 || !self.delta.is_finite() {
            return Err(PrepError::InvalidParams(format!(
                "delta {} must be nonnegative",
                self.delta
            )));
        }
        if !self.location.is_finite() {
            return Err(PrepError::InvalidParams("location must be finite".into()));
        }
        Ok(())
    }
}

/// Heavy-tailing map: with `u = (x - location) / scale`,
/// `y = u * exp(delta/2 * u^2) * scale + location`. Strictly increasing for
/// `delta >= 0`.
pub fn lambert_forward(x: &[f64], p: &LambertParams) -> Result<Vec<f64>> {
    p.validate()?;
    Ok(x.iter()
        .map(|&v| {
            let u = (v - p.location) / p.scale;
            u * (0.5 * p.delta * u * u).exp() * p.scale + p.location
        })
        .collect())
}

/// Inverse of [`lambert_forward`] (the Gaussianizing direction): with
/// `z = (y - location) / scale`, `u = sign(z) * sqrt(W0(delta z^2) / delta)`
/// and the result is `u * scale + location`. Identity for `delta = 0`.
pub fn lambert_inverse(y: &[f64], p: &LambertParams) -> Result<Vec<f64>> {
    p.validate()?;
    if p.delta == 0.0 {
        return Ok(y.to_vec());
    }
    y.iter()
        .map(|&v| {
            let z = (v - p.location) / p.scale;
            let w = lambert_w0(p.delta * z * z)?;
            let u = z.signum() * (w / p.delta).sqrt();
            Ok(u * p.scale + p.location)
        })
        .collect()
}

/// Log-density of one observation under the Lambert W x Gaussian model.
fn lambert_log_density(y: f64, p: &LambertParams) -> f64 {
    let z = (y - p.location) / p.scale;
    if p.delta == 0.0 {
        return -0.5 * (2.0 * std::f64::consts::PI).ln() - p.scale.ln() - 0.5 * z * z;
    }
    let w = match lambert_w0(p.delta * z * z) {
        Ok(w) => w,
        Err(_) => return f64::NEG_INFINITY,
    };
    let u = z.signum() * (w / p.delta).sqrt();
    // f_Y(y) = phi(u) / (scale * exp(delta u^2 / 2) * (1 + delta u^2))
    -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * u * u
        - p.scale.ln()
        - 0.5 * p.delta * u * u
        - (1.0 + p.delta * u * u).ln()
}

/// Total log-likelihood of the sample under `p`.
pub fn lambert_loglik(y: &[f64], p: &LambertParams) -> f64 {
    y.iter().map(|&v| lambert_log_density(v, p)).sum()
}

/// Kurtosis of the Lambert W x Gaussian with tail parameter `delta`
/// (finite for `delta < 1/4`).
fn lambert_kurtosis(delta: f64) -> f64 {
    3.0 * (1.0 - 4.0 * delta).powf(-2.5) * (1.0 - 2.0 * delta).powi(3)
}

fn sample_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

/// Method-of-moments starting value for `delta`: match the sample kurtosis
/// of the standardized data, clipped to the finite-kurtosis region.
fn delta_moment_init(y: &[f64]) -> f64 {
    let k = sample_kurtosis(y);
    if k <= 3.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 0.2499_f64);
    if k >= lambert_kurtosis(hi) {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if lambert_kurtosis(mid) < k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-likelihood fit of the Lambert W x Gaussian parameters.
///
/// `delta` starts from the kurtosis-matching heuristic, location/scale from
/// the sample moments; a simplex search then maximizes the log-likelihood
/// over `(location, ln scale, sqrt delta)`. Non-convergence is reported
/// with the best parameters found so far.
pub fn fit_lambert(y: &[f64]) -> Result<LambertParams> {
    fit_lambert_inner(y).map(|(p, _)| p)
}

/// As [`fit_lambert`] but also reporting the final log-likelihood.
pub fn fit_lambert_inner(y: &[f64]) -> Result<(LambertParams, f64)> {
    if y.len() < 10 {
        return Err(PrepError::TooShort {
            needed: 10,
            got: y.len(),
        });
    }
    let norm = NormalizerParams::fit(y)?;
    let delta0 = delta_moment_init(y);
    let x0 = [norm.mean, norm.std.ln(), delta0.sqrt()];
    let unpack = |x: &[f64]| LambertParams {
        location: x[0],
        scale: x[1].exp(),
        delta: x[2] * x[2],
    };
    let objective = |x: &[f64]| -lambert_loglik(y, &unpack(x));
    let out = nelder_mead(objective, &x0, 0.25, 1e-9, 2000);
    let params = unpack(&out.x);
    params.validate()?;
    if !out.converged {
        return Err(PrepError::NoConvergence {
            best: params,
            loglik: -out.value,
            iterations: out.iterations,
        });
    }
    Ok((params, -out.value))
}

// ── pipeline ────────────────────────────────────────────────────────────

/// The fitted preprocessing pipeline in application order: normalize,
/// inverse Lambert W, normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub normalizer1: NormalizerParams,
    pub lambert: LambertParams,
    pub normalizer2: NormalizerParams,
}

impl PipelineState {
    /// Fit the three stages on raw log returns and return the fully
    /// processed series alongside the state.
    pub fn fit(returns: &[f64]) -> Result<(Self, LogReturnSeries)> {
        let (n1_applied, normalizer1) = normalize(returns)?;
        let lambert = fit_lambert(&n1_applied)?;
        let gaussianized = lambert_inverse(&n1_applied, &lambert)?;
        let (ready, normalizer2) = normalize(&gaussianized)?;
        Ok((
            Self {
                normalizer1,
                lambert,
                normalizer2,
            },
            LogReturnSeries {
                values: ready,
                stage: Stage::Ready,
            },
        ))
    }

    /// Apply the fitted stages to a raw return series.
    pub fn apply(&self, series: &LogReturnSeries) -> Result<LogReturnSeries> {
        if series.stage != Stage::Raw {
            return Err(PrepError::StageMismatch {
                expected: Stage::Raw,
                got: series.stage,
            });
        }
        let step2 = self.normalizer1.apply(&series.values);
        let step3 = lambert_inverse(&step2, &self.lambert)?;
        let step4 = self.normalizer2.apply(&step3);
        Ok(LogReturnSeries {
            values: step4,
            stage: Stage::Ready,
        })
    }

    /// Undo the fitted stages on generated output.
    pub fn invert(&self, series: &LogReturnSeries) -> Result<LogReturnSeries> {
        if series.stage != Stage::Ready {
            return Err(PrepError::StageMismatch {
                expected: Stage::Ready,
                got: series.stage,
            });
        }
        let step3 = self.normalizer2.invert(&series.values);
        let step2 = lambert_forward(&step3, &self.lambert)?;
        let raw = self.normalizer1.invert(&step2);
        Ok(LogReturnSeries {
            values: raw,
            stage: Stage::Raw,
        })
    }
}

// ── rolling windows ─────────────────────────────────────────────────────

/// All stride-one windows of the given width; window `j` covers indices
/// `j ..= j + width - 1`, and the last window ends at the final element.
pub fn rolling_window(x: &[f64], width: usize) -> Result<Vec<&[f64]>> {
    if width == 0 || x.len() < width {
        return Err(PrepError::TooShort {
            needed: width.max(1),
            got: x.len(),
        });
    }
    Ok(x.windows(width).collect())
}

/// Draws window indices so that every underlying return is selected with
/// equal long-run frequency.
///
/// Sliding windows under-sample the series edges: return `i` appears in
/// `coverage(i)` windows, which shrinks to 1 at both ends. Each draw picks
/// an anchor return uniformly and then a window containing it uniformly,
/// which weights window `j` by `sum_{i in j} 1 / coverage(i)` — near-uniform
/// in the interior and upweighted toward the endpoint windows.
#[derive(Debug, Clone)]
pub struct WeightedWindowSampler {
    num_windows: usize,
    width: usize,
    series_len: usize,
}

impl WeightedWindowSampler {
    pub fn new(series_len: usize, width: usize) -> Result<Self> {
        if width == 0 || series_len < width {
            return Err(PrepError::TooShort {
                needed: width.max(1),
                got: series_len,
            });
        }
        Ok(Self {
            num_windows: series_len - width + 1,
            width,
            series_len,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.num_windows
    }

    /// Number of windows containing return index `i`.
    pub fn coverage(&self, i: usize) -> usize {
        debug_assert!(i < self.series_len);
        let lo = i.saturating_sub(self.width - 1).min(self.num_windows - 1);
        let hi = i.min(self.num_windows - 1);
        hi - lo + 1
    }

    /// Draw one window index.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        if self.num_windows == 1 {
            return 0;
        }
        let anchor = rng.random_range(0..self.series_len);
        let lo = anchor.saturating_sub(self.width - 1).min(self.num_windows - 1);
        let hi = anchor.min(self.num_windows - 1);
        rng.random_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn log_returns_basics() {
        let r = log_returns(&[1.0, std::f64::consts::E]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15);
        let r = log_returns(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        assert!(matches!(
            log_returns(&[1.0, -2.0]),
            Err(PrepError::NonPositivePrice(_))
        ));
    }

    #[test]
    fn price_reconstruction_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prices: Vec<f64> = {
            let mut p = vec![100.0];
            for _ in 0..500 {
                let r: f64 = StandardNormal.sample(&mut rng);
                let last = *p.last().unwrap();
                p.push(last * (0.01 * r).exp());
            }
            p
        };
        let returns = log_returns(&prices).unwrap();
        let rebuilt = prices_from_returns(prices[0], &returns);
        for (a, b) in prices.iter().zip(&rebuilt) {
            assert!((a - b).abs() < 1e-12 * a.abs());
        }
    }

    #[test]
    fn normalize_two_points() {
        let (z, p) = normalize(&[-1.0, 1.0]).unwrap();
        // std with n-1 denominator is sqrt(2), so the points map to ±1/sqrt(2)
        let expected = 1.0 / 2.0_f64.sqrt();
        assert!((z[0] + expected).abs() < 1e-12);
        assert!((z[1] - expected).abs() < 1e-12);
        assert_eq!(p.mean, 0.0);
    }

    #[test]
    fn normalize_round_trip_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..1000).map(|_| 3.0 + 2.0 * rng.random_range(-1.0..1.0)).collect();
        let (z, p) = normalize(&x).unwrap();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-12);
        let back = p.invert(&z);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            normalize(&[5.0, 5.0, 5.0]),
            Err(PrepError::ConstantSeries)
        ));
    }

    #[test]
    fn lambert_w0_known_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-13);
        assert!(matches!(lambert_w0(-1.0), Err(PrepError::LambertDomain(_))));
    }

    #[test]
    fn lambert_w0_satisfies_defining_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x = rng.random_range(0.0..1000.0);
            let w = lambert_w0(x).unwrap();
            assert!(
                (w * w.exp() - x).abs() < 1e-12 * x.max(1.0),
                "residual too large at x = {x}"
            );
        }
        // negative branch segment
        for _ in 0..500 {
            let x = rng.random_range(-1.0 / std::f64::consts::E..0.0);
            let w = lambert_w0(x).unwrap();
            assert!(w >= -1.0);
            assert!((w * w.exp() - x).abs() < 1e-11);
        }
    }

    #[test]
    fn lambert_forward_examples() {
        let p = LambertParams {
            location: 0.0,
            scale: 1.0,
            delta: 2.0,
        };
        let y = lambert_forward(&[1.0], &p).unwrap();
        assert!((y[0] - std::f64::consts::E).abs() < 1e-14);

        let identity = LambertParams {
            location: 0.3,
            scale: 1.7,
            delta: 0.0,
        };
        let x = vec![-0.5, 0.0, 2.5];
        assert_eq!(lambert_forward(&x, &identity).unwrap(), x);
    }

    #[test]
    fn lambert_forward_is_monotone() {
        let p = LambertParams {
            location: 0.1,
            scale: 0.8,
            delta: 0.4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x: Vec<f64> = (0..500).map(|_| rng.random_range(-4.0..4.0)).collect();
        x.sort_by(|a, b| a.total_cmp(b));
        let y = lambert_forward(&x, &p).unwrap();
        for w in y.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn lambert_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for delta in [0.05, 0.2, 1.0] {
            let p = LambertParams {
                location: 0.02,
                scale: 1.3,
                delta,
            };
            let y: Vec<f64> = (0..10_000).map(|_| rng.random_range(-5.0..5.0)).collect();
            let u = lambert_inverse(&y, &p).unwrap();
            let back = lambert_forward(&u, &p).unwrap();
            let max_err = y
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(max_err < 1e-9, "delta {delta}: max round-trip error {max_err}");
        }
    }

    #[test]
    fn lambert_inverse_of_forward_example() {
        let p = LambertParams {
            location: 0.4,
            scale: 2.0,
            delta: 2.0,
        };
        // forward maps u = 1 to e on the standardized scale
        let y = vec![2.0 * std::f64::consts::E + 0.4];
        let u = lambert_inverse(&y, &p).unwrap();
        assert!((u[0] - 2.4).abs() < 1e-12);
    }

    #[test]
    fn lambert_inverse_monotone_for_positive_delta() {
        let p = LambertParams {
            location: 0.0,
            scale: 1.0,
            delta: 0.3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut y: Vec<f64> = (0..300).map(|_| rng.random_range(-8.0..8.0)).collect();
        y.sort_by(|a, b| a.total_cmp(b));
        let u = lambert_inverse(&y, &p).unwrap();
        for w in u.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn fit_recovers_zero_delta_on_gaussian_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = fit_lambert(&y).unwrap();
        assert!(p.delta < 0.02, "delta = {}", p.delta);
        assert!(p.location.abs() < 0.02);
        assert!((p.scale - 1.0).abs() < 0.02);
    }

    #[test]
    fn fit_recovers_known_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = LambertParams {
            location: 0.0,
            scale: 1.0,
            delta: 0.2,
        };
        let x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = lambert_forward(&x, &truth).unwrap();
        let p = fit_lambert(&y).unwrap();
        assert!(
            (0.17..=0.23).contains(&p.delta),
            "recovered delta = {}",
            p.delta
        );
        // location and scale within loose sampling error bounds
        assert!(p.location.abs() < 0.03, "location = {}", p.location);
        assert!((p.scale - 1.0).abs() < 0.03, "scale = {}", p.scale);
    }

    #[test]
    fn fit_is_scale_location_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = LambertParams {
            location: 0.0,
            scale: 1.0,
            delta: 0.15,
        };
        let x: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = lambert_forward(&x, &truth).unwrap();
        let base = fit_lambert(&y).unwrap();
        let (a, b) = (2.5, -0.7);
        let scaled: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let shifted = fit_lambert(&scaled).unwrap();
        assert!((shifted.location - (a * base.location + b)).abs() < 1e-3);
        assert!((shifted.scale - a * base.scale).abs() < 5e-3);
        assert!((shifted.delta - base.delta).abs() < 5e-3);
    }

    #[test]
    fn pipeline_round_trip_and_gaussianization() {
        // heavy-tailed synthetic returns
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let tail = LambertParams {
            location: 0.0,
            scale: 1.0,
            delta: 0.15,
        };
        let gauss: Vec<f64> = (0..50_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let heavy = lambert_forward(&gauss, &tail).unwrap();
        let returns: Vec<f64> = heavy.iter().map(|v| 0.01 * v + 0.0002).collect();

        let (state, ready) = PipelineState::fit(&returns).unwrap();
        assert_eq!(ready.stage, Stage::Ready);
        // processed series is standardized
        let mean = ready.values.iter().sum::<f64>() / ready.len() as f64;
        assert!(mean.abs() < 1e-10);
        // the inverse transform took the excess kurtosis out
        let k = sample_kurtosis(&ready.values);
        assert!((k - 3.0).abs() < 0.5, "kurtosis after pipeline = {k}");

        let back = state.invert(&ready).unwrap();
        assert_eq!(back.stage, Stage::Raw);
        let max_err = returns
            .iter()
            .zip(&back.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_err < 1e-10, "pipeline round-trip error {max_err}");

        // apply() matches fit()'s output on the same input
        let applied = state.apply(&LogReturnSeries::raw(returns.clone())).unwrap();
        assert_eq!(applied.values, ready.values);
    }

    #[test]
    fn pipeline_rejects_wrong_stage() {
        let returns: Vec<f64> = (0..200).map(|i| ((i * 37) % 17) as f64 * 0.001 - 0.008).collect();
        let (state, ready) = PipelineState::fit(&returns).unwrap();
        assert!(matches!(
            state.apply(&ready),
            Err(PrepError::StageMismatch { .. })
        ));
        let raw = LogReturnSeries::raw(returns);
        assert!(matches!(
            state.invert(&raw),
            Err(PrepError::StageMismatch { .. })
        ));
    }

    #[test]
    fn rolling_window_counts_and_contents() {
        let x: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let w = rolling_window(&x, 5).unwrap();
        assert_eq!(w.len(), 1);

        let x: Vec<f64> = (1..=6).map(|i| i as f64).collect();
        let w = rolling_window(&x, 5).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1], &[2.0, 3.0, 4.0, 5.0, 6.0]);

        // consecutive windows shift by one element
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let w = rolling_window(&x, 4).unwrap();
        for j in 0..w.len() - 1 {
            assert_eq!(w[j][1..], w[j + 1][..3]);
        }
        assert!(matches!(rolling_window(&x, 13), Err(PrepError::TooShort { .. })));
    }

    #[test]
    fn sampler_single_window_always_zero() {
        let s = WeightedWindowSampler::new(5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            assert_eq!(s.draw(&mut rng), 0);
        }
    }

    #[test]
    fn sampler_interior_weights_near_uniform() {
        // coverage is constant in the interior, so interior windows carry
        // nearly equal weight
        let s = WeightedWindowSampler::new(500, 20).unwrap();
        for i in 19..=480 {
            assert_eq!(s.coverage(i), 20);
        }
        assert_eq!(s.coverage(0), 1);
        assert_eq!(s.coverage(499), 1);
    }

    #[test]
    fn sampler_selects_every_return_uniformly() {
        let (t, width) = (200, 16);
        let s = WeightedWindowSampler::new(t, width).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = 1_000_000usize;
        let mut anchor_counts = vec![0u64; t];
        for _ in 0..draws {
            // replicate draw() to observe the anchor selection frequency
            let anchor = rng.random_range(0..t);
            let lo = anchor.saturating_sub(width - 1).min(s.num_windows() - 1);
            let hi = anchor.min(s.num_windows() - 1);
            let _window = rng.random_range(lo..=hi);
            anchor_counts[anchor] += 1;
        }
        let expected = draws as f64 / t as f64;
        for (i, c) in anchor_counts.iter().enumerate() {
            let rel = (*c as f64 - expected) / expected;
            assert!(rel.abs() < 0.05, "return {i} frequency off by {rel}");
        }
    }

    #[test]
    fn sampler_window_frequency_matches_inverse_coverage_mass() {
        // empirical window frequencies against the analytic weights
        let (t, width) = (60, 8);
        let s = WeightedWindowSampler::new(t, width).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws = 400_000usize;
        let mut counts = vec![0u64; s.num_windows()];
        for _ in 0..draws {
            counts[s.draw(&mut rng)] += 1;
        }
        let mut expected = vec![0.0; s.num_windows()];
        for i in 0..t {
            let lo = i.saturating_sub(width - 1).min(s.num_windows() - 1);
            let hi = i.min(s.num_windows() - 1);
            let share = 1.0 / ((hi - lo + 1) as f64 * t as f64);
            for (w, e) in expected.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let _ = w;
                *e += share;
            }
        }
        for (j, c) in counts.iter().enumerate() {
            let freq = *c as f64 / draws as f64;
            assert!(
                (freq - expected[j]).abs() < 0.1 * expected[j] + 5e-4,
                "window {j}: freq {freq} vs expected {}",
                expected[j]
            );
        }
        // endpoint windows carry more weight than interior ones
        assert!(expected[0] > expected[s.num_windows() / 2] * 1.5);
    }
}
