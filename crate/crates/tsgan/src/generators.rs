//! Return-path generators: the Gaussian noise prior, the pure TCN
//! generator, the constrained stochastic-volatility generator, risk-neutral
//! correction and spot-path construction.
//!
//! Both generators map an i.i.d. standard normal noise process through a
//! TCN. The pure variant emits returns directly; the stochastic-volatility
//! variant emits a volatility and a drift head from strictly lagged noise
//! and multiplies the volatility with the current noise coordinate, so
//! `(sigma_t, mu_t)` is independent of the innovation `eps_t`.

use crate::autodiff::{AdError, Graph, Result, Tensor, Var};
use crate::networks::{tcn_skip_forward, Tcn, TcnSkipSpec};
use crate::preprocessing::LogReturnSeries;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// I.i.d. multivariate standard normal noise, reproducible from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisePrior {
    pub dim: usize,
    pub seed: u64,
}

impl NoisePrior {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    /// A `[dim, len]` noise block from this prior's seed.
    pub fn sample(&self, len: usize) -> Tensor {
        self.sample_with_seed(len, self.seed)
    }

    /// A `[dim, len]` noise block from an explicit seed; per-path seeds are
    /// derived as `seed + path index` so batches parallelize without
    /// changing the draws.
    pub fn sample_with_seed(&self, len: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..self.dim * len)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Tensor::new(vec![self.dim, len], data).expect("finite noise")
    }
}

/// TCN generator emitting one return per time step directly.
#[derive(Debug, Clone)]
pub struct PureTcnGenerator {
    pub tcn: Tcn,
    pub noise_dim: usize,
}

impl PureTcnGenerator {
    pub fn new(spec: TcnSkipSpec, seed: u64) -> Result<Self> {
        if spec.output_channels != 1 {
            return Err(AdError::ShapeMismatch {
                op: "pure_tcn",
                detail: format!("output channels must be 1, got {}", spec.output_channels),
            });
        }
        let noise_dim = spec.input_channels();
        Ok(Self {
            tcn: Tcn::new(spec, seed),
            noise_dim,
        })
    }

    pub fn receptive_field_size(&self) -> usize {
        self.tcn.receptive_field_size()
    }

    /// Generate `len` returns in one TCN pass over noise of length
    /// `len + rfs - 1` (translation equivariance makes this identical to
    /// sliding a length-`rfs` window one step at a time).
    pub fn generate(&self, prior: &NoisePrior, len: usize, path_seed: u64) -> Result<LogReturnSeries> {
        let rfs = self.receptive_field_size();
        let noise = prior.sample_with_seed(len + rfs - 1, path_seed);
        let out = self.tcn.infer(&noise)?;
        Ok(LogReturnSeries::ready(out.data().to_vec()))
    }

    /// Differentiable batch windows for training: one graph pass produces a
    /// `[1, len]` window from the given noise variable.
    pub fn forward_window(&self, g: &mut Graph, params: &[Var], noise: Var) -> Result<Var> {
        tcn_skip_forward(g, &self.tcn.spec, params, noise)
    }
}

/// One simulated stochastic-volatility path with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SvnnPath {
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Stochastic-volatility generator with innovations fixed to the first
/// noise coordinate, hence exactly standard normal.
///
/// The TCN reads the noise window ending one step before the output index
/// and emits two heads: `sigma_t = |h_1|` and `mu_t = h_2`; the return is
/// `sigma_t * eps_t + mu_t` with `eps_t` the current first noise coordinate.
#[derive(Debug, Clone)]
pub struct ConstrainedSvnn {
    pub tcn: Tcn,
    pub noise_dim: usize,
}

impl ConstrainedSvnn {
    pub fn new(spec: TcnSkipSpec, seed: u64) -> Result<Self> {
        if spec.output_channels != 2 {
            return Err(AdError::ShapeMismatch {
                op: "svnn",
                detail: format!(
                    "volatility/drift heads need 2 output channels, got {}",
                    spec.output_channels
                ),
            });
        }
        let noise_dim = spec.input_channels();
        Ok(Self {
            tcn: Tcn::new(spec, seed),
            noise_dim,
        })
    }

    pub fn receptive_field_size(&self) -> usize {
        self.tcn.receptive_field_size()
    }

    /// Run the generator over a `[dim, len + rfs]` noise block yielding
    /// `len` steps: output index `t` consumes noise columns `t..t+rfs` for
    /// the heads (strictly lagged window) and column `t+rfs`, first
    /// coordinate, for the innovation.
    pub fn forward(&self, noise: &Tensor) -> Result<SvnnPath> {
        let rfs = self.receptive_field_size();
        let cols = noise.shape()[1];
        if cols < rfs + 1 {
            return Err(AdError::InputTooShort {
                op: "svnn",
                needed: rfs + 1,
                got: cols,
            });
        }
        let len = cols - rfs;
        // lagged window: drop the last column so head t sees noise up to t-1
        let lagged = {
            let dim = noise.shape()[0];
            let mut data = Vec::with_capacity(dim * (cols - 1));
            for row in 0..dim {
                data.extend_from_slice(&noise.data()[row * cols..row * cols + cols - 1]);
            }
            Tensor::new(vec![dim, cols - 1], data)?
        };
        let heads = self.tcn.infer(&lagged)?;
        debug_assert_eq!(heads.shape(), &[2, len]);
        let sigma: Vec<f64> = heads.data()[..len].iter().map(|h| h.abs()).collect();
        let mu: Vec<f64> = heads.data()[len..].to_vec();
        let epsilon: Vec<f64> = (0..len).map(|t| noise.data()[rfs + t]).collect();
        let returns: Vec<f64> = (0..len).map(|t| sigma[t] * epsilon[t] + mu[t]).collect();
        Ok(SvnnPath {
            sigma,
            mu,
            epsilon,
            returns,
        })
    }

    /// Sample a path of `len` returns from the prior.
    pub fn generate(&self, prior: &NoisePrior, len: usize, path_seed: u64) -> Result<SvnnPath> {
        let rfs = self.receptive_field_size();
        let noise = prior.sample_with_seed(len + rfs, path_seed);
        self.forward(&noise)
    }

    /// Differentiable training window: builds sigma/mu/eps/returns on the
    /// graph from a `[dim, len + rfs]` noise constant and returns the
    /// `[1, len]` return window.
    pub fn forward_window(&self, g: &mut Graph, params: &[Var], noise: &Tensor) -> Result<Var> {
        let rfs = self.receptive_field_size();
        let cols = noise.shape()[1];
        if cols < rfs + 1 {
            return Err(AdError::InputTooShort {
                op: "svnn",
                needed: rfs + 1,
                got: cols,
            });
        }
        let len = cols - rfs;
        let dim = noise.shape()[0];
        let lagged = {
            let mut data = Vec::with_capacity(dim * (cols - 1));
            for row in 0..dim {
                data.extend_from_slice(&noise.data()[row * cols..row * cols + cols - 1]);
            }
            g.constant(Tensor::new(vec![dim, cols - 1], data)?)
        };
        let eps = {
            let data: Vec<f64> = (0..len).map(|t| noise.data()[rfs + t]).collect();
            g.constant(Tensor::new(vec![1, len], data)?)
        };
        let heads = tcn_skip_forward(g, &self.tcn.spec, params, lagged)?;
        let sigma_raw = g.slice_rows(heads, 0, 1)?;
        let sigma = g.abs(sigma_raw)?;
        let mu = g.slice_rows(heads, 1, 1)?;
        let vol_term = g.mul(sigma, eps)?;
        g.add(vol_term, mu)
    }
}

/// How the risk-neutral drift correction `log h(sigma, mu)` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// Gaussian innovations: `log h = mu + sigma^2 / 2` exactly.
    ClosedForm,
    /// Monte Carlo estimate of `E[exp(sigma eps + mu)]` with antithetic
    /// standard normal draws.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Shift returns so the discounted spot path is a martingale:
/// `R^M_t = R_t - log h(sigma_t, mu_t) + r`.
pub fn risk_neutral_correct(
    returns: &[f64],
    sigma: &[f64],
    mu: &[f64],
    rate: f64,
    mode: CorrectionMode,
) -> Result<Vec<f64>> {
    if returns.len() != sigma.len() || returns.len() != mu.len() {
        return Err(AdError::ShapeMismatch {
            op: "risk_neutral",
            detail: format!(
                "returns {}, sigma {}, mu {}",
                returns.len(),
                sigma.len(),
                mu.len()
            ),
        });
    }
    match mode {
        CorrectionMode::ClosedForm => Ok(returns
            .iter()
            .zip(sigma)
            .zip(mu)
            .map(|((r, s), m)| r - (m + 0.5 * s * s) + rate)
            .collect()),
        CorrectionMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(AdError::ShapeMismatch {
                    op: "risk_neutral",
                    detail: "monte_carlo sample budget must be positive".into(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let half = samples.div_ceil(2);
            let eps: Vec<f64> = (0..half).map(|_| StandardNormal.sample(&mut rng)).collect();
            Ok(returns
                .iter()
                .zip(sigma)
                .zip(mu)
                .map(|((r, s), m)| {
                    let mut acc = 0.0;
                    for e in &eps {
                        acc += (s * e + m).exp() + (-s * e + m).exp();
                    }
                    let h = acc / (2 * half) as f64;
                    r - h.ln() + rate
                })
                .collect())
        }
    }
}

/// Log of the closed-form Gaussian correction factor, exposed for tests and
/// diagnostics: `log E[exp(sigma eps + mu)] = mu + sigma^2 / 2`.
pub fn log_correction_closed_form(sigma: f64, mu: f64) -> f64 {
    mu + 0.5 * sigma * sigma
}

/// Starting price and per-step interest rate for spot-path construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotPathConfig {
    pub initial_price: f64,
    pub rate: f64,
}

impl SpotPathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_price > 0.0) || !self.initial_price.is_finite() {
            return Err(AdError::ShapeMismatch {
                op: "spot_path",
                detail: format!("initial price {} must be positive", self.initial_price),
            });
        }
        Ok(())
    }
}

/// Price path `S_t = S_0 * exp(sum of returns up to t)`, including `S_0`;
/// `discounted` divides by `exp(rate * t)`.
pub fn spot_path(returns: &[f64], cfg: &SpotPathConfig, discounted: bool) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(returns.len() + 1);
    let mut log_price = cfg.initial_price.ln();
    out.push(cfg.initial_price);
    for (t, r) in returns.iter().enumerate() {
        log_price += r;
        let discount = if discounted {
            cfg.rate * (t + 1) as f64
        } else {
            0.0
        };
        out.push((log_price - discount).exp());
    }
    Ok(out)
}

/// Generate a batch of paths in parallel; per-path seeds are
/// `prior.seed + index`, so the result is identical to a sequential loop.
pub fn generate_batch_pure(
    gen: &PureTcnGenerator,
    prior: &NoisePrior,
    len: usize,
    paths: usize,
) -> Result<Vec<Vec<f64>>> {
    (0..paths)
        .into_par_iter()
        .map(|i| {
            gen.generate(prior, len, prior.seed.wrapping_add(i as u64))
                .map(|s| s.values)
        })
        .collect()
}

/// Batch version of [`ConstrainedSvnn::generate`].
pub fn generate_batch_svnn(
    gen: &ConstrainedSvnn,
    prior: &NoisePrior,
    len: usize,
    paths: usize,
) -> Result<Vec<SvnnPath>> {
    (0..paths)
        .into_par_iter()
        .map(|i| gen.generate(prior, len, prior.seed.wrapping_add(i as u64)))
        .collect()
}
