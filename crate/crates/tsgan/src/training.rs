//! Adversarial training: the TCN discriminator, the two GAN losses, the R1
//! gradient penalty, the alternating update loop and checkpoint
//! serialization.
//!
//! One outer step runs `k` discriminator ascent steps (each on a fresh real
//! batch from the weighted window sampler and a fresh fake batch) followed
//! by one generator descent step. Fake training windows come from a single
//! TCN pass of output length equal to the discriminator window — by
//! translation equivariance this equals evaluating one window per output
//! step at a fraction of the cost.

use crate::autodiff::{AdError, Graph, Tensor, Var};
use crate::generators::{ConstrainedSvnn, NoisePrior, PureTcnGenerator};
use crate::networks::{tcn_skip_forward, ParamSet, Tcn, TcnSkipSpec};
use crate::optim::Adam;
use crate::preprocessing::{PipelineState, WeightedWindowSampler};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Floor for the argument of every loss logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("dataset provides {windows} windows but the batch size is {batch}")]
    DatasetTooSmall { windows: usize, batch: usize },
    #[error("non-finite loss at step {step}; parameters restored to the last good step {last_good}")]
    NanAbort { step: usize, last_good: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("preprocessing: {0}")]
    Prep(#[from] crate::preprocessing::PrepError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// TCN discriminator: one input channel, one output channel, sigmoid head.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub tcn: Tcn,
}

impl Discriminator {
    pub fn new(spec: TcnSkipSpec, seed: u64) -> Result<Self> {
        if spec.input_channels() != 1 || spec.output_channels != 1 {
            return Err(TrainError::InvalidConfig(format!(
                "discriminator needs 1 input and 1 output channel, got {} and {}",
                spec.input_channels(),
                spec.output_channels
            )));
        }
        Ok(Self {
            tcn: Tcn::new(spec, seed),
        })
    }

    /// Window length the discriminator scores: its receptive field.
    pub fn window_length(&self) -> usize {
        self.tcn.receptive_field_size()
    }

    /// Pre-sigmoid score of a `[1, window_length]` window on the graph.
    pub fn forward_logit(&self, g: &mut Graph, params: &[Var], window: Var) -> Result<Var> {
        let t = g.value(window).shape()[1];
        if t != self.window_length() {
            return Err(TrainError::InvalidConfig(format!(
                "window length {} does not match the discriminator receptive field {}",
                t,
                self.window_length()
            )));
        }
        Ok(tcn_skip_forward(g, &self.tcn.spec, params, window)?)
    }

    /// Classification probability in (0, 1) for a plain window.
    pub fn classify(&self, window: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let params = self.tcn.params.bind(&mut g, false);
        let w = g.constant(window.clone());
        let logit = self.forward_logit(&mut g, &params, w)?;
        let prob = g.sigmoid(logit)?;
        Ok(g.value(prob).item())
    }
}

/// Which objective the generator descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLossForm {
    /// Minimize `-mean log d(fake)` (the non-saturating form).
    #[default]
    NonSaturating,
    /// Descend `+mean log d(fake)` exactly as the alternation pseudocode
    /// writes it; exposed for comparison.
    Literal,
}

/// Hyperparameters of the alternating optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub batch_size: usize,
    /// Discriminator ascent steps per generator step.
    pub disc_steps_per_gen: usize,
    pub gen_learning_rate: f64,
    pub disc_learning_rate: f64,
    pub total_gen_updates: usize,
    pub seed: u64,
    pub r1_gamma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub generator_loss: GeneratorLossForm,
    /// Checkpoint interval in generator updates; 0 disables periodic
    /// checkpoints.
    pub checkpoint_every: usize,
    /// Metric snapshot interval in generator updates; 0 disables.
    pub snapshot_every: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            disc_steps_per_gen: 1,
            gen_learning_rate: 2e-4,
            disc_learning_rate: 2e-4,
            total_gen_updates: 1000,
            seed: 0,
            r1_gamma: 1.0,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            adam_epsilon: 1e-8,
            generator_loss: GeneratorLossForm::NonSaturating,
            checkpoint_every: 0,
            snapshot_every: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.disc_steps_per_gen == 0 {
            return Err(TrainError::InvalidConfig(
                "batch size and discriminator steps must be positive".into(),
            ));
        }
        if self.gen_learning_rate <= 0.0 || self.disc_learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning rates must be positive".into()));
        }
        if self.r1_gamma < 0.0 {
            return Err(TrainError::InvalidConfig("r1 gamma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-step training record; every stored loss is finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub r1_penalty: f64,
    pub disc_grad_norm: f64,
    pub gen_grad_norm: f64,
}

/// Append-only log of one training run. Wall-clock time is kept out of the
/// per-step records so identical seeds reproduce the log byte for byte; the
/// total is reported separately.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    /// (generator step, EMD between a generated batch and a real
    /// subsample) — cheap convergence snapshots.
    pub snapshots: Vec<(usize, f64)>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,disc_loss,gen_loss,r1_penalty,disc_grad_norm,gen_grad_norm\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.step, s.disc_loss, s.gen_loss, s.r1_penalty, s.disc_grad_norm, s.gen_grad_norm
            ));
        }
        out
    }
}

/// Either generator architecture behind one training interface.
#[derive(Debug, Clone)]
pub enum Generator {
    PureTcn(PureTcnGenerator),
    Svnn(ConstrainedSvnn),
}

impl Generator {
    pub fn kind(&self) -> &'static str {
        match self {
            Generator::PureTcn(_) => "pure_tcn",
            Generator::Svnn(_) => "c_svnn",
        }
    }

    pub fn tcn(&self) -> &Tcn {
        match self {
            Generator::PureTcn(g) => &g.tcn,
            Generator::Svnn(g) => &g.tcn,
        }
    }

    fn tcn_mut(&mut self) -> &mut Tcn {
        match self {
            Generator::PureTcn(g) => &mut g.tcn,
            Generator::Svnn(g) => &mut g.tcn,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.tcn().params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.tcn_mut().params
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            Generator::PureTcn(g) => g.noise_dim,
            Generator::Svnn(g) => g.noise_dim,
        }
    }

    pub fn receptive_field_size(&self) -> usize {
        self.tcn().receptive_field_size()
    }

    /// Noise columns needed to emit a window of the given length.
    pub fn noise_cols(&self, window_len: usize) -> usize {
        match self {
            Generator::PureTcn(_) => window_len + self.receptive_field_size() - 1,
            Generator::Svnn(_) => window_len + self.receptive_field_size(),
        }
    }

    /// Differentiable `[1, window_len]` fake window from a noise block.
    pub fn forward_window(&self, g: &mut Graph, params: &[Var], noise: &Tensor) -> Result<Var> {
        match self {
            Generator::PureTcn(gen) => {
                let noise_var = g.constant(noise.clone());
                Ok(gen.forward_window(g, params, noise_var)?)
            }
            Generator::Svnn(gen) => Ok(gen.forward_window(g, params, noise)?),
        }
    }

    /// Plain sampled return series of the given length.
    pub fn generate_series(&self, prior: &NoisePrior, len: usize, path_seed: u64) -> Result<Vec<f64>> {
        match self {
            Generator::PureTcn(g) => Ok(g.generate(prior, len, path_seed)?.values),
            Generator::Svnn(g) => Ok(g.generate(prior, len, path_seed)?.returns),
        }
    }
}

// ── losses ──────────────────────────────────────────────────────────────

fn clamped_ln(g: &mut Graph, x: Var) -> Result<Var> {
    let c = g.clamp_min(x, LOG_CLAMP)?;
    Ok(g.ln(c)?)
}

/// Discriminator objective to MAXIMIZE:
/// `mean(log d(real)) + mean(log(1 - d(fake)))`, log arguments clamped.
pub fn loss_discriminator(g: &mut Graph, real_logits: &[Var], fake_logits: &[Var]) -> Result<Var> {
    debug_assert_eq!(real_logits.len(), fake_logits.len());
    let mut terms: Option<Var> = None;
    for (&r, &f) in real_logits.iter().zip(fake_logits) {
        let pr = g.sigmoid(r)?;
        let log_pr = clamped_ln(g, pr)?;
        let pf = g.sigmoid(f)?;
        let one = g.scalar_const(1.0);
        // logits come out of the TCN as [1, 1]; lift the constant to match
        let one = if g.value(pf).shape() != g.value(one).shape() {
            let shape = g.value(pf).shape().to_vec();
            let n = g.value(pf).len();
            g.constant(Tensor::new(shape, vec![1.0; n]).expect("ones"))
        } else {
            one
        };
        let q = g.sub(one, pf)?;
        let log_q = clamped_ln(g, q)?;
        let pair = g.add(log_pr, log_q)?;
        let pair = g.sum(pair)?;
        terms = Some(match terms {
            Some(acc) => g.add(acc, pair)?,
            None => pair,
        });
    }
    let total = terms.expect("non-empty batch");
    Ok(g.scale(total, 1.0 / real_logits.len() as f64)?)
}

/// Generator objective to MINIMIZE.
pub fn loss_generator(g: &mut Graph, fake_logits: &[Var], form: GeneratorLossForm) -> Result<Var> {
    let mut terms: Option<Var> = None;
    for &f in fake_logits {
        let pf = g.sigmoid(f)?;
        let log_pf = clamped_ln(g, pf)?;
        let log_pf = g.sum(log_pf)?;
        terms = Some(match terms {
            Some(acc) => g.add(acc, log_pf)?,
            None => log_pf,
        });
    }
    let total = terms.expect("non-empty batch");
    let factor = match form {
        GeneratorLossForm::NonSaturating => -1.0,
        GeneratorLossForm::Literal => 1.0,
    };
    Ok(g.scale(total, factor / fake_logits.len() as f64)?)
}

/// R1 gradient penalty `(gamma / 2M) * sum_i ||grad_x logit(x_i)||^2`.
///
/// The returned variable carries that value, and its reverse pass yields
/// the exact parameter gradient: the input gradients are computed by one
/// backward pass, re-entered as constant directions, and the directional
/// derivative is rebuilt in forward mode so a second reverse pass reaches
/// the parameters.
pub fn r1_penalty(g: &mut Graph, real_windows: &[Var], real_logits: &[Var], gamma: f64) -> Result<Var> {
    debug_assert_eq!(real_windows.len(), real_logits.len());
    let m = real_windows.len() as f64;
    // one backward pass from the summed logits gives every input gradient
    let mut total: Option<Var> = None;
    for &l in real_logits {
        let s = g.sum(l)?;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    let total = total.expect("non-empty batch");
    g.backward(total)?;
    let mut grads = Vec::with_capacity(real_windows.len());
    let mut norm_sq_sum = 0.0;
    for &w in real_windows {
        let shape = g.value(w).shape().to_vec();
        let grad = g
            .grad(w)
            .ok_or_else(|| TrainError::InvalidConfig("real window is not a gradient leaf".into()))?
            .to_vec();
        norm_sq_sum += grad.iter().map(|v| v * v).sum::<f64>();
        grads.push(Tensor::new(shape, grad)?);
    }
    g.zero_grads();
    // directional derivative sum_i <grad_i, grad_x logit_i> as a graph value
    let seeds: Vec<(Var, Var)> = real_windows
        .iter()
        .zip(grads)
        .map(|(&w, dir)| (w, g.constant(dir)))
        .collect();
    let phi = g.jvp(total, &seeds)?;
    // phi's value is sum ||grad||^2 and its gradient is half the penalty's;
    // scale for the gradient, then shift by a constant to fix the value
    let scaled = g.scale(phi, gamma / m)?;
    let correction = g.scalar_const(-gamma / (2.0 * m) * norm_sq_sum);
    Ok(g.add(scaled, correction)?)
}

// ── the training loop ───────────────────────────────────────────────────

/// Checkpoint trigger passed to the periodic sink during training.
pub struct CheckpointEvent<'a> {
    pub step: usize,
    pub generator: &'a Generator,
    pub discriminator: &'a Discriminator,
}

/// Alternating GAN optimization over a preprocessed return series.
///
/// Real batches are drawn through the bias-corrected window sampler, fake
/// batches from fresh noise. Deterministic given the config seed. On a
/// non-finite loss the parameters revert to the last finite step and
/// [`TrainError::NanAbort`] is returned alongside the sink having seen that
/// state.
pub fn train(
    gen: &mut Generator,
    disc: &mut Discriminator,
    dataset: &[f64],
    cfg: &GanConfig,
    mut checkpoint_sink: impl FnMut(CheckpointEvent) -> Result<()>,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let window = disc.window_length();
    let sampler = WeightedWindowSampler::new(dataset.len(), window)?;
    if sampler.num_windows() < cfg.batch_size {
        return Err(TrainError::DatasetTooSmall {
            windows: sampler.num_windows(),
            batch: cfg.batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam_d = Adam::new(
        cfg.disc_learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_epsilon,
        &disc.tcn.params,
    );
    let mut adam_g = Adam::new(
        cfg.gen_learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_epsilon,
        gen.params(),
    );
    let mut log = TrainingLog::default();
    let mut last_good: Option<(ParamSet, ParamSet, usize)> = None;

    for step in 1..=cfg.total_gen_updates {
        let mut disc_loss = f64::NAN;
        let mut r1_value = 0.0;
        let mut disc_grad_norm = 0.0;
        let outcome: Result<f64> = (|| {
            for _ in 0..cfg.disc_steps_per_gen {
                let (loss, r1, norm) = discriminator_step(
                    gen,
                    disc,
                    dataset,
                    &sampler,
                    cfg,
                    &mut rng,
                    &mut adam_d,
                )?;
                disc_loss = loss;
                r1_value = r1;
                disc_grad_norm = norm;
            }
            let (gen_loss, gen_grad_norm) = generator_step(gen, disc, cfg, &mut rng, &mut adam_g)?;
            log.steps.push(StepRecord {
                step,
                disc_loss,
                gen_loss,
                r1_penalty: r1_value,
                disc_grad_norm,
                gen_grad_norm,
            });
            Ok(gen_loss)
        })();

        if let Err(err) = outcome {
            let last_good_step = match &last_good {
                Some((gp, dp, s)) => {
                    *gen.params_mut() = gp.clone();
                    disc.tcn.params = dp.clone();
                    *s
                }
                None => 0,
            };
            // surface NaNs as an abort carrying the restored step; other
            // errors pass through
            return match err {
                TrainError::Ad(AdError::NonFinite { .. })
                | TrainError::Ad(AdError::NonFiniteAdjoint(_)) => Err(TrainError::NanAbort {
                    step,
                    last_good: last_good_step,
                }),
                other => Err(other),
            };
        }
        last_good = Some((gen.params().clone(), disc.tcn.params.clone(), step));

        if cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
            let emd = convergence_snapshot(gen, dataset, cfg, step)?;
            log.snapshots.push((step, emd));
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            checkpoint_sink(CheckpointEvent {
                step,
                generator: gen,
                discriminator: disc,
            })?;
        }
    }
    Ok(log)
}

fn discriminator_step(
    gen: &Generator,
    disc: &mut Discriminator,
    dataset: &[f64],
    sampler: &WeightedWindowSampler,
    cfg: &GanConfig,
    rng: &mut ChaCha8Rng,
    adam: &mut Adam,
) -> Result<(f64, f64, f64)> {
    let window = disc.window_length();
    let mut g = Graph::new();
    let disc_vars = disc.tcn.params.bind(&mut g, true);
    let gen_vars = gen.params().bind(&mut g, false);

    let track_inputs = cfg.r1_gamma > 0.0;
    let mut real_windows = Vec::with_capacity(cfg.batch_size);
    let mut real_logits = Vec::with_capacity(cfg.batch_size);
    let mut fake_logits = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let j = sampler.draw(rng);
        let w = Tensor::new(vec![1, window], dataset[j..j + window].to_vec())?;
        let wv = if track_inputs { g.leaf(w) } else { g.constant(w) };
        real_windows.push(wv);
        real_logits.push(disc.forward_logit(&mut g, &disc_vars, wv)?);
    }
    for _ in 0..cfg.batch_size {
        let noise = sample_noise(gen, window, rng);
        let fake = gen.forward_window(&mut g, &gen_vars, &noise)?;
        fake_logits.push(disc.forward_logit(&mut g, &disc_vars, fake)?);
    }

    let gain = loss_discriminator(&mut g, &real_logits, &fake_logits)?;
    let disc_loss = g.value(gain).item();
    // maximize gain minus penalty => minimize penalty minus gain
    let (objective, r1_value) = if track_inputs {
        let penalty = r1_penalty(&mut g, &real_windows, &real_logits, cfg.r1_gamma)?;
        let value = g.value(penalty).item();
        (g.sub(penalty, gain)?, value)
    } else {
        (g.scale(gain, -1.0)?, 0.0)
    };
    g.backward(objective)?;
    let grads = collect_grads(&g, &disc_vars, &disc.tcn.params);
    let norm = grad_norm(&grads);
    adam.step(&mut disc.tcn.params, &grads);
    Ok((disc_loss, r1_value, norm))
}

fn generator_step(
    gen: &mut Generator,
    disc: &Discriminator,
    cfg: &GanConfig,
    rng: &mut ChaCha8Rng,
    adam: &mut Adam,
) -> Result<(f64, f64)> {
    let window = disc.window_length();
    let mut g = Graph::new();
    let gen_vars = gen.params().bind(&mut g, true);
    let disc_vars = disc.tcn.params.bind(&mut g, false);
    let mut fake_logits = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let noise = sample_noise(gen, window, rng);
        let fake = gen.forward_window(&mut g, &gen_vars, &noise)?;
        fake_logits.push(disc.forward_logit(&mut g, &disc_vars, fake)?);
    }
    let loss = loss_generator(&mut g, &fake_logits, cfg.generator_loss)?;
    let loss_value = g.value(loss).item();
    g.backward(loss)?;
    let grads = collect_grads(&g, &gen_vars, gen.params());
    let norm = grad_norm(&grads);
    adam.step(gen.params_mut(), &grads);
    Ok((loss_value, norm))
}

fn sample_noise(gen: &Generator, window: usize, rng: &mut ChaCha8Rng) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let cols = gen.noise_cols(window);
    let dim = gen.noise_dim();
    let data: Vec<f64> = (0..dim * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::new(vec![dim, cols], data).expect("finite noise")
}

fn collect_grads(g: &Graph, vars: &[Var], params: &ParamSet) -> Vec<Vec<f64>> {
    vars.iter()
        .enumerate()
        .map(|(i, v)| {
            g.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; params.get(i).value.len()])
        })
        .collect()
}

fn grad_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// EMD between freshly generated returns and a fixed real subsample; a
/// cheap convergence indicator recorded in the log.
fn convergence_snapshot(gen: &Generator, dataset: &[f64], cfg: &GanConfig, step: usize) -> Result<f64> {
    let prior = NoisePrior::new(gen.noise_dim(), cfg.seed ^ 0x5eed_0000 ^ step as u64);
    let sample_len = dataset.len().min(2048);
    let generated = gen.generate_series(&prior, sample_len, prior.seed)?;
    let real = &dataset[..sample_len];
    crate::evaluation::emd_1d(real, &generated)
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))
}

// ── checkpoints ─────────────────────────────────────────────────────────

const CHECKPOINT_MAGIC: &[u8; 8] = b"TSGANCK1";

/// One tensor's placement inside the binary section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset relative to the start of the binary section.
    pub offset: u64,
    pub values: u64,
}

/// JSON header of a checkpoint file; the binary section holds every
/// parameter tensor as little-endian f64 in manifest order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: String,
    pub noise_dim: usize,
    pub generator_spec: TcnSkipSpec,
    pub discriminator_spec: Option<TcnSkipSpec>,
    pub gan_config: Option<GanConfig>,
    pub pipeline: Option<PipelineState>,
    pub step: u64,
    /// SHA-256 over the architecture JSON; guards against loading weights
    /// into a mismatched network.
    pub architecture_hash: String,
    pub manifest: Vec<ManifestEntry>,
}

/// Everything stored in a checkpoint, with tensors reattached.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub generator_params: ParamSet,
    pub discriminator_params: Option<ParamSet>,
}

pub fn architecture_hash(gen_spec: &TcnSkipSpec, disc_spec: Option<&TcnSkipSpec>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(gen_spec).expect("spec serializes"));
    if let Some(d) = disc_spec {
        hasher.update(serde_json::to_vec(d).expect("spec serializes"));
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write a checkpoint: magic, header length, JSON header, then the raw
/// little-endian f64 payload (generator tensors first, then discriminator).
pub fn save_checkpoint(
    path: &Path,
    generator: &Generator,
    discriminator: Option<&Discriminator>,
    gan_config: Option<&GanConfig>,
    pipeline: Option<&PipelineState>,
    step: u64,
) -> Result<()> {
    let mut manifest = Vec::new();
    let mut offset = 0u64;
    let mut payload: Vec<u8> = Vec::new();
    let mut append = |prefix: &str, params: &ParamSet| {
        for p in params.iter() {
            manifest.push(ManifestEntry {
                name: format!("{prefix}.{}", p.name),
                shape: p.value.shape().to_vec(),
                offset,
                values: p.value.len() as u64,
            });
            for v in p.value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            offset += 8 * p.value.len() as u64;
        }
    };
    append("generator", generator.params());
    if let Some(d) = discriminator {
        append("discriminator", &d.tcn.params);
    }
    let header = CheckpointHeader {
        version: 1,
        model: generator.kind().to_string(),
        noise_dim: generator.noise_dim(),
        generator_spec: generator.tcn().spec.clone(),
        discriminator_spec: discriminator.map(|d| d.tcn.spec.clone()),
        gan_config: gan_config.cloned(),
        pipeline: pipeline.cloned(),
        step,
        architecture_hash: architecture_hash(
            &generator.tcn().spec,
            discriminator.map(|d| &d.tcn.spec),
        ),
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut file = std::fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    file.write_all(&payload)?;
    Ok(())
}

/// Read a checkpoint and verify magic, manifest geometry and the
/// architecture hash.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TrainError::Checkpoint("bad magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| TrainError::Checkpoint(format!("header parse: {e}")))?;
    let expected_hash = architecture_hash(&header.generator_spec, header.discriminator_spec.as_ref());
    if expected_hash != header.architecture_hash {
        return Err(TrainError::Checkpoint(
            "architecture hash does not match the stored specs".into(),
        ));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;

    let read_tensor = |entry: &ManifestEntry| -> Result<Tensor> {
        let start = entry.offset as usize;
        let end = start + 8 * entry.values as usize;
        if end > payload.len() {
            return Err(TrainError::Checkpoint(format!(
                "manifest entry {} overruns the payload",
                entry.name
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::new(entry.shape.clone(), data)
            .map_err(|e| TrainError::Checkpoint(format!("tensor {}: {e}", entry.name)))
    };

    let mut generator_params = ParamSet::new();
    let mut discriminator_params = ParamSet::new();
    for entry in &header.manifest {
        let tensor = read_tensor(entry)?;
        if let Some(name) = entry.name.strip_prefix("generator.") {
            generator_params.push(name, tensor);
        } else if let Some(name) = entry.name.strip_prefix("discriminator.") {
            discriminator_params.push(name, tensor);
        } else {
            return Err(TrainError::Checkpoint(format!(
                "manifest entry {} has no known prefix",
                entry.name
            )));
        }
    }
    let expected_gen = crate::networks::init_tcn_params(&header.generator_spec, 0);
    if expected_gen.len() != generator_params.len() {
        return Err(TrainError::Checkpoint(format!(
            "generator has {} tensors, checkpoint stores {}",
            expected_gen.len(),
            generator_params.len()
        )));
    }
    for (e, got) in expected_gen.iter().zip(generator_params.iter()) {
        if e.name != got.name || e.value.shape() != got.value.shape() {
            return Err(TrainError::Checkpoint(format!(
                "generator tensor mismatch at {}: expected {:?}, got {} {:?}",
                e.name,
                e.value.shape(),
                got.name,
                got.value.shape()
            )));
        }
    }
    Ok(Checkpoint {
        header,
        generator_params,
        discriminator_params: if discriminator_params.is_empty() {
            None
        } else {
            Some(discriminator_params)
        },
    })
}

/// Rebuild a generator from a checkpoint.
pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<Generator> {
    let spec = ckpt.header.generator_spec.clone();
    let mut gen = match ckpt.header.model.as_str() {
        "pure_tcn" => Generator::PureTcn(PureTcnGenerator::new(spec, 0).map_err(TrainError::Ad)?),
        "c_svnn" => Generator::Svnn(ConstrainedSvnn::new(spec, 0).map_err(TrainError::Ad)?),
        other => {
            return Err(TrainError::Checkpoint(format!("unknown model kind {other:?}")));
        }
    };
    *gen.params_mut() = ckpt.generator_params.clone();
    Ok(gen)
}
