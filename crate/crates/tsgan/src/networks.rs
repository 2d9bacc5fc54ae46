//! Network architecture layer: MLPs, temporal blocks, TCNs with skip
//! connections and the receptive-field calculus.
//!
//! A temporal block is two dilated causal convolutions with PReLU
//! activations sharing kernel size and dilation; its time shrinkage is
//! `2*D*(K-1)`. A TCN with skip connections runs blocks in sequence, taps a
//! learnable 1x1 projection off every block output (cropped to the final
//! length), sums the taps and maps the sum through an output 1x1
//! convolution. The receptive field size is `1 + sum(shrinkage)`.

use crate::autodiff::{AdError, Graph, Result, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    PRelu,
    Relu,
    Tanh,
}

/// Multilayer perceptron: `dims` lists input, hidden and output widths, so
/// `dims.len() >= 3` means at least one hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn hidden_layers(&self) -> usize {
        self.dims.len().saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 || self.dims.iter().any(|&d| d == 0) {
            return Err(AdError::ShapeMismatch {
                op: "mlp_spec",
                detail: format!("dims {:?} need at least one hidden layer, all positive", self.dims),
            });
        }
        Ok(())
    }
}

/// Arguments quintuple `(N_I, N_H, N_O, K, D)` of a temporal block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalBlockSpec {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub output_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
}

impl TemporalBlockSpec {
    /// Time steps consumed by the block: two convolutions of `D*(K-1)` each.
    pub fn time_shrinkage(&self) -> usize {
        2 * self.dilation * (self.kernel_size - 1)
    }
}

/// TCN with skip connections: ordered temporal blocks, the skip channel
/// width and the output 1x1 convolution width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcnSkipSpec {
    pub blocks: Vec<TemporalBlockSpec>,
    pub skip_channels: usize,
    pub output_channels: usize,
}

impl TcnSkipSpec {
    /// Number of past sequence elements one output step depends on.
    pub fn receptive_field_size(&self) -> usize {
        1 + self.blocks.iter().map(|b| b.time_shrinkage()).sum::<usize>()
    }

    pub fn input_channels(&self) -> usize {
        self.blocks.first().map(|b| b.input_channels).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(AdError::ShapeMismatch {
                op: "tcn_spec",
                detail: "no temporal blocks".into(),
            });
        }
        for b in &self.blocks {
            if b.input_channels == 0
                || b.hidden_channels == 0
                || b.output_channels == 0
                || b.kernel_size == 0
                || b.dilation == 0
            {
                return Err(AdError::ShapeMismatch {
                    op: "tcn_spec",
                    detail: format!("degenerate block {:?}", b),
                });
            }
        }
        for pair in self.blocks.windows(2) {
            if pair[0].output_channels != pair[1].input_channels {
                return Err(AdError::ShapeMismatch {
                    op: "tcn_spec",
                    detail: format!(
                        "block output {} does not feed next input {}",
                        pair[0].output_channels, pair[1].input_channels
                    ),
                });
            }
        }
        if self.skip_channels == 0 || self.output_channels == 0 {
            return Err(AdError::ShapeMismatch {
                op: "tcn_spec",
                detail: "skip/output width must be positive".into(),
            });
        }
        Ok(())
    }

    /// The reported benchmark topology: a kernel-1 feature lift followed by
    /// kernel-2 blocks with dilations 1, 2, 4, ..., 32, which yields a
    /// receptive field of 127.
    pub fn reported(input_channels: usize, hidden_channels: usize, output_channels: usize) -> Self {
        let mut blocks = vec![TemporalBlockSpec {
            input_channels,
            hidden_channels,
            output_channels: hidden_channels,
            kernel_size: 1,
            dilation: 1,
        }];
        for exp in 0..6 {
            blocks.push(TemporalBlockSpec {
                input_channels: hidden_channels,
                hidden_channels,
                output_channels: hidden_channels,
                kernel_size: 2,
                dilation: 1 << exp,
            });
        }
        Self {
            blocks,
            skip_channels: hidden_channels,
            output_channels,
        }
    }
}

/// Receptive field of a plain stack of single causal convolutions (one per
/// layer) with a common kernel size, e.g. dilations `1, 2, 4, 8`.
pub fn vanilla_rfs(kernel_size: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| d * (kernel_size - 1)).sum::<usize>()
}

// ── architecture JSON (module name + arguments rows) ───────────────────

#[derive(Serialize, Deserialize)]
struct ModuleRow {
    module: String,
    arguments: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TcnSkipSpecRepr {
    modules: Vec<ModuleRow>,
    skip_channels: usize,
}

impl Serialize for TcnSkipSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut modules: Vec<ModuleRow> = self
            .blocks
            .iter()
            .map(|b| ModuleRow {
                module: "temporal block".into(),
                arguments: vec![
                    b.input_channels,
                    b.hidden_channels,
                    b.output_channels,
                    b.kernel_size,
                    b.dilation,
                ],
            })
            .collect();
        modules.push(ModuleRow {
            module: "1x1 convolution".into(),
            arguments: vec![self.skip_channels, self.output_channels, 1, 1],
        });
        TcnSkipSpecRepr {
            modules,
            skip_channels: self.skip_channels,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TcnSkipSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let repr = TcnSkipSpecRepr::deserialize(deserializer)?;
        let mut blocks = Vec::new();
        let mut output_channels = None;
        for row in &repr.modules {
            match row.module.as_str() {
                "temporal block" => {
                    if row.arguments.len() != 5 {
                        return Err(D::Error::custom("temporal block expects 5 arguments"));
                    }
                    blocks.push(TemporalBlockSpec {
                        input_channels: row.arguments[0],
                        hidden_channels: row.arguments[1],
                        output_channels: row.arguments[2],
                        kernel_size: row.arguments[3],
                        dilation: row.arguments[4],
                    });
                }
                "1x1 convolution" => {
                    if row.arguments.len() != 4 {
                        return Err(D::Error::custom("1x1 convolution expects 4 arguments"));
                    }
                    output_channels = Some(row.arguments[1]);
                }
                other => return Err(D::Error::custom(format!("unknown module {other:?}"))),
            }
        }
        let output_channels =
            output_channels.ok_or_else(|| D::Error::custom("missing 1x1 convolution row"))?;
        Ok(TcnSkipSpec {
            blocks,
            skip_channels: repr.skip_channels,
            output_channels,
        })
    }
}

// ── parameters ──────────────────────────────────────────────────────────

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
}

/// Ordered set of parameter tensors; declaration order is the canonical
/// order for binding, optimizer state and checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.push(ParamTensor {
            name: name.into(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn get(&self, idx: usize) -> &ParamTensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut ParamTensor {
        &mut self.tensors[idx]
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Insert every tensor into the graph in declaration order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if requires_grad {
                    g.leaf(t.value.clone())
                } else {
                    g.constant(t.value.clone())
                }
            })
            .collect()
    }
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let half_width = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect();
    Tensor::new(shape, data).expect("finite init")
}

/// Weights from a zero-mean uniform with half-width `1/sqrt(fan_in)`,
/// zero biases, PReLU slopes 0.25.
pub fn init_tcn_params(spec: &TcnSkipSpec, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (i, b) in spec.blocks.iter().enumerate() {
        let fan1 = b.kernel_size * b.input_channels;
        let fan2 = b.kernel_size * b.hidden_channels;
        params.push(
            format!("block{i}.conv1.weight"),
            uniform_fan_in(&mut rng, vec![b.kernel_size, b.input_channels, b.hidden_channels], fan1),
        );
        params.push(format!("block{i}.conv1.bias"), Tensor::zeros(vec![b.hidden_channels]));
        params.push(format!("block{i}.prelu1.slope"), Tensor::scalar(0.25));
        params.push(
            format!("block{i}.conv2.weight"),
            uniform_fan_in(&mut rng, vec![b.kernel_size, b.hidden_channels, b.output_channels], fan2),
        );
        params.push(format!("block{i}.conv2.bias"), Tensor::zeros(vec![b.output_channels]));
        params.push(format!("block{i}.prelu2.slope"), Tensor::scalar(0.25));
        params.push(
            format!("block{i}.skip.weight"),
            uniform_fan_in(&mut rng, vec![1, b.output_channels, spec.skip_channels], b.output_channels),
        );
        params.push(format!("block{i}.skip.bias"), Tensor::zeros(vec![spec.skip_channels]));
    }
    params.push(
        "out.weight",
        uniform_fan_in(&mut rng, vec![1, spec.skip_channels, spec.output_channels], spec.skip_channels),
    );
    params.push("out.bias", Tensor::zeros(vec![spec.output_channels]));
    params
}

pub fn init_mlp_params(spec: &MlpSpec, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let layers = spec.dims.len() - 1;
    for l in 0..layers {
        let (n_in, n_out) = (spec.dims[l], spec.dims[l + 1]);
        params.push(
            format!("layer{l}.weight"),
            uniform_fan_in(&mut rng, vec![n_out, n_in], n_in),
        );
        params.push(format!("layer{l}.bias"), Tensor::zeros(vec![n_out]));
        let is_hidden = l + 1 < layers;
        if is_hidden && spec.activation == Activation::PRelu {
            params.push(format!("layer{l}.prelu.slope"), Tensor::scalar(0.25));
        }
    }
    params
}

// ── forwards ────────────────────────────────────────────────────────────

/// Composition of affine layers with activations; the output layer is
/// affine with no activation. `params` come from [`init_mlp_params`] order.
pub fn mlp_forward(g: &mut Graph, spec: &MlpSpec, params: &[Var], x: Var) -> Result<Var> {
    spec.validate()?;
    let layers = spec.dims.len() - 1;
    let mut h = x;
    let mut p = 0;
    for l in 0..layers {
        let w = params[p];
        let b = params[p + 1];
        p += 2;
        h = g.affine(h, w, b)?;
        let is_hidden = l + 1 < layers;
        if is_hidden {
            h = match spec.activation {
                Activation::PRelu => {
                    let slope = params[p];
                    p += 1;
                    g.prelu(h, slope)?
                }
                Activation::Relu => g.relu(h)?,
                Activation::Tanh => g.tanh(h)?,
            };
        }
    }
    Ok(h)
}

/// Parameter slots consumed by one block in binding order:
/// conv1 weight/bias, prelu1 slope, conv2 weight/bias, prelu2 slope,
/// skip weight/bias.
const BLOCK_PARAMS: usize = 8;

/// phi2(w2(phi1(w1(X)))): two equal-(K, D) causal convolutions with PReLUs.
pub fn temporal_block_forward(
    g: &mut Graph,
    spec: &TemporalBlockSpec,
    params: &[Var],
    x: Var,
) -> Result<Var> {
    let w1 = params[0];
    let b1 = params[1];
    let a1 = params[2];
    let w2 = params[3];
    let b2 = params[4];
    let a2 = params[5];
    let h = g.conv(x, w1, Some(b1), spec.dilation)?;
    let h = g.prelu(h, a1)?;
    let h = g.conv(h, w2, Some(b2), spec.dilation)?;
    g.prelu(h, a2)
}

/// Full TCN with skip connections. `params` follow [`init_tcn_params`]
/// order. Input `[N_0, T_0]` with `T_0 >= rfs`, output
/// `[N_out, T_0 - rfs + 1]`.
pub fn tcn_skip_forward(g: &mut Graph, spec: &TcnSkipSpec, params: &[Var], x: Var) -> Result<Var> {
    spec.validate()?;
    let rfs = spec.receptive_field_size();
    let t0 = g.value(x).shape()[1];
    if t0 < rfs {
        return Err(AdError::InputTooShort {
            op: "tcn_skip",
            needed: rfs,
            got: t0,
        });
    }
    let t_final = t0 - (rfs - 1);
    let mut h = x;
    let mut skip_sum: Option<Var> = None;
    for (i, block) in spec.blocks.iter().enumerate() {
        let base = i * BLOCK_PARAMS;
        h = temporal_block_forward(g, block, &params[base..base + 6], h)?;
        let skip_w = params[base + 6];
        let skip_b = params[base + 7];
        let tap = g.conv(h, skip_w, Some(skip_b), 1)?;
        let tap = g.crop_tail(tap, t_final)?;
        skip_sum = Some(match skip_sum {
            Some(acc) => g.add(acc, tap)?,
            None => tap,
        });
    }
    let skips = skip_sum.expect("validated non-empty blocks");
    let out_w = params[spec.blocks.len() * BLOCK_PARAMS];
    let out_b = params[spec.blocks.len() * BLOCK_PARAMS + 1];
    g.conv(skips, out_w, Some(out_b), 1)
}

/// A TCN bundled with its parameters.
#[derive(Debug, Clone)]
pub struct Tcn {
    pub spec: TcnSkipSpec,
    pub params: ParamSet,
}

impl Tcn {
    pub fn new(spec: TcnSkipSpec, seed: u64) -> Self {
        let params = init_tcn_params(&spec, seed);
        Self { spec, params }
    }

    pub fn receptive_field_size(&self) -> usize {
        self.spec.receptive_field_size()
    }

    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        tcn_skip_forward(g, &self.spec, params, x)
    }

    /// Plain evaluation without gradient tracking.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let params = self.params.bind(&mut g, false);
        let y = tcn_skip_forward(&mut g, &self.spec, &params, xv)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_spec(n_in: usize, n_out: usize) -> TcnSkipSpec {
        TcnSkipSpec {
            blocks: vec![
                TemporalBlockSpec {
                    input_channels: n_in,
                    hidden_channels: 3,
                    output_channels: 3,
                    kernel_size: 1,
                    dilation: 1,
                },
                TemporalBlockSpec {
                    input_channels: 3,
                    hidden_channels: 3,
                    output_channels: 3,
                    kernel_size: 2,
                    dilation: 1,
                },
                TemporalBlockSpec {
                    input_channels: 3,
                    hidden_channels: 3,
                    output_channels: 3,
                    kernel_size: 2,
                    dilation: 2,
                },
            ],
            skip_channels: 3,
            output_channels: n_out,
        }
    }

    #[test]
    fn rfs_of_reported_architecture_is_127() {
        let spec = TcnSkipSpec::reported(3, 80, 1);
        assert_eq!(spec.receptive_field_size(), 127);
        // kernel 2 blocks with dilations 1..32 plus a kernel-1 lift
        assert_eq!(spec.blocks.len(), 7);
        assert_eq!(spec.blocks[0].kernel_size, 1);
        assert_eq!(spec.blocks[6].dilation, 32);
    }

    #[test]
    fn rfs_of_vanilla_stack_is_16() {
        // four single-convolution layers, kernel 2, dilation factor 2
        assert_eq!(vanilla_rfs(2, &[1, 2, 4, 8]), 16);
    }

    #[test]
    fn rfs_of_pointwise_network_is_one() {
        assert_eq!(vanilla_rfs(1, &[1, 1, 1]), 1);
        let spec = TcnSkipSpec {
            blocks: vec![TemporalBlockSpec {
                input_channels: 2,
                hidden_channels: 4,
                output_channels: 4,
                kernel_size: 1,
                dilation: 1,
            }],
            skip_channels: 4,
            output_channels: 1,
        };
        assert_eq!(spec.receptive_field_size(), 1);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = TcnSkipSpec::reported(3, 80, 2);
        let json = serde_json::to_string_pretty(&spec).unwrap();
        assert!(json.contains("temporal block"));
        assert!(json.contains("1x1 convolution"));
        let back: TcnSkipSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn mlp_zero_params_outputs_zero() {
        let spec = MlpSpec {
            dims: vec![3, 5, 2],
            activation: Activation::PRelu,
        };
        let mut params = init_mlp_params(&spec, 1);
        for i in 0..params.len() {
            let p = params.get_mut(i);
            if !p.name.contains("slope") {
                p.value = Tensor::zeros(p.value.shape().to_vec());
            }
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.3, -4.0, 2.2]).unwrap());
        let vars = params.bind(&mut g, false);
        let y = mlp_forward(&mut g, &spec, &vars, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_positive_input_through_identity_weights_is_linear() {
        // PReLU is the identity on the nonnegative region, so an all-identity
        // stack maps positive x straight through.
        let spec = MlpSpec {
            dims: vec![2, 2, 2],
            activation: Activation::PRelu,
        };
        let mut params = ParamSet::new();
        params.push("layer0.weight", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        params.push("layer0.bias", Tensor::vector(vec![0.0, 0.0]).unwrap());
        params.push("layer0.prelu.slope", Tensor::scalar(0.25));
        params.push("layer1.weight", Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap());
        params.push("layer1.bias", Tensor::vector(vec![0.0, 0.0]).unwrap());
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.5, 0.5]).unwrap());
        let vars = params.bind(&mut g, false);
        let y = mlp_forward(&mut g, &spec, &vars, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 1.0]);
    }

    #[test]
    fn mlp_moments_stay_finite_over_gaussian_draws() {
        use rand_distr::StandardNormal;
        let spec = MlpSpec {
            dims: vec![3, 8, 1],
            activation: Activation::PRelu,
        };
        let params = init_mlp_params(&spec, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut max_abs = 0.0_f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let mut g = Graph::new();
            let xv = g.constant(Tensor::vector(x).unwrap());
            let vars = params.bind(&mut g, false);
            let y = mlp_forward(&mut g, &spec, &vars, xv).unwrap();
            let out = g.value(y).data()[0];
            assert!(out.is_finite());
            max_abs = max_abs.max(out.abs());
            sum += out;
            sum_sq += out * out;
        }
        let var = sum_sq / n as f64 - (sum / n as f64).powi(2);
        assert!(max_abs.is_finite());
        assert!(var.is_finite() && var >= 0.0);
    }

    #[test]
    fn temporal_block_k1_preserves_length() {
        let spec = TemporalBlockSpec {
            input_channels: 2,
            hidden_channels: 3,
            output_channels: 2,
            kernel_size: 1,
            dilation: 1,
        };
        assert_eq!(spec.time_shrinkage(), 0);
        let tcn_spec = TcnSkipSpec {
            blocks: vec![spec],
            skip_channels: 2,
            output_channels: 2,
        };
        let params = init_tcn_params(&tcn_spec, 3);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = g.constant(Tensor::new(vec![2, 9], data).unwrap());
        let vars = params.bind(&mut g, false);
        let y = temporal_block_forward(&mut g, &tcn_spec.blocks[0], &vars[0..6], x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 9]);
    }

    #[test]
    fn temporal_block_output_length() {
        // K=2, D=1, T=5 -> 3
        let spec = TemporalBlockSpec {
            input_channels: 1,
            hidden_channels: 2,
            output_channels: 1,
            kernel_size: 2,
            dilation: 1,
        };
        let tcn_spec = TcnSkipSpec {
            blocks: vec![spec],
            skip_channels: 1,
            output_channels: 1,
        };
        let params = init_tcn_params(&tcn_spec, 5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 5], vec![1.0, -1.0, 2.0, 0.5, 0.0]).unwrap());
        let vars = params.bind(&mut g, false);
        let y = temporal_block_forward(&mut g, &spec, &vars[0..6], x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3]);
    }

    #[test]
    fn temporal_block_equals_direct_conv_composition() {
        let spec = TemporalBlockSpec {
            input_channels: 2,
            hidden_channels: 3,
            output_channels: 2,
            kernel_size: 2,
            dilation: 2,
        };
        let tcn_spec = TcnSkipSpec {
            blocks: vec![spec],
            skip_channels: 2,
            output_channels: 2,
        };
        let params = init_tcn_params(&tcn_spec, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..2 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xt = Tensor::new(vec![2, 12], data).unwrap();

        let mut g = Graph::new();
        let x = g.constant(xt.clone());
        let vars = params.bind(&mut g, false);
        let block_out = temporal_block_forward(&mut g, &spec, &vars[0..6], x).unwrap();

        // same thing assembled op by op
        let mut g2 = Graph::new();
        let x2 = g2.constant(xt);
        let vars2 = params.bind(&mut g2, false);
        let h = g2.conv(x2, vars2[0], Some(vars2[1]), 2).unwrap();
        let h = g2.prelu(h, vars2[2]).unwrap();
        let h = g2.conv(h, vars2[3], Some(vars2[4]), 2).unwrap();
        let direct = g2.prelu(h, vars2[5]).unwrap();

        assert_eq!(g.value(block_out).data(), g2.value(direct).data());
    }

    #[test]
    fn tcn_zero_skip_weights_yield_constant_bias_output() {
        let spec = tiny_spec(2, 2);
        let mut params = init_tcn_params(&spec, 17);
        for i in 0..params.len() {
            let p = params.get_mut(i);
            if p.name.contains("skip.weight") || p.name == "out.weight" {
                p.value = Tensor::zeros(p.value.shape().to_vec());
            } else if p.name == "out.bias" {
                p.value = Tensor::vector(vec![0.7, -0.3]).unwrap();
            }
        }
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..2 * 10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = g.constant(Tensor::new(vec![2, 10], data).unwrap());
        let vars = params.bind(&mut g, false);
        let y = tcn_skip_forward(&mut g, &spec, &vars, x).unwrap();
        let out = g.value(y);
        let t = out.shape()[1];
        for s in 0..t {
            assert_eq!(out.data()[s], 0.7);
            assert_eq!(out.data()[t + s], -0.3);
        }
    }

    #[test]
    fn tcn_input_of_rfs_length_gives_one_step() {
        let spec = tiny_spec(2, 1);
        let rfs = spec.receptive_field_size();
        assert_eq!(rfs, 7);
        let tcn = Tcn::new(spec, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..2 * rfs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = tcn.infer(&Tensor::new(vec![2, rfs], data).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
    }

    #[test]
    fn tcn_rejects_input_shorter_than_rfs() {
        let spec = tiny_spec(1, 1);
        let tcn = Tcn::new(spec, 23);
        let rfs = tcn.receptive_field_size();
        let x = Tensor::zeros(vec![1, rfs - 1]);
        assert!(matches!(tcn.infer(&x), Err(AdError::InputTooShort { .. })));
    }

    #[test]
    fn tcn_output_length_matches_rfs_formula() {
        let spec = tiny_spec(1, 1);
        let rfs = spec.receptive_field_size();
        let tcn = Tcn::new(spec, 31);
        for t0 in [rfs, rfs + 1, rfs + 9] {
            let x = Tensor::zeros(vec![1, t0]);
            let y = tcn.infer(&x).unwrap();
            assert_eq!(y.shape(), &[1, t0 - (rfs - 1)]);
        }
    }

    #[test]
    fn single_block_skip_identity_equals_block_through_out_conv() {
        // One block, identity 1x1 skip: the TCN output must equal the block
        // output passed through the final 1x1 convolution.
        let block = TemporalBlockSpec {
            input_channels: 1,
            hidden_channels: 2,
            output_channels: 2,
            kernel_size: 2,
            dilation: 1,
        };
        let spec = TcnSkipSpec {
            blocks: vec![block],
            skip_channels: 2,
            output_channels: 1,
        };
        let mut params = init_tcn_params(&spec, 41);
        for i in 0..params.len() {
            let p = params.get_mut(i);
            if p.name == "block0.skip.weight" {
                // [1, 2, 2] identity over channels
                p.value = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
            } else if p.name == "block0.skip.bias" {
                p.value = Tensor::zeros(vec![2]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xt = Tensor::new(vec![1, 8], data).unwrap();

        let mut g = Graph::new();
        let x = g.constant(xt.clone());
        let vars = params.bind(&mut g, false);
        let tcn_out = tcn_skip_forward(&mut g, &spec, &vars, x).unwrap();

        let mut g2 = Graph::new();
        let x2 = g2.constant(xt);
        let vars2 = params.bind(&mut g2, false);
        let block_out = temporal_block_forward(&mut g2, &spec.blocks[0], &vars2[0..6], x2).unwrap();
        let direct = g2.conv(block_out, vars2[8], Some(vars2[9]), 1).unwrap();

        assert_eq!(g.value(tcn_out).data(), g2.value(direct).data());
    }

    #[test]
    fn tcn_is_causal_end_to_end() {
        let spec = tiny_spec(1, 1);
        let rfs = spec.receptive_field_size();
        let tcn = Tcn::new(spec, 51);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t0 = rfs + 5;
        let data: Vec<f64> = (0..t0).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base_x = Tensor::new(vec![1, t0], data).unwrap();
        let base = tcn.infer(&base_x).unwrap();
        let t_out = base.shape()[1];
        // output s reads input columns s .. s+rfs-1; anything later must not matter
        for s in 0..t_out {
            for future in (s + rfs)..t0 {
                let mut pert = base_x.clone();
                pert.data_mut()[future] += 5.0;
                let out = tcn.infer(&pert).unwrap();
                assert_eq!(out.data()[s], base.data()[s]);
            }
        }
    }

    #[test]
    fn tcn_is_translation_equivariant() {
        let spec = tiny_spec(1, 1);
        let rfs = spec.receptive_field_size();
        let tcn = Tcn::new(spec, 61);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shift = 3;
        let t0 = rfs + 6;
        let data: Vec<f64> = (0..t0 + shift).map(|_| rng.random_range(-1.0..1.0)).collect();
        let full = Tensor::new(vec![1, t0 + shift], data.clone()).unwrap();
        let shifted = Tensor::new(vec![1, t0], data[shift..].to_vec()).unwrap();
        let y_full = tcn.infer(&full).unwrap();
        let y_shifted = tcn.infer(&shifted).unwrap();
        let t_out = y_shifted.shape()[1];
        let offset = y_full.shape()[1] - t_out;
        assert_eq!(&y_full.data()[offset..], y_shifted.data());
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let spec = tiny_spec(2, 1);
        let tcn = Tcn::new(spec, 71);
        let mut g = Graph::new();
        let rfs = tcn.receptive_field_size();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data: Vec<f64> = (0..2 * (rfs + 2)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = g.constant(Tensor::new(vec![2, rfs + 2], data).unwrap());
        let vars = tcn.params.bind(&mut g, true);
        let y = tcn.forward(&mut g, &vars, x).unwrap();
        let sq = g.square(y).unwrap();
        let loss = g.mean(sq).unwrap();
        g.backward(loss).unwrap();
        for (var, p) in vars.iter().zip(tcn.params.iter()) {
            let grad = g.grad(*var).unwrap_or_else(|| panic!("{} has no grad", p.name));
            assert!(
                grad.iter().any(|v| *v != 0.0),
                "{} gradient is identically zero",
                p.name
            );
        }
    }
}
