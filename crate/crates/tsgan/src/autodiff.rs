//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is define-by-run: every forward pass records its operations on
//! a fresh [`Graph`], and [`Graph::backward`] replays the record in reverse to
//! accumulate adjoints into the leaves. The op set is exactly what the
//! networks, losses and regularizers in this crate need — dilated causal
//! convolutions, affine maps, PReLU and a handful of elementwise/reduction
//! ops. No broadcasting beyond scalar-times-tensor.
//!
//! For the gradient penalty on the discriminator a second derivative of the
//! input-gradient norm is required. Instead of a general higher-order engine,
//! [`Graph::jvp`] replays the recorded graph in forward (tangent) mode and
//! emits the tangents as ordinary graph nodes, so one more reverse pass
//! differentiates the directional derivative with respect to the parameters.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: input length {got} is shorter than the receptive window {needed}")]
    InputTooShort {
        op: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("ln: argument must be strictly positive")]
    LnDomain,
    #[error("backward: loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: non-finite adjoint encountered at node {0}")]
    NonFiniteAdjoint(usize),
    #[error("jvp: tangent rule not implemented for {op}")]
    NoTangent { op: &'static str },
}

pub type Result<T> = std::result::Result<T, AdError>;

/// Dense row-major tensor of 64-bit floats.
///
/// Invariant: `shape.iter().product() == data.len()` and every stored value
/// is finite. Constructors enforce both.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AdError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {:?} expects {} values, got {}", shape, expected, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(AdError::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// A `rows x cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    /// Elementwise (Hadamard) product.
    Mul(usize, usize),
    /// Scalar graph variable times tensor.
    SMul { scalar: usize, tensor: usize },
    /// Constant scalar times tensor.
    Scale { input: usize, factor: f64 },
    Exp(usize),
    Ln(usize),
    Abs(usize),
    Square(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    /// max(x, floor) elementwise, with zero adjoint on the clamped region.
    ClampMin { input: usize, floor: f64 },
    Mean(usize),
    Sum(usize),
    /// PReLU with a learnable scalar slope on the negative half-line.
    Prelu { input: usize, slope: usize },
    /// Dilated causal convolution: input `[N_I, T]`, weight `[K, N_I, N_O]`,
    /// optional bias `[N_O]`, output `[N_O, T - D*(K-1)]`.
    Conv {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        dilation: usize,
    },
    /// Affine map: input `[N]`, weight `[M, N]`, bias `[M]`, output `[M]`.
    Affine {
        input: usize,
        weight: usize,
        bias: usize,
    },
    /// Keep the trailing `keep` time steps of a `[C, T]` tensor.
    CropTail { input: usize, keep: usize },
    /// Rows `start..start+rows` of a `[C, T]` tensor.
    SliceRows {
        input: usize,
        start: usize,
        rows: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::SMul { scalar, tensor } => vec![scalar, tensor],
            Op::Scale { input, .. }
            | Op::Exp(input)
            | Op::Ln(input)
            | Op::Abs(input)
            | Op::Square(input)
            | Op::Sigmoid(input)
            | Op::Tanh(input)
            | Op::Relu(input)
            | Op::ClampMin { input, .. }
            | Op::Mean(input)
            | Op::Sum(input)
            | Op::CropTail { input, .. }
            | Op::SliceRows { input, .. } => vec![input],
            Op::Prelu { input, slope } => vec![input, slope],
            Op::Conv {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![input, weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::Affine {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::SMul { .. } => "smul",
            Op::Scale { .. } => "scale",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::ClampMin { .. } => "clamp_min",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Prelu { .. } => "prelu",
            Op::Conv { .. } => "conv",
            Op::Affine { .. } => "affine",
            Op::CropTail { .. } => "crop_tail",
            Op::SliceRows { .. } => "slice_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Define-by-run tape. Rebuilt for every forward/backward cycle; a graph and
/// its tensors are confined to one thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass, if the node participates.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Tensor, inputs: &[usize]) -> Result<Var> {
        if !value.data.iter().all(|v| v.is_finite()) {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(op, value, requires_grad))
    }

    fn binary_shape_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].value.shape != self.nodes[b.0].value.shape {
            return Err(AdError::ShapeMismatch {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.nodes[a.0].value.shape, self.nodes[b.0].value.shape
                ),
            });
        }
        Ok(())
    }

    // ── elementwise and reductions ─────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check("add", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Add(a.0, b.0), value, &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check("sub", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Sub(a.0, b.0), value, &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check("mul", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Mul(a.0, b.0), value, &[a.0, b.0])
    }

    /// Scalar graph variable (shape `[1]`) times arbitrary tensor.
    pub fn smul(&mut self, scalar: Var, tensor: Var) -> Result<Var> {
        if self.nodes[scalar.0].value.len() != 1 {
            return Err(AdError::ShapeMismatch {
                op: "smul",
                detail: format!("scalar operand has shape {:?}", self.nodes[scalar.0].value.shape),
            });
        }
        let s = self.nodes[scalar.0].value.data[0];
        let data = self.nodes[tensor.0].value.data.iter().map(|x| s * x).collect();
        let value = Tensor {
            shape: self.nodes[tensor.0].value.shape.clone(),
            data,
        };
        self.push_op(
            Op::SMul {
                scalar: scalar.0,
                tensor: tensor.0,
            },
            value,
            &[scalar.0, tensor.0],
        )
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let data = self.nodes[input.0].value.data.iter().map(|x| factor * x).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Scale { input: input.0, factor }, value, &[input.0])
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        let data = self.nodes[input.0].value.data.iter().map(|x| x.exp()).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Exp(input.0), value, &[input.0])
    }

    pub fn ln(&mut self, input: Var) -> Result<Var> {
        if self.nodes[input.0].value.data.iter().any(|&x| x <= 0.0) {
            return Err(AdError::LnDomain);
        }
        let data = self.nodes[input.0].value.data.iter().map(|x| x.ln()).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Ln(input.0), value, &[input.0])
    }

    pub fn abs(&mut self, input: Var) -> Result<Var> {
        let data = self.nodes[input.0].value.data.iter().map(|x| x.abs()).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Abs(input.0), value, &[input.0])
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        let data = self.nodes[input.0].value.data.iter().map(|x| x * x).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Square(input.0), value, &[input.0])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let data = self.nodes[input.0]
            .value
            .data
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Sigmoid(input.0), value, &[input.0])
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let data = self.nodes[input.0].value.data.iter().map(|x| x.tanh()).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Tanh(input.0), value, &[input.0])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let data = self.nodes[input.0].value.data.iter().map(|x| x.max(0.0)).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::Relu(input.0), value, &[input.0])
    }

    pub fn clamp_min(&mut self, input: Var, floor: f64) -> Result<Var> {
        let data = self.nodes[input.0].value.data.iter().map(|x| x.max(floor)).collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(Op::ClampMin { input: input.0, floor }, value, &[input.0])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let d = &self.nodes[input.0].value.data;
        let value = Tensor::scalar(d.iter().sum::<f64>() / d.len() as f64);
        self.push_op(Op::Mean(input.0), value, &[input.0])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.nodes[input.0].value.data.iter().sum());
        self.push_op(Op::Sum(input.0), value, &[input.0])
    }

    /// PReLU: `x` if `x >= 0`, else `a * x`. The slope `a` is a scalar
    /// variable. The adjoint at exactly zero uses slope `a`.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        if self.nodes[slope.0].value.len() != 1 {
            return Err(AdError::ShapeMismatch {
                op: "prelu",
                detail: format!("slope has shape {:?}", self.nodes[slope.0].value.shape),
            });
        }
        let a = self.nodes[slope.0].value.data[0];
        let data = self.nodes[input.0]
            .value
            .data
            .iter()
            .map(|&x| if x >= 0.0 { x } else { a * x })
            .collect();
        let value = Tensor {
            shape: self.nodes[input.0].value.shape.clone(),
            data,
        };
        self.push_op(
            Op::Prelu {
                input: input.0,
                slope: slope.0,
            },
            value,
            &[input.0, slope.0],
        )
    }

    /// Dilated causal convolution.
    ///
    /// `input` is `[N_I, T]`, `weight` is `[K, N_I, N_O]`, `bias` is `[N_O]`.
    /// Output `[N_O, T - D*(K-1)]` where position `s` reads input columns
    /// `s, s+D, ..., s+D*(K-1)`; the highest kernel index multiplies the most
    /// recent input column, so the output never looks ahead.
    pub fn conv(&mut self, input: Var, weight: Var, bias: Option<Var>, dilation: usize) -> Result<Var> {
        let (x_shape, w_shape) = (
            self.nodes[input.0].value.shape.clone(),
            self.nodes[weight.0].value.shape.clone(),
        );
        if x_shape.len() != 2 || w_shape.len() != 3 {
            return Err(AdError::ShapeMismatch {
                op: "conv",
                detail: format!("input {:?}, weight {:?}", x_shape, w_shape),
            });
        }
        let (n_in, t) = (x_shape[0], x_shape[1]);
        let (k, w_in, n_out) = (w_shape[0], w_shape[1], w_shape[2]);
        if w_in != n_in {
            return Err(AdError::ShapeMismatch {
                op: "conv",
                detail: format!("input has {} channels, weight expects {}", n_in, w_in),
            });
        }
        if let Some(b) = bias {
            let b_shape = &self.nodes[b.0].value.shape;
            if b_shape.as_slice() != [n_out] {
                return Err(AdError::ShapeMismatch {
                    op: "conv",
                    detail: format!("bias {:?}, expected [{}]", b_shape, n_out),
                });
            }
        }
        let window = dilation * (k - 1) + 1;
        if t < window {
            return Err(AdError::InputTooShort {
                op: "conv",
                needed: window,
                got: t,
            });
        }
        let t_out = t - dilation * (k - 1);
        let x = &self.nodes[input.0].value.data;
        let w = &self.nodes[weight.0].value.data;
        let mut out = vec![0.0; n_out * t_out];
        if let Some(b) = bias {
            let bdata = self.nodes[b.0].value.data.clone();
            for (m, bm) in bdata.iter().enumerate() {
                out[m * t_out..(m + 1) * t_out].fill(*bm);
            }
        }
        for i in 0..k {
            for j in 0..n_in {
                let xrow = &x[j * t..(j + 1) * t];
                for m in 0..n_out {
                    let wij = w[(i * n_in + j) * n_out + m];
                    if wij == 0.0 {
                        continue;
                    }
                    let orow = &mut out[m * t_out..(m + 1) * t_out];
                    for (s, o) in orow.iter_mut().enumerate() {
                        *o += wij * xrow[s + dilation * i];
                    }
                }
            }
        }
        let value = Tensor {
            shape: vec![n_out, t_out],
            data: out,
        };
        let mut deps = vec![input.0, weight.0];
        if let Some(b) = bias {
            deps.push(b.0);
        }
        self.push_op(
            Op::Conv {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                dilation,
            },
            value,
            &deps,
        )
    }

    /// Affine map `W x + b` for a vector `x`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x_shape = self.nodes[input.0].value.shape.clone();
        let w_shape = self.nodes[weight.0].value.shape.clone();
        let b_shape = self.nodes[bias.0].value.shape.clone();
        if x_shape.len() != 1 || w_shape.len() != 2 || b_shape.len() != 1 {
            return Err(AdError::ShapeMismatch {
                op: "affine",
                detail: format!("x {:?}, W {:?}, b {:?}", x_shape, w_shape, b_shape),
            });
        }
        let (rows, cols) = (w_shape[0], w_shape[1]);
        if cols != x_shape[0] || rows != b_shape[0] {
            return Err(AdError::ShapeMismatch {
                op: "affine",
                detail: format!("x {:?}, W {:?}, b {:?}", x_shape, w_shape, b_shape),
            });
        }
        let x = &self.nodes[input.0].value.data;
        let w = &self.nodes[weight.0].value.data;
        let b = &self.nodes[bias.0].value.data;
        let mut out = b.clone();
        for r in 0..rows {
            let wrow = &w[r * cols..(r + 1) * cols];
            out[r] += wrow.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
        }
        let value = Tensor {
            shape: vec![rows],
            data: out,
        };
        self.push_op(
            Op::Affine {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
            },
            value,
            &[input.0, weight.0, bias.0],
        )
    }

    /// Keep the last `keep` time steps of a `[C, T]` tensor.
    pub fn crop_tail(&mut self, input: Var, keep: usize) -> Result<Var> {
        let shape = self.nodes[input.0].value.shape.clone();
        if shape.len() != 2 {
            return Err(AdError::ShapeMismatch {
                op: "crop_tail",
                detail: format!("{:?}", shape),
            });
        }
        let (c, t) = (shape[0], shape[1]);
        if keep > t {
            return Err(AdError::InputTooShort {
                op: "crop_tail",
                needed: keep,
                got: t,
            });
        }
        let x = &self.nodes[input.0].value.data;
        let mut out = Vec::with_capacity(c * keep);
        for row in 0..c {
            out.extend_from_slice(&x[row * t + (t - keep)..(row + 1) * t]);
        }
        let value = Tensor {
            shape: vec![c, keep],
            data: out,
        };
        self.push_op(Op::CropTail { input: input.0, keep }, value, &[input.0])
    }

    /// Select rows `start..start+rows` of a `[C, T]` tensor.
    pub fn slice_rows(&mut self, input: Var, start: usize, rows: usize) -> Result<Var> {
        let shape = self.nodes[input.0].value.shape.clone();
        if shape.len() != 2 || start + rows > shape[0] {
            return Err(AdError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {}..{} of {:?}", start, start + rows, shape),
            });
        }
        let t = shape[1];
        let x = &self.nodes[input.0].value.data;
        let out = x[start * t..(start + rows) * t].to_vec();
        let value = Tensor {
            shape: vec![rows, t],
            data: out,
        };
        self.push_op(
            Op::SliceRows {
                input: input.0,
                start,
                rows,
            },
            value,
            &[input.0],
        )
    }

    // ── reverse pass ───────────────────────────────────────────────────

    /// Accumulate adjoints of `loss` into every node that requires a
    /// gradient. Existing gradients are cleared first, so two backward
    /// calls from the same graph state produce identical results.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AdError::NonScalarLoss(self.nodes[loss.0].value.shape.clone()));
        }
        self.zero_grads();
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let gy = match self.nodes[id].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            if !gy.iter().all(|v| v.is_finite()) {
                return Err(AdError::NonFiniteAdjoint(id));
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, &gy);
                    self.accumulate(b, &gy);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &gy);
                    let neg: Vec<f64> = gy.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[b].value.data)
                        .map(|(g, v)| g * v)
                        .collect();
                    let gb: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[a].value.data)
                        .map(|(g, v)| g * v)
                        .collect();
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::SMul { scalar, tensor } => {
                    let s = self.nodes[scalar].value.data[0];
                    let gs: f64 = gy
                        .iter()
                        .zip(&self.nodes[tensor].value.data)
                        .map(|(g, v)| g * v)
                        .sum();
                    let gt: Vec<f64> = gy.iter().map(|g| g * s).collect();
                    self.accumulate(scalar, &[gs]);
                    self.accumulate(tensor, &gt);
                }
                Op::Scale { input, factor } => {
                    let gx: Vec<f64> = gy.iter().map(|g| g * factor).collect();
                    self.accumulate(input, &gx);
                }
                Op::Exp(input) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[id].value.data)
                        .map(|(g, y)| g * y)
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::Ln(input) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[input].value.data)
                        .map(|(g, x)| g / x)
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::Abs(input) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[input].value.data)
                        .map(|(g, x)| g * sign_zero(*x))
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::Square(input) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[input].value.data)
                        .map(|(g, x)| 2.0 * g * x)
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::Sigmoid(input) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[id].value.data)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::Tanh(input) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[id].value.data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::Relu(input) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[input].value.data)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::ClampMin { input, floor } => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[input].value.data)
                        .map(|(g, x)| if *x > floor { *g } else { 0.0 })
                        .collect();
                    self.accumulate(input, &gx);
                }
                Op::Mean(input) => {
                    let n = self.nodes[input].value.len() as f64;
                    let g = gy[0] / n;
                    let gx = vec![g; self.nodes[input].value.len()];
                    self.accumulate(input, &gx);
                }
                Op::Sum(input) => {
                    let gx = vec![gy[0]; self.nodes[input].value.len()];
                    self.accumulate(input, &gx);
                }
                Op::Prelu { input, slope } => {
                    let a = self.nodes[slope].value.data[0];
                    let mut ga = 0.0;
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&self.nodes[input].value.data)
                        .map(|(g, x)| {
                            if *x > 0.0 {
                                *g
                            } else {
                                ga += g * x;
                                g * a
                            }
                        })
                        .collect();
                    self.accumulate(input, &gx);
                    self.accumulate(slope, &[ga]);
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    dilation,
                } => {
                    self.conv_backward(id, input, weight, bias, dilation, &gy);
                }
                Op::Affine { input, weight, bias } => {
                    let cols = self.nodes[weight].value.shape[1];
                    let rows = self.nodes[weight].value.shape[0];
                    let w = self.nodes[weight].value.data.clone();
                    let x = self.nodes[input].value.data.clone();
                    let mut gx = vec![0.0; cols];
                    let mut gw = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let g = gy[r];
                        for c in 0..cols {
                            gx[c] += g * w[r * cols + c];
                            gw[r * cols + c] += g * x[c];
                        }
                    }
                    self.accumulate(input, &gx);
                    self.accumulate(weight, &gw);
                    self.accumulate(bias, &gy);
                }
                Op::CropTail { input, keep } => {
                    let shape = self.nodes[input].value.shape.clone();
                    let (c, t) = (shape[0], shape[1]);
                    let mut gx = vec![0.0; c * t];
                    for row in 0..c {
                        gx[row * t + (t - keep)..(row + 1) * t]
                            .copy_from_slice(&gy[row * keep..(row + 1) * keep]);
                    }
                    self.accumulate(input, &gx);
                }
                Op::SliceRows { input, start, rows } => {
                    let shape = self.nodes[input].value.shape.clone();
                    let (c, t) = (shape[0], shape[1]);
                    let mut gx = vec![0.0; c * t];
                    gx[start * t..(start + rows) * t].copy_from_slice(&gy);
                    self.accumulate(input, &gx);
                }
            }
        }
        Ok(())
    }

    fn conv_backward(
        &mut self,
        out_id: usize,
        input: usize,
        weight: usize,
        bias: Option<usize>,
        dilation: usize,
        gy: &[f64],
    ) {
        let (n_out, t_out) = {
            let s = &self.nodes[out_id].value.shape;
            (s[0], s[1])
        };
        let (n_in, t) = {
            let s = &self.nodes[input].value.shape;
            (s[0], s[1])
        };
        let k = self.nodes[weight].value.shape[0];
        let x = self.nodes[input].value.data.clone();
        let w = self.nodes[weight].value.data.clone();

        let mut gx = vec![0.0; n_in * t];
        let mut gw = vec![0.0; k * n_in * n_out];
        for i in 0..k {
            for j in 0..n_in {
                for m in 0..n_out {
                    let wij = w[(i * n_in + j) * n_out + m];
                    let grow = &gy[m * t_out..(m + 1) * t_out];
                    let mut acc = 0.0;
                    for (s, g) in grow.iter().enumerate() {
                        let xi = s + dilation * i;
                        gx[j * t + xi] += g * wij;
                        acc += g * x[j * t + xi];
                    }
                    gw[(i * n_in + j) * n_out + m] += acc;
                }
            }
        }
        self.accumulate(input, &gx);
        self.accumulate(weight, &gw);
        if let Some(b) = bias {
            let mut gb = vec![0.0; n_out];
            for (m, gbm) in gb.iter_mut().enumerate() {
                *gbm = gy[m * t_out..(m + 1) * t_out].iter().sum();
            }
            self.accumulate(b, &gb);
        }
    }

    fn accumulate(&mut self, id: usize, g: &[f64]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut self.nodes[id].grad {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => self.nodes[id].grad = Some(g.to_vec()),
        }
    }

    // ── forward (tangent) replay ───────────────────────────────────────

    /// Replay the graph up to `output` in forward mode, seeding the given
    /// nodes with tangent directions, and return the tangent of `output`.
    ///
    /// Tangents are created through the ordinary op API, so the returned
    /// variable is itself differentiable — one reverse pass from it yields
    /// the gradient of the directional derivative. Piecewise-linear ops
    /// freeze their active region (the standard almost-everywhere rule).
    pub fn jvp(&mut self, output: Var, seeds: &[(Var, Var)]) -> Result<Var> {
        let watermark = output.0;
        let mut tangent: Vec<Option<Var>> = vec![None; watermark + 1];
        for (node, dir) in seeds {
            if self.nodes[node.0].value.shape != self.nodes[dir.0].value.shape {
                return Err(AdError::ShapeMismatch {
                    op: "jvp",
                    detail: "seed direction shape differs from node shape".into(),
                });
            }
            tangent[node.0] = Some(*dir);
        }
        for id in 0..=watermark {
            if tangent[id].is_some() {
                continue; // seeded leaf
            }
            let op = self.nodes[id].op.clone();
            let tan = match op {
                Op::Leaf => None,
                Op::Add(a, b) => match (tangent[a], tangent[b]) {
                    (Some(ta), Some(tb)) => Some(self.add(ta, tb)?),
                    (Some(ta), None) => Some(ta),
                    (None, Some(tb)) => Some(tb),
                    (None, None) => None,
                },
                Op::Sub(a, b) => match (tangent[a], tangent[b]) {
                    (Some(ta), Some(tb)) => Some(self.sub(ta, tb)?),
                    (Some(ta), None) => Some(ta),
                    (None, Some(tb)) => Some(self.scale(tb, -1.0)?),
                    (None, None) => None,
                },
                Op::Mul(a, b) => {
                    let mut parts: Vec<Var> = Vec::new();
                    if let Some(ta) = tangent[a] {
                        parts.push(self.mul(ta, Var(b))?);
                    }
                    if let Some(tb) = tangent[b] {
                        parts.push(self.mul(Var(a), tb)?);
                    }
                    self.sum_parts(parts)?
                }
                Op::SMul { scalar, tensor } => {
                    let mut parts: Vec<Var> = Vec::new();
                    if let Some(ts) = tangent[scalar] {
                        parts.push(self.smul(ts, Var(tensor))?);
                    }
                    if let Some(tt) = tangent[tensor] {
                        parts.push(self.smul(Var(scalar), tt)?);
                    }
                    self.sum_parts(parts)?
                }
                Op::Scale { input, factor } => match tangent[input] {
                    Some(ti) => Some(self.scale(ti, factor)?),
                    None => None,
                },
                Op::Exp(input) => match tangent[input] {
                    Some(ti) => Some(self.mul(Var(id), ti)?),
                    None => None,
                },
                Op::Ln(input) => {
                    if tangent[input].is_some() {
                        return Err(AdError::NoTangent { op: "ln" });
                    }
                    None
                }
                Op::Abs(input) => match tangent[input] {
                    Some(ti) => {
                        let mask: Vec<f64> = self.nodes[input]
                            .value
                            .data
                            .iter()
                            .map(|x| sign_zero(*x))
                            .collect();
                        let shape = self.nodes[input].value.shape.clone();
                        let mask = self.constant(Tensor { shape, data: mask });
                        Some(self.mul(ti, mask)?)
                    }
                    None => None,
                },
                Op::Square(input) => match tangent[input] {
                    Some(ti) => {
                        let prod = self.mul(Var(input), ti)?;
                        Some(self.scale(prod, 2.0)?)
                    }
                    None => None,
                },
                Op::Sigmoid(input) => match tangent[input] {
                    Some(ti) => {
                        // y' = y (1 - y), with y the recorded output node
                        let one = {
                            let shape = self.nodes[id].value.shape.clone();
                            let n = self.nodes[id].value.len();
                            self.constant(Tensor {
                                shape,
                                data: vec![1.0; n],
                            })
                        };
                        let one_minus = self.sub(one, Var(id))?;
                        let dy = self.mul(Var(id), one_minus)?;
                        Some(self.mul(dy, ti)?)
                    }
                    None => None,
                },
                Op::Tanh(input) => match tangent[input] {
                    Some(ti) => {
                        let y2 = self.square(Var(id))?;
                        let one = {
                            let shape = self.nodes[id].value.shape.clone();
                            let n = self.nodes[id].value.len();
                            self.constant(Tensor {
                                shape,
                                data: vec![1.0; n],
                            })
                        };
                        let dy = self.sub(one, y2)?;
                        Some(self.mul(dy, ti)?)
                    }
                    None => None,
                },
                Op::Relu(input) => match tangent[input] {
                    Some(ti) => {
                        let mask: Vec<f64> = self.nodes[input]
                            .value
                            .data
                            .iter()
                            .map(|x| if *x > 0.0 { 1.0 } else { 0.0 })
                            .collect();
                        let shape = self.nodes[input].value.shape.clone();
                        let mask = self.constant(Tensor { shape, data: mask });
                        Some(self.mul(ti, mask)?)
                    }
                    None => None,
                },
                Op::ClampMin { input, floor } => match tangent[input] {
                    Some(ti) => {
                        let mask: Vec<f64> = self.nodes[input]
                            .value
                            .data
                            .iter()
                            .map(|x| if *x > floor { 1.0 } else { 0.0 })
                            .collect();
                        let shape = self.nodes[input].value.shape.clone();
                        let mask = self.constant(Tensor { shape, data: mask });
                        Some(self.mul(ti, mask)?)
                    }
                    None => None,
                },
                Op::Mean(input) => match tangent[input] {
                    Some(ti) => Some(self.mean(ti)?),
                    None => None,
                },
                Op::Sum(input) => match tangent[input] {
                    Some(ti) => Some(self.sum(ti)?),
                    None => None,
                },
                Op::Prelu { input, slope } => {
                    // d/dx is 1 on x > 0 and a on x <= 0 (frozen regions);
                    // d/da is x on the negative region.
                    let pos_mask: Vec<f64> = self.nodes[input]
                        .value
                        .data
                        .iter()
                        .map(|x| if *x > 0.0 { 1.0 } else { 0.0 })
                        .collect();
                    let neg_mask: Vec<f64> = pos_mask.iter().map(|m| 1.0 - m).collect();
                    let shape = self.nodes[input].value.shape.clone();
                    let mut parts: Vec<Var> = Vec::new();
                    if let Some(ti) = tangent[input] {
                        let pos = self.constant(Tensor {
                            shape: shape.clone(),
                            data: pos_mask,
                        });
                        let neg = self.constant(Tensor {
                            shape: shape.clone(),
                            data: neg_mask.clone(),
                        });
                        let tpos = self.mul(ti, pos)?;
                        let tneg_raw = self.mul(ti, neg)?;
                        let tneg = self.smul(Var(slope), tneg_raw)?;
                        parts.push(self.add(tpos, tneg)?);
                    }
                    if let Some(ts) = tangent[slope] {
                        let neg = self.constant(Tensor {
                            shape: shape.clone(),
                            data: neg_mask,
                        });
                        let xneg = self.mul(Var(input), neg)?;
                        parts.push(self.smul(ts, xneg)?);
                    }
                    self.sum_parts(parts)?
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    dilation,
                } => {
                    let mut parts: Vec<Var> = Vec::new();
                    if let Some(ti) = tangent[input] {
                        parts.push(self.conv(ti, Var(weight), None, dilation)?);
                    }
                    if let Some(tw) = tangent[weight] {
                        parts.push(self.conv(Var(input), tw, None, dilation)?);
                    }
                    if let Some(b) = bias {
                        if let Some(tb) = tangent[b] {
                            // bias broadcast over time: zero conv plus tangent bias
                            let zero_in = {
                                let shape = self.nodes[input].value.shape.clone();
                                let n = self.nodes[input].value.len();
                                self.constant(Tensor {
                                    shape,
                                    data: vec![0.0; n],
                                })
                            };
                            let zero_w = {
                                let shape = self.nodes[weight].value.shape.clone();
                                let n = self.nodes[weight].value.len();
                                self.constant(Tensor {
                                    shape,
                                    data: vec![0.0; n],
                                })
                            };
                            parts.push(self.conv(zero_in, zero_w, Some(tb), dilation)?);
                        }
                    }
                    self.sum_parts(parts)?
                }
                Op::Affine { input, weight, bias } => {
                    let mut parts: Vec<Var> = Vec::new();
                    let zero_b = {
                        let n = self.nodes[bias].value.len();
                        self.constant(Tensor {
                            shape: vec![n],
                            data: vec![0.0; n],
                        })
                    };
                    if let Some(ti) = tangent[input] {
                        parts.push(self.affine(ti, Var(weight), zero_b)?);
                    }
                    if let Some(tw) = tangent[weight] {
                        parts.push(self.affine(Var(input), tw, zero_b)?);
                    }
                    if let Some(tb) = tangent[bias] {
                        parts.push(tb);
                    }
                    self.sum_parts(parts)?
                }
                Op::CropTail { input, keep } => match tangent[input] {
                    Some(ti) => Some(self.crop_tail(ti, keep)?),
                    None => None,
                },
                Op::SliceRows { input, start, rows } => match tangent[input] {
                    Some(ti) => Some(self.slice_rows(ti, start, rows)?),
                    None => None,
                },
            };
            tangent[id] = tan;
        }
        match tangent[watermark] {
            Some(t) => Ok(t),
            None => {
                let shape = self.nodes[watermark].value.shape.clone();
                let n = self.nodes[watermark].value.len();
                Ok(self.constant(Tensor {
                    shape,
                    data: vec![0.0; n],
                }))
            }
        }
    }

    fn sum_parts(&mut self, parts: Vec<Var>) -> Result<Option<Var>> {
        let mut iter = parts.into_iter();
        let first = match iter.next() {
            Some(v) => v,
            None => return Ok(None),
        };
        let mut acc = first;
        for p in iter {
            acc = self.add(acc, p)?;
        }
        Ok(Some(acc))
    }
}

/// Sign with the zero convention used by the `abs` adjoint.
fn sign_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
