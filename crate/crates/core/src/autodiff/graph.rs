//! Define-by-run tape. Every forward call appends a node; `backward` walks
//! the tape in reverse and accumulates gradients into the leaves.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::kernels::{conv, norm, pool};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Train,
    Infer,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }
}

enum Op {
    Leaf,
    Conv3d { input: Var, kernel: Var, bias: Var, geo: conv::ConvGeometry },
    MaxPool3d { input: Var, argmax: Vec<usize> },
    BatchNormTrain { input: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, dims: [usize; 3] },
    BatchNormInfer { input: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, dims: [usize; 3] },
    Linear { x: Var, w: Var, b: Option<Var>, batch: usize, n_in: usize, n_out: usize },
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Reshape(Var),
    Narrow { input: Var, start: usize, rows: usize, cols: usize, len: usize },
    StopGradient(Var),
    Sum(Var),
    Square(Var),
    DotConst(Var, Vec<f64>),
    BceLogits { logits: Var, labels: Vec<f64> },
    GaussianLogProb { mu: Var, sample: Vec<f64>, sigma: f64, dim: usize },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv3d { input, kernel, bias, .. } => vec![*input, *kernel, *bias],
            Op::MaxPool3d { input, .. } => vec![*input],
            Op::BatchNormTrain { input, gamma, beta, .. } | Op::BatchNormInfer { input, gamma, beta, .. } => {
                vec![*input, *gamma, *beta]
            }
            Op::Linear { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulConst(a, _)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Reshape(a)
            | Op::StopGradient(a)
            | Op::Sum(a)
            | Op::Square(a)
            | Op::DotConst(a, _) => vec![*a],
            Op::Narrow { input, .. } => vec![*input],
            Op::BceLogits { logits, .. } => vec![*logits],
            Op::GaussianLogProb { mu, .. } => vec![*mu],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
///
/// Every parameter bound on the graph has an entry; parameters the loss
/// cannot reach (or only reaches through a stop) hold exact zeros.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    stops_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new(), stops_enabled: true }
    }

    /// A graph whose stop markers pass gradients through. Only meant for
    /// negative-control checks of the isolation suite.
    pub fn with_stops_disabled() -> Self {
        Self { stops_enabled: false, ..Self::new() }
    }

    pub fn stops_enabled(&self) -> bool {
        self.stops_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::StopGradient(a) => !self.stops_enabled && self.nodes[a.0].requires_grad,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Binds a parameter from `store`. Repeated binds of one name share a node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.input(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    // ---- operations -------------------------------------------------------

    /// 3D convolution. `input` is `[C,D,H,W]` or `[B,C,D,H,W]`, `kernel` is
    /// `[C_out,C_in,k,k,k]`, `bias` is `[C_out]`.
    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv3d";
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernel).to_vec();
        let (batch, unbatched) = match ishape.len() {
            4 => (1, true),
            5 => (ishape[0], false),
            _ => return Err(Error::shape(OP, format!("input must be 4D or 5D, got {ishape:?}"))),
        };
        let s = &ishape[ishape.len() - 4..];
        if kshape.len() != 5 || kshape[2] != kshape[3] || kshape[3] != kshape[4] {
            return Err(Error::shape(OP, format!("kernel must be [C_out,C_in,k,k,k], got {kshape:?}")));
        }
        if kshape[1] != s[0] {
            return Err(Error::shape(OP, format!("input has {} channels but kernel expects {}", s[0], kshape[1])));
        }
        if self.shape(bias) != [kshape[0]] {
            return Err(Error::shape(OP, format!("bias must be [{}], got {:?}", kshape[0], self.shape(bias))));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be at least 1"));
        }
        let k = kshape[2];
        let mut out_dims = [0; 3];
        for axis in 0..3 {
            out_dims[axis] = conv::ConvGeometry::output_len(s[axis + 1], k, stride, padding)
                .ok_or_else(|| Error::shape(OP, format!("kernel {k} larger than padded extent of {:?}", &s[1..])))?;
        }
        let geo = conv::ConvGeometry {
            batch,
            c_in: s[0],
            c_out: kshape[0],
            in_dims: [s[1], s[2], s[3]],
            out_dims,
            k,
            stride,
            padding,
        };
        let data = conv::forward(&geo, self.value(input).data(), self.value(kernel).data(), self.value(bias).data());
        let mut shape = vec![geo.c_out, out_dims[0], out_dims[1], out_dims[2]];
        if !unbatched {
            shape.insert(0, batch);
        }
        Ok(self.push(Tensor::raw(shape, data), Op::Conv3d { input, kernel, bias, geo }))
    }

    /// Non-overlapping max pooling over the last three axes.
    pub fn maxpool3d(&mut self, input: Var, window: usize) -> Result<Var> {
        const OP: &str = "maxpool3d";
        let shape = self.shape(input).to_vec();
        if shape.len() < 4 {
            return Err(Error::shape(OP, format!("input must be at least 4D, got {shape:?}")));
        }
        if window == 0 {
            return Err(Error::invalid(OP, "window must be at least 1"));
        }
        let n = shape.len();
        let dims = [shape[n - 3], shape[n - 2], shape[n - 1]];
        if dims.iter().any(|d| d % window != 0) {
            return Err(Error::shape(OP, format!("window {window} does not divide spatial dims {dims:?}")));
        }
        let channels: usize = shape[..n - 3].iter().product();
        let (data, argmax) = pool::max_forward(self.value(input).data(), channels, dims, window);
        let mut out_shape = shape[..n - 3].to_vec();
        out_shape.extend(dims.iter().map(|d| d / window));
        Ok(self.push(Tensor::raw(out_shape, data), Op::MaxPool3d { input, argmax }))
    }

    /// Batch normalization of a `[B,C,D,H,W]` input over `(B,D,H,W)` per channel.
    pub fn batchnorm3d(&mut self, input: Var, gamma: Var, beta: Var, stats: &mut BnStats, mode: BnMode) -> Result<Var> {
        const OP: &str = "batchnorm3d";
        let shape = self.shape(input).to_vec();
        if shape.len() != 5 {
            return Err(Error::shape(OP, format!("input must be [B,C,D,H,W], got {shape:?}")));
        }
        let (batch, channels) = (shape[0], shape[1]);
        let dims = [shape[2], shape[3], shape[4]];
        let spatial: usize = dims.iter().product();
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(Error::shape(OP, format!("{what} must be [{channels}], got {:?}", self.shape(v))));
            }
        }
        if stats.mean.len() != channels || stats.var.len() != channels {
            return Err(Error::shape(OP, "running statistics do not match channel count"));
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let (mean, var) = match mode {
            BnMode::Train => {
                if batch < 2 {
                    return Err(Error::invalid(OP, "train mode needs a batch of at least 2"));
                }
                let (mean, var) = norm::channel_stats(x, batch, channels, spatial);
                let n = (batch * spatial) as f64;
                for c in 0..channels {
                    let unbiased = var[c] * n / (n - 1.0);
                    stats.mean[c] = (1.0 - stats.momentum) * stats.mean[c] + stats.momentum * mean[c];
                    stats.var[c] = (1.0 - stats.momentum) * stats.var[c] + stats.momentum * unbiased;
                }
                (mean, var)
            }
            BnMode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                for i in off..off + spatial {
                    xhat[i] = (x[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + bt[c];
                }
            }
        }
        let op = match mode {
            BnMode::Train => Op::BatchNormTrain { input, gamma, beta, xhat, inv_std, dims },
            BnMode::Infer => Op::BatchNormInfer { input, gamma, beta, xhat, inv_std, dims },
        };
        Ok(self.push(Tensor::raw(shape, out), op))
    }

    /// `x W^T + b` for `x` of shape `[n_in]` or `[B, n_in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(Error::shape(OP, format!("weight must be 2D, got {ws:?}")));
        }
        let (n_out, n_in) = (ws[0], ws[1]);
        let (batch, out_shape) = match xs.as_slice() {
            [n] if *n == n_in => (1, vec![n_out]),
            [bsz, n] if *n == n_in => (*bsz, vec![*bsz, n_out]),
            _ => return Err(Error::shape(OP, format!("input {xs:?} does not match weight {ws:?}"))),
        };
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(Error::shape(OP, format!("bias must be [{n_out}], got {:?}", self.shape(b))));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; batch * n_out];
        for r in 0..batch {
            let xr = &xd[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let wr = &wd[o * n_in..(o + 1) * n_in];
                out[r * n_out + o] = wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..batch {
                for o in 0..n_out {
                    out[r * n_out + o] += bd[o];
                }
            }
        }
        Ok(self.push(Tensor::raw(out_shape, out), Op::Linear { x, w, b, batch, n_in, n_out }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::raw(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::Mul(a, b)))
    }

    /// Multiplies by a fixed (non-differentiable) tensor of the same size.
    pub fn mul_const(&mut self, a: Var, factor: &Tensor) -> Result<Var> {
        if self.value(a).numel() != factor.numel() {
            return Err(Error::shape("mul_const", format!("{:?} vs {:?}", self.shape(a), factor.shape())));
        }
        let data = self.value(a).data().iter().zip(factor.data()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::MulConst(a, factor.data().to_vec())))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Gradient-stop marker: forward identity, backward zero.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGradient(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Columns `[start, start+len)` of a `[rows, cols]` (or `[cols]`) tensor.
    pub fn narrow(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (rows, cols, out_shape) = match shape.as_slice() {
            [c] => (1, *c, vec![len]),
            [r, c] => (*r, *c, vec![*r, len]),
            _ => return Err(Error::shape("narrow", format!("expected 1D or 2D, got {shape:?}"))),
        };
        if len == 0 || start + len > cols {
            return Err(Error::shape("narrow", format!("columns {start}..{} out of {cols}", start + len)));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(Tensor::raw(out_shape, data), Op::Narrow { input: a, start, rows, cols, len }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `sum_i a_i * w_i` with fixed weights.
    pub fn dot_const(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        if self.value(a).numel() != weights.len() {
            return Err(Error::shape(
                "dot_const",
                format!("{} values vs {} weights", self.value(a).numel(), weights.len()),
            ));
        }
        let s = self.value(a).data().iter().zip(weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::DotConst(a, weights.to_vec())))
    }

    /// Summed binary cross-entropy evaluated from logits:
    /// `sum_i softplus(z_i) - y_i z_i`, which equals `-sum_i [y log p + (1-y) log(1-p)]`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        const OP: &str = "bce_loss";
        let z = self.value(logits).data();
        if z.len() != labels.len() {
            return Err(Error::shape(OP, format!("{} logits vs {} labels", z.len(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(OP, format!("label {bad} is not in {{0, 1}}")));
        }
        let loss = z.iter().zip(labels).map(|(&z, &y)| softplus(z) - y * z).sum();
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits { logits, labels: labels.to_vec() }))
    }

    /// Log-density of fixed samples under an isotropic Gaussian with mean `mu`
    /// (`[B, d]` or `[d]`) and standard deviation `sigma`. One value per row.
    pub fn gaussian_log_prob(&mut self, mu: Var, sample: &Tensor, sigma: f64) -> Result<Var> {
        const OP: &str = "gaussian_log_prob";
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::invalid(OP, format!("sigma must be positive, got {sigma}")));
        }
        if self.shape(mu) != sample.shape() {
            return Err(Error::shape(OP, format!("mu {:?} vs sample {:?}", self.shape(mu), sample.shape())));
        }
        let dim = *self.shape(mu).last().unwrap();
        let rows = self.value(mu).numel() / dim;
        let var = sigma * sigma;
        let norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let m = self.value(mu).data();
        let out = (0..rows)
            .map(|r| {
                (0..dim)
                    .map(|k| {
                        let d = sample.data()[r * dim + k] - m[r * dim + k];
                        -d * d / (2.0 * var) + norm
                    })
                    .sum()
            })
            .collect();
        Ok(self
            .push(Tensor::raw(vec![rows], out), Op::GaussianLogProb { mu, sample: sample.data().to_vec(), sigma, dim }))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Parameters whose values can influence `root` through a differentiable
    /// path (stop markers cut the path).
    pub fn reachable_params(&self, root: Var) -> BTreeSet<String> {
        let mut seen = vec![false; root.0 + 1];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if seen[v.0] {
                continue;
            }
            seen[v.0] = true;
            let op = &self.nodes[v.0].op;
            if matches!(op, Op::StopGradient(_)) && self.stops_enabled {
                continue;
            }
            stack.extend(op.inputs());
        }
        self.params.iter().filter(|(_, v)| v.0 <= root.0 && seen[v.0]).map(|(k, _)| k.clone()).collect()
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                leaves.insert(Var(i), Tensor::raw(node.value.shape().to_vec(), g));
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }

        let params = self
            .params
            .iter()
            .map(|(name, v)| {
                let t = leaves.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
                (name.clone(), t)
            })
            .collect();
        Ok(Gradients { params, leaves })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { input, kernel, bias, geo } => {
                let need = [self.wants(*input), self.wants(*kernel), self.wants(*bias)];
                let cg = conv::backward(geo, self.value(*input).data(), self.value(*kernel).data(), g, need);
                if let Some(gi) = cg.input {
                    self.accumulate(grads, *input, gi);
                }
                if let Some(gk) = cg.kernel {
                    self.accumulate(grads, *kernel, gk);
                }
                if let Some(gb) = cg.bias {
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::MaxPool3d { input, argmax } => {
                let gi = pool::max_backward(g, argmax, self.value(*input).numel());
                self.accumulate(grads, *input, gi);
            }
            Op::BatchNormTrain { input, gamma, beta, xhat, inv_std, dims } => {
                let shape = self.shape(*input);
                let (batch, channels) = (shape[0], shape[1]);
                let spatial = dims.iter().product();
                let gam = self.value(*gamma).data();
                let (gi, gg, gb) = norm::train_backward(g, xhat, gam, inv_std, batch, channels, spatial);
                self.accumulate(grads, *input, gi);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::BatchNormInfer { input, gamma, beta, xhat, inv_std, dims } => {
                let shape = self.shape(*input);
                let (batch, channels) = (shape[0], shape[1]);
                let spatial: usize = dims.iter().product();
                let gam = self.value(*gamma).data();
                let mut gi = vec![0.0; g.len()];
                let mut gg = vec![0.0; channels];
                let mut gb = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * spatial;
                        for i in off..off + spatial {
                            gi[i] = g[i] * gam[c] * inv_std[c];
                            gg[c] += g[i] * xhat[i];
                            gb[c] += g[i];
                        }
                    }
                }
                self.accumulate(grads, *input, gi);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::Linear { x, w, b, batch, n_in, n_out } => {
                let (batch, n_in, n_out) = (*batch, *n_in, *n_out);
                if self.wants(*x) {
                    let wd = self.value(*w).data();
                    let mut gx = vec![0.0; batch * n_in];
                    for r in 0..batch {
                        let gxr = &mut gx[r * n_in..(r + 1) * n_in];
                        for o in 0..n_out {
                            let go = g[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (a, wv) in gxr.iter_mut().zip(&wd[o * n_in..(o + 1) * n_in]) {
                                *a += go * wv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let xd = self.value(*x).data();
                    let mut gw = vec![0.0; n_out * n_in];
                    for r in 0..batch {
                        let xr = &xd[r * n_in..(r + 1) * n_in];
                        for o in 0..n_out {
                            let go = g[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (a, xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                                *a += go * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; n_out];
                    for r in 0..batch {
                        for o in 0..n_out {
                            gb[o] += g[r * n_out + o];
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(g, x)| g * x).collect());
                }
            }
            Op::MulConst(a, f) => self.accumulate(grads, *a, g.iter().zip(f).map(|(g, y)| g * y).collect()),
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|g| g * c).collect()),
            Op::Tanh(a) => self.accumulate(grads, *a, g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Sigmoid(a) => self.accumulate(grads, *a, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect())
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Narrow { input, start, rows, cols, len } => {
                let mut gi = vec![0.0; rows * cols];
                for r in 0..*rows {
                    gi[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *input, gi);
            }
            Op::StopGradient(a) => {
                if !self.stops_enabled {
                    self.accumulate(grads, *a, g.to_vec());
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::DotConst(a, w) => self.accumulate(grads, *a, w.iter().map(|w| g[0] * w).collect()),
            Op::BceLogits { logits, labels } => {
                let z = self.value(*logits).data();
                self.accumulate(grads, *logits, z.iter().zip(labels).map(|(&z, &y)| g[0] * (sigmoid(z) - y)).collect());
            }
            Op::GaussianLogProb { mu, sample, sigma, dim } => {
                let m = self.value(*mu).data();
                let var = sigma * sigma;
                let gm = m.iter().zip(sample).enumerate().map(|(i, (m, l))| g[i / dim] * (l - m) / var).collect();
                self.accumulate(grads, *mu, gm);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Summed binary cross-entropy on probabilities, routed through the logit
/// form so that `p` of exactly 0 or 1 never produces an infinity.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    const LOGIT_LIMIT: f64 = 100.0;
    if probs.len() != labels.len() {
        return Err(Error::shape("bce_loss", format!("{} predictions vs {} labels", probs.len(), labels.len())));
    }
    let logits: Vec<f64> = probs.iter().map(|&p| (p.ln() - (1.0 - p).ln()).clamp(-LOGIT_LIMIT, LOGIT_LIMIT)).collect();
    let mut g = Graph::new();
    let z = g.constant(Tensor::from_vec(logits));
    let loss = g.bce_with_logits(z, labels)?;
    Ok(g.value(loss).item())
}
