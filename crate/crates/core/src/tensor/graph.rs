use std::collections::HashMap;

use super::kernels::{self, ConvGeometry, PoolGeometry};
use super::{sigmoid, softplus, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Reshape(Var),
    Sum(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::GlobalAvgPool(a)
            | Op::Reshape(a)
            | Op::Sum(a) => vec![*a],
            Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::MaxPool { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.leaves.get(var.0).and_then(|g| g.as_deref())
    }
}

/// A tape of recorded operations. Nodes are appended in evaluation order, so
/// every input precedes its consumer.
#[derive(Debug, Default)]
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter as a gradient-tracked leaf. Repeated calls with
    /// the same path return the same node.
    pub fn param(&mut self, path: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.param_index.get(path) {
            return v;
        }
        let mut t = value.clone();
        t.grad = None;
        let v = self.leaf(t, true);
        self.params.push((path.to_string(), v));
        self.param_index.insert(path.to_string(), v);
        v
    }

    /// Registers an existing leaf under `path`, so later [`Graph::param`]
    /// calls for that path return it.
    pub fn bind_param(&mut self, path: &str, leaf: Var) -> Result<()> {
        if !matches!(self.nodes[leaf.0].op, Op::Leaf) {
            return Err(Error::InvalidArgument(format!("`{path}` must bind a leaf node")));
        }
        if self.param_index.insert(path.to_string(), leaf).is_some() {
            return Err(Error::InvalidArgument(format!("`{path}` is already bound")));
        }
        self.params.push((path.to_string(), leaf));
        Ok(())
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        self.value(v).validate_finite(what)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| f(p)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.map(a, |p| p * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| if p > T::zero() { p } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.map(a, softplus);
        self.push(out, Op::Softplus(a))
    }

    /// `x [N, in] -> x W^T + b`, with `W [out, in]` and `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::Shape(format!(
                "linear expects 2-d input and weight, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "linear: input last axis is {} but weight in-dim (axis 1) is {}",
                xs[1], ws[1]
            )));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::Shape(format!(
                    "linear bias must be [{dout}], got {:?}",
                    self.shape(b)
                )));
            }
        }
        let mut out = vec![T::zero(); n * dout];
        kernels::gemm(
            n,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(bias).for_each(|(v, &bb)| *v = *v + bb);
            }
        }
        let value = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Zero-padded cross-correlation; weight `[F, C, kh, kw]`, bias `[F]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.filters] {
                return Err(Error::Shape(format!(
                    "conv2d bias must be [{}], got {:?}",
                    geom.filters,
                    self.shape(b)
                )));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(geom.output_shape(), out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    /// Batch normalization over `[N, C, H, W]`.
    ///
    /// In `Train` mode the batch mean and biased variance normalize the input
    /// and `running` is updated as `(1 - momentum) * running + momentum * batch`
    /// using the unbiased batch variance. In `Eval` mode `running` is read only.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: Mode,
        momentum: f64,
        epsilon: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "batch_norm2d input must be [N,C,H,W], got {shape:?}"
            )));
        }
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::Shape(format!(
                    "batch_norm2d {name} must be [{c}], got {:?}",
                    self.shape(v)
                )));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm2d running stats have {} channels, input has {c}",
                running.mean.len()
            )));
        }
        let count = n * hw;
        if mode == Mode::Train && count < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_norm2d in train mode needs N*H*W >= 2, got {count}"
            )));
        }
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut x_hat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, istd) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for s in 0..n {
                        let base = (s * c + ch) * hw;
                        sum += xd[base..base + hw].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for s in 0..n {
                        let base = (s * c + ch) * hw;
                        sq += xd[base..base + hw]
                            .iter()
                            .map(|v| (v.as_f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / count as f64;
                    let unbiased = sq / (count - 1) as f64;
                    let m = T::from_f64(momentum);
                    running.mean[ch] =
                        (T::one() - m) * running.mean[ch] + m * T::from_f64(mean);
                    running.var[ch] =
                        (T::one() - m) * running.var[ch] + m * T::from_f64(unbiased);
                    (T::from_f64(mean), T::from_f64(1.0 / (var + epsilon).sqrt()))
                }
                Mode::Eval => (
                    running.mean[ch],
                    T::one() / (running.var[ch] + T::from_f64(epsilon)).sqrt(),
                ),
            };
            inv_std[ch] = istd;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let h = (xd[i] - mean) * istd;
                    x_hat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let p = PoolGeometry::new(self.shape(x), kernel, stride, padding)?;
        let (out, argmax) = kernels::max_pool2d_forward(&p, self.value(x).data());
        let value = Tensor::new(vec![p.batch, p.channels, p.out_h, p.out_w], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    /// `[N, C, H, W] -> [N, C]` by spatial mean.
    pub fn global_avg_pool2d(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "global_avg_pool2d input must be [N,C,H,W], got {shape:?}"
            )));
        }
        let hw = shape[2] * shape[3];
        let inv = T::from_f64(1.0 / hw as f64);
        let out = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![shape[0], shape[1]], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Keeps the leading axis and collapses the rest.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, T::from_f64(1.0 / n as f64))
    }

    /// Reverse-mode sweep from a scalar node. Each node is visited once, in
    /// reverse recording order; contributions from reused nodes accumulate.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        let mut leaves: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = pending[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(Error::GraphCycle(idx));
                }
            }
            if let Op::Leaf = node.op {
                leaves[idx] = Some(gout);
                continue;
            }
            self.propagate(node, &gout, &mut pending);
        }
        Ok(Gradients { leaves })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, pending: &mut [Option<Vec<T>>], v: Var, grad: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut pending[v.0] {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a = *a + g),
            slot @ None => *slot = Some(grad),
        }
    }

    fn propagate(&self, node: &Node<T>, gout: &[T], pending: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(pending, *a, gout.to_vec());
                self.accumulate(pending, *b, gout.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(pending, *a, gout.to_vec());
                if self.wants(*b) {
                    self.accumulate(pending, *b, gout.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(pending, *a, gout.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(pending, *b, gout.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(pending, *a, gout.iter().map(|&g| g * *c).collect());
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let g = gout
                    .iter()
                    .zip(x)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(pending, *a, g);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let g = gout
                    .iter()
                    .zip(y)
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                self.accumulate(pending, *a, g);
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                let g = gout.iter().zip(x).map(|(&g, &v)| g * sigmoid(v)).collect();
                self.accumulate(pending, *a, g);
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, din, dout) = (xs[0], xs[1], ws[0]);
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); n * din];
                    kernels::gemm(n, dout, din, gout, false, self.value(*w).data(), false, &mut gx, false);
                    self.accumulate(pending, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); dout * din];
                    kernels::gemm(dout, n, din, gout, true, self.value(*x).data(), false, &mut gw, false);
                    self.accumulate(pending, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![T::zero(); dout];
                        for row in gout.chunks(dout) {
                            gb.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
                        }
                        self.accumulate(pending, *b, gb);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_b = b.is_some_and(|b| self.wants(b));
                let (gx, gw, gb) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gout,
                    self.wants(*x),
                    self.wants(*w),
                    need_b,
                );
                if let Some(gx) = gx {
                    self.accumulate(pending, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(pending, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    self.accumulate(pending, *b, gb);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            } => {
                let shape = self.shape(*x);
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] = sum_g[ch] + gout[i];
                            sum_gx[ch] = sum_gx[ch] + gout[i] * x_hat[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); gout.len()];
                    let m = T::from_f64((n * hw) as f64);
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            let k = gam[ch] * inv_std[ch];
                            for i in base..base + hw {
                                gx[i] = if *batch_stats {
                                    k / m * (m * gout[i] - sum_g[ch] - x_hat[i] * sum_gx[ch])
                                } else {
                                    k * gout[i]
                                };
                            }
                        }
                    }
                    self.accumulate(pending, *x, gx);
                }
                self.accumulate(pending, *gamma, sum_gx);
                self.accumulate(pending, *beta, sum_g);
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (&idx, &g) in argmax.iter().zip(gout) {
                    gx[idx] = gx[idx] + g;
                }
                self.accumulate(pending, *x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.shape(*x);
                let hw = shape[2] * shape[3];
                let inv = T::from_f64(1.0 / hw as f64);
                let mut gx = Vec::with_capacity(self.value(*x).numel());
                for &g in gout {
                    gx.extend(std::iter::repeat_n(g * inv, hw));
                }
                self.accumulate(pending, *x, gx);
            }
            Op::Reshape(x) => self.accumulate(pending, *x, gout.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(pending, *x, vec![gout[0]; n]);
            }
        }
    }
}
