use super::kernels::{self, ConvGeometry};
use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

/// Which form of the Gaussian KL regulariser to evaluate.
///
/// `Standard` is the true KL divergence to the unit normal,
/// `½Σ(μ² + σ² − ln σ² − 1)`. `PaperVerbatim` keeps `−ln σ` in place of
/// `−ln σ²`, which is bounded below by `(ln 2 − 1)/4` per dimension rather
/// than by zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlVariant {
    #[default]
    Standard,
    PaperVerbatim,
}

impl KlVariant {
    fn log_coeff(self) -> f64 {
        match self {
            KlVariant::Standard => 2.0,
            KlVariant::PaperVerbatim => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Exp(Var),
    Slice { src: Var, start: usize },
    Concat(Vec<Var>),
    Reshape(Var),
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry },
    ConvT2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry },
    SumSqDiff(Var, Var),
    Sum(Var),
    Kl { mu: Var, sigma: Var, variant: KlVariant },
    Bce { p: Var, label: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations for reverse-mode differentiation. Single-threaded.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

const BCE_CLAMP: f64 = 1e-12;

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Releases every recorded node.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.leaf_grads.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Smallest `|x|` over every relu input recorded so far, i.e. how close
    /// the recorded point sits to a kink.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Act(x, Activation::Relu) => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| v.abs()))
            .reduce(f64::min)
    }

    /// Accumulated gradient of a requires-grad leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Brings a parameter onto the tape. Record each parameter once per tape
    /// and reuse the handle.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let value = params.get(id).tensor.clone();
        self.push(value, Op::Param(id), true)
    }

    /// `y = W·x + b` applied to a vector `x` of shape `[in]` or row-wise to a
    /// matrix of shape `[n, in]`; `W` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 2 {
            return Err(shape_err("linear weight", &ws, &xs));
        }
        let (out, inp) = (ws[0], ws[1]);
        let (rows, out_shape) = match xs.as_slice() {
            [d] if *d == inp => (1, vec![out]),
            [n, d] if *d == inp => (*n, vec![*n, out]),
            _ => return Err(shape_err("linear", &ws, &xs)),
        };
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [out] {
                return Err(shape_err("linear bias", bs, &[out]));
            }
        }
        let mut y = kernels::matmul_nt(self.value(x).data(), self.value(w).data(), rows, inp, out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(out) {
                for (yv, bv) in row.iter_mut().zip(bv) {
                    *yv += bv;
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new(out_shape, y)?, Op::Linear { x, w, b }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let as_ = self.value(a).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(shape_err("matmul", &as_, &bs));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), as_[0], as_[1], bs[1]);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![as_[0], bs[1]], c)?, Op::MatMul(a, b), ng))
    }

    fn zip_map(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|x| x * c).collect(),
        };
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let ta = self.value(a);
        let f: fn(f64) -> f64 = match kind {
            Activation::Sigmoid => sigmoid,
            Activation::Tanh => f64::tanh,
            Activation::Relu => |x| if x > 0.0 { x } else { 0.0 },
        };
        let t = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|&x| f(x)).collect(),
        };
        let ng = self.ng(a);
        self.push(t, Op::Act(a, kind), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|x| x.exp()).collect(),
        };
        let ng = self.ng(a);
        self.push(t, Op::Exp(a), ng)
    }

    /// Contiguous flat range `[start, start + len)` of `src`, as a vector.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let ts = self.value(src);
        if len == 0 || start + len > ts.len() {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) out of range for {:?}",
                start + len,
                ts.shape()
            )));
        }
        let t = Tensor::vector(ts.data()[start..start + len].to_vec());
        let ng = self.ng(src);
        Ok(self.push(t, Op::Slice { src, start }, ng))
    }

    /// Row `i` of a matrix.
    pub fn row(&mut self, src: Var, i: usize) -> Result<Var> {
        let s = self.value(src).shape().to_vec();
        if s.len() != 2 || i >= s[0] {
            return Err(Error::Shape(format!("row {i} out of range for {s:?}")));
        }
        self.slice(src, i * s[1], s[1])
    }

    /// Flat concatenation of the inputs, reshaped to `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: Vec<usize>) -> Result<Var> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::Concat(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Cross-correlation of a `C_in×H×W` input with `C_out×C_in×k_h×k_w`
    /// kernels, plus an optional per-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let is = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if is.len() != 3 || ks.len() != 4 || ks[1] != is[0] {
            return Err(shape_err("conv2d", &is, &ks));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        let (h_out, w_out) = match (
            kernels::conv_out_extent(is[1], ks[2], stride, padding),
            kernels::conv_out_extent(is[2], ks[3], stride, padding),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "conv2d kernel {ks:?} larger than input {is:?} padded by {padding}"
                )))
            }
        };
        let geom = ConvGeometry {
            big_channels: is[0],
            big_h: is[1],
            big_w: is[2],
            small_channels: ks[0],
            small_h: h_out,
            small_w: w_out,
            k_h: ks[2],
            k_w: ks[3],
            stride,
            padding,
        };
        let mut out = kernels::conv2d(self.value(input).data(), self.value(kernel).data(), &geom);
        self.add_channel_bias(&mut out, bias, ks[0], h_out * w_out)?;
        let ng = self.ng(input) || self.ng(kernel) || bias.is_some_and(|b| self.ng(b));
        let t = Tensor::new(vec![ks[0], h_out, w_out], out)?;
        Ok(self.push(t, Op::Conv2d { input, kernel, bias, geom }, ng))
    }

    /// Transposed convolution of a `C_in×H×W` input with `C_in×C_out×k_h×k_w`
    /// kernels; the adjoint of [`Tape::conv2d`] with the same stride and
    /// padding.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let is = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if is.len() != 3 || ks.len() != 4 || ks[0] != is[0] {
            return Err(shape_err("conv_transpose2d", &is, &ks));
        }
        if stride == 0 || output_padding >= stride {
            return Err(Error::Parameter(format!(
                "conv_transpose2d needs output_padding < stride, got {output_padding} and {stride}"
            )));
        }
        let (h_out, w_out) = match (
            kernels::conv_transpose_out_extent(is[1], ks[2], stride, padding, output_padding),
            kernels::conv_transpose_out_extent(is[2], ks[3], stride, padding, output_padding),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => return Err(Error::Shape(format!("conv_transpose2d yields empty output for {is:?}"))),
        };
        let geom = ConvGeometry {
            big_channels: ks[1],
            big_h: h_out,
            big_w: w_out,
            small_channels: is[0],
            small_h: is[1],
            small_w: is[2],
            k_h: ks[2],
            k_w: ks[3],
            stride,
            padding,
        };
        let mut out = kernels::conv_transpose2d(self.value(input).data(), self.value(kernel).data(), &geom);
        self.add_channel_bias(&mut out, bias, ks[1], h_out * w_out)?;
        let ng = self.ng(input) || self.ng(kernel) || bias.is_some_and(|b| self.ng(b));
        let t = Tensor::new(vec![ks[1], h_out, w_out], out)?;
        Ok(self.push(t, Op::ConvT2d { input, kernel, bias, geom }, ng))
    }

    fn add_channel_bias(&self, out: &mut [f64], bias: Option<Var>, channels: usize, plane: usize) -> Result<()> {
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [channels] {
                return Err(shape_err("channel bias", bv.shape(), &[channels]));
            }
            for (chunk, b) in out.chunks_mut(plane).zip(bv.data()) {
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(())
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn sum_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("sum_sq_diff", ta.shape(), tb.shape()));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s), Op::SumSqDiff(a, b), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Gaussian KL regulariser over `(mu, sigma)` vectors; `sigma` must be
    /// strictly positive.
    pub fn kl(&mut self, mu: Var, sigma: Var, variant: KlVariant) -> Result<Var> {
        let (tm, ts) = (self.value(mu), self.value(sigma));
        if tm.shape() != ts.shape() {
            return Err(shape_err("kl", tm.shape(), ts.shape()));
        }
        let v = kl_value(tm.data(), ts.data(), variant)?;
        let ng = self.ng(mu) || self.ng(sigma);
        Ok(self.push(Tensor::scalar(v), Op::Kl { mu, sigma, variant }, ng))
    }

    /// Binary cross-entropy of a single probability against a 0/1 label.
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var> {
        let tp = self.value(p);
        if tp.len() != 1 {
            return Err(Error::Shape(format!("bce expects one probability, got {:?}", tp.shape())));
        }
        let v = bce_value(tp.data()[0], label);
        let ng = self.ng(p);
        Ok(self.push(Tensor::scalar(v), Op::Bce { p, label }, ng))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added to the
    /// requires-grad leaves of this tape and to `params`; repeated calls
    /// accumulate until cleared.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => accumulate(&mut self.leaf_grads[i], &g),
                Op::Param(id) => {
                    params.accumulate_grad(*id, &g);
                    accumulate(&mut self.leaf_grads[i], &g);
                }
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Linear { x, w, b } => {
                let ws = self.value(w).shape();
                let (o, inp) = (ws[0], ws[1]);
                let rows = g.len() / o;
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                if let Some(gx) = self.slot(grads, x) {
                    let d = kernels::matmul(g, wv, rows, o, inp);
                    add_into(gx, &d);
                }
                if let Some(gw) = self.slot(grads, w) {
                    let d = kernels::matmul_tn(g, xv, rows, o, inp);
                    add_into(gw, &d);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, b) {
                        for row in g.chunks(o) {
                            add_into(gb, row);
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let n = self.value(b).shape()[1];
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if let Some(ga) = self.slot(grads, a) {
                    add_into(ga, &kernels::matmul_nt(g, bv, m, n, k));
                }
                if let Some(gb) = self.slot(grads, b) {
                    add_into(gb, &kernels::matmul_tn(av, g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, b) {
                    gb.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if let Some(ga) = self.slot(grads, a) {
                    for ((d, g), y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += g * y;
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((d, g), x) in gb.iter_mut().zip(g).zip(av) {
                        *d += g * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::Act(a, kind) => {
                let y = out.data();
                let x = self.value(a).data();
                if let Some(ga) = self.slot(grads, a) {
                    match kind {
                        Activation::Sigmoid => {
                            for ((d, g), y) in ga.iter_mut().zip(g).zip(y) {
                                *d += g * y * (1.0 - y);
                            }
                        }
                        Activation::Tanh => {
                            for ((d, g), y) in ga.iter_mut().zip(g).zip(y) {
                                *d += g * (1.0 - y * y);
                            }
                        }
                        Activation::Relu => {
                            for ((d, g), x) in ga.iter_mut().zip(g).zip(x) {
                                if *x > 0.0 {
                                    *d += g;
                                }
                            }
                        }
                    }
                }
            }
            Op::Exp(a) => {
                let y = out.data();
                if let Some(ga) = self.slot(grads, a) {
                    for ((d, g), y) in ga.iter_mut().zip(g).zip(y) {
                        *d += g * y;
                    }
                }
            }
            Op::Slice { src, start } => {
                if let Some(gs) = self.slot(grads, src) {
                    add_into(&mut gs[start..start + g.len()], g);
                }
            }
            Op::Concat(ref parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        add_into(gp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    add_into(ga, g);
                }
            }
            Op::Conv2d { input, kernel, bias, geom } => {
                self.channel_bias_grad(bias, g, geom.small_channels, grads);
                let iv = self.value(input).data();
                let kv = self.value(kernel).data();
                let mut gi = self.slot(grads, input).map(std::mem::take);
                let mut gk = self.slot(grads, kernel).map(std::mem::take);
                kernels::conv2d_backward(iv, kv, g, &geom, gi.as_deref_mut(), gk.as_deref_mut());
                if let Some(v) = gi {
                    grads[input.0] = Some(v);
                }
                if let Some(v) = gk {
                    grads[kernel.0] = Some(v);
                }
            }
            Op::ConvT2d { input, kernel, bias, geom } => {
                self.channel_bias_grad(bias, g, geom.big_channels, grads);
                let iv = self.value(input).data();
                let kv = self.value(kernel).data();
                let mut gi = self.slot(grads, input).map(std::mem::take);
                let mut gk = self.slot(grads, kernel).map(std::mem::take);
                kernels::conv_transpose2d_backward(iv, kv, g, &geom, gi.as_deref_mut(), gk.as_deref_mut());
                if let Some(v) = gi {
                    grads[input.0] = Some(v);
                }
                if let Some(v) = gk {
                    grads[kernel.0] = Some(v);
                }
            }
            Op::SumSqDiff(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let s = g[0];
                if let Some(ga) = self.slot(grads, a) {
                    for ((d, x), y) in ga.iter_mut().zip(av).zip(bv) {
                        *d += 2.0 * s * (x - y);
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((d, x), y) in gb.iter_mut().zip(av).zip(bv) {
                        *d -= 2.0 * s * (x - y);
                    }
                }
            }
            Op::Sum(a) => {
                let s = g[0];
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Kl { mu, sigma, variant } => {
                let s = g[0];
                let mv = self.value(mu).data();
                let sv = self.value(sigma).data();
                if let Some(gm) = self.slot(grads, mu) {
                    for (d, m) in gm.iter_mut().zip(mv) {
                        *d += s * m;
                    }
                }
                let half_c = 0.5 * variant.log_coeff();
                if let Some(gs) = self.slot(grads, sigma) {
                    for (d, sg) in gs.iter_mut().zip(sv) {
                        *d += s * (sg - half_c / sg);
                    }
                }
            }
            Op::Bce { p, label } => {
                let pv = self.value(p).data()[0];
                if let Some(gp) = self.slot(grads, p) {
                    if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pv) {
                        gp[0] += g[0] * (-label / pv + (1.0 - label) / (1.0 - pv));
                    }
                }
            }
        }
    }

    fn channel_bias_grad(&self, bias: Option<Var>, g: &[f64], channels: usize, grads: &mut [Option<Vec<f64>>]) {
        if let Some(b) = bias {
            if let Some(gb) = self.slot(grads, b) {
                let plane = g.len() / channels;
                for (d, chunk) in gb.iter_mut().zip(g.chunks(plane)) {
                    *d += chunk.iter().sum::<f64>();
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(v) => add_into(v, g),
        None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `½·Σ(μ² + σ² − c·ln σ − 1)` with `c = 2` (standard) or `c = 1`.
pub(crate) fn kl_value(mu: &[f64], sigma: &[f64], variant: KlVariant) -> Result<f64> {
    let c = variant.log_coeff();
    let mut acc = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if s.is_nan() || s <= 0.0 {
            return Err(Error::Domain(format!("kl needs sigma > 0, got {s}")));
        }
        acc += m * m + s * s - c * s.ln() - 1.0;
    }
    Ok(0.5 * acc)
}

pub(crate) fn bce_value(p: f64, label: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}
