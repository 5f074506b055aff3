use std::fmt;
use std::str::FromStr;

use super::{gemm, AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a value owned by a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every operation the graph knows how to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Conv2d,
    Add,
    Sub,
    Mul,
    Div,
    AddBias,
    Scale,
    Concat,
    SoftmaxAxis,
    LogSoftmaxAxis,
    Abs,
    Relu,
    Tanh,
    Sigmoid,
    Sum,
    Mean,
    Square,
    Sqrt,
    Log,
    StopGradient,
    Slice,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::MatMul,
        OpKind::Conv2d,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::AddBias,
        OpKind::Scale,
        OpKind::Concat,
        OpKind::SoftmaxAxis,
        OpKind::LogSoftmaxAxis,
        OpKind::Abs,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Square,
        OpKind::Sqrt,
        OpKind::Log,
        OpKind::StopGradient,
        OpKind::Slice,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::AddBias => "add_bias",
            OpKind::Scale => "scale",
            OpKind::Concat => "concat",
            OpKind::SoftmaxAxis => "softmax_axis",
            OpKind::LogSoftmaxAxis => "log_softmax_axis",
            OpKind::Abs => "abs",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Log => "log",
            OpKind::StopGradient => "stop_gradient",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| AutodiffError::UnknownOp(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dAttrs {
    pub stride: usize,
    pub padding: usize,
}

/// Attributes consumed by [`Graph::forward_op`]. Each op reads only the
/// fields it needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpAttrs {
    pub axis: Option<usize>,
    pub conv: Option<Conv2dAttrs>,
    pub start: Option<usize>,
    pub len: Option<usize>,
    pub factor: Option<f64>,
    pub shape: Option<Vec<usize>>,
}

impl OpAttrs {
    pub fn axis(axis: usize) -> Self {
        OpAttrs { axis: Some(axis), ..Default::default() }
    }

    pub fn conv(stride: usize, padding: usize) -> Self {
        OpAttrs { conv: Some(Conv2dAttrs { stride, padding }), ..Default::default() }
    }

    pub fn slice(axis: usize, start: usize, len: usize) -> Self {
        OpAttrs { axis: Some(axis), start: Some(start), len: Some(len), ..Default::default() }
    }

    pub fn factor(factor: f64) -> Self {
        OpAttrs { factor: Some(factor), ..Default::default() }
    }

    pub fn shape(shape: Vec<usize>) -> Self {
        OpAttrs { shape: Some(shape), ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug)]
struct AxisDims {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisDims {
    fn of(shape: &[usize], axis: usize) -> Self {
        AxisDims {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn cols_width(&self) -> usize {
        self.n * self.positions()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Abs,
    Relu,
    Tanh,
    Sigmoid,
    Square,
    Sqrt,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom, cols: Vec<f64> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    AddBias { x: usize, b: usize },
    Scale { x: usize, factor: f64 },
    Concat { parts: Vec<(usize, usize)>, outer: usize, inner: usize },
    Softmax { x: usize, dims: AxisDims },
    LogSoftmax { x: usize, dims: AxisDims },
    Unary { x: usize, kind: Unary },
    Sum { x: usize, dims: Option<AxisDims> },
    Mean { x: usize, dims: Option<AxisDims> },
    Slice { x: usize, dims: AxisDims, start: usize },
    Reshape { x: usize },
}

/// One differentiable quantity: its data, accumulated adjoint, and the
/// operation that produced it.
#[derive(Debug)]
pub struct Value {
    data: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    param: Option<ParamId>,
    op: Op,
}

impl Value {
    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Record of executed operations. Values are appended in execution order,
/// so the storage order is already a topological order.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Value>,
    grad_enabled: bool,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: OpKind, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op: op.name(), detail }
}

fn attr_err(op: OpKind, detail: &str) -> AutodiffError {
    AutodiffError::InvalidAttrs { op: op.name(), detail: detail.to_string() }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true, consumed: false }
    }

    /// A graph where parameters enter as constants, so nothing is recorded.
    pub fn no_grad() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: false, consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Tensor, requires_grad: bool, param: Option<ParamId>, op: Op) -> Var {
        self.nodes.push(Value { data, grad: None, requires_grad, param, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, data: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if requires {
            self.push(data, true, None, op)
        } else {
            self.push(data, false, None, Op::Leaf)
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, None, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// A leaf that receives a gradient (independent of any parameter store).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, true, None, Op::Leaf)
    }

    /// Places a parameter on the graph. In a [`Graph::no_grad`] graph it is
    /// an ordinary constant.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let requires = self.grad_enabled;
        self.push(store.value(id).clone(), requires, Some(id), Op::Leaf)
    }

    pub fn node(&self, v: Var) -> &Value {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].data.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                store.accumulate_grad(id, g);
            }
        }
    }

    /// Clears all adjoints so another backward pass may run.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.consumed = false;
    }

    /// Applies `kind` to `inputs`. The typed helpers below are shorthands for this.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var], attrs: &OpAttrs) -> Result<Var, AutodiffError> {
        let arity = |expected: usize| {
            if inputs.len() == expected {
                Ok(())
            } else {
                Err(AutodiffError::Arity { op: kind.name(), expected, got: inputs.len() })
            }
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul_impl(inputs[0], inputs[1])
            }
            OpKind::Conv2d => {
                if inputs.len() != 2 && inputs.len() != 3 {
                    return Err(AutodiffError::Arity { op: kind.name(), expected: 3, got: inputs.len() });
                }
                let conv = attrs.conv.ok_or_else(|| attr_err(kind, "missing stride/padding"))?;
                self.conv2d_impl(inputs[0], inputs[1], inputs.get(2).copied(), conv)
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                arity(2)?;
                self.binary_impl(kind, inputs[0], inputs[1])
            }
            OpKind::AddBias => {
                arity(2)?;
                self.add_bias_impl(inputs[0], inputs[1])
            }
            OpKind::Scale => {
                arity(1)?;
                let factor = attrs.factor.ok_or_else(|| attr_err(kind, "missing factor"))?;
                let x = inputs[0];
                let data: Vec<f64> = self.value(x).data().iter().map(|v| v * factor).collect();
                let t = Tensor::new(self.shape(x).to_vec(), data)?;
                Ok(self.record(t, inputs, Op::Scale { x: x.0, factor }))
            }
            OpKind::Concat => {
                if inputs.is_empty() {
                    return Err(AutodiffError::Arity { op: kind.name(), expected: 1, got: 0 });
                }
                self.concat_impl(inputs, attrs.axis.unwrap_or(0))
            }
            OpKind::SoftmaxAxis | OpKind::LogSoftmaxAxis => {
                arity(1)?;
                let axis = attrs.axis.ok_or_else(|| attr_err(kind, "missing axis"))?;
                self.softmax_impl(inputs[0], axis, kind == OpKind::LogSoftmaxAxis)
            }
            OpKind::Abs
            | OpKind::Relu
            | OpKind::Tanh
            | OpKind::Sigmoid
            | OpKind::Square
            | OpKind::Sqrt
            | OpKind::Log => {
                arity(1)?;
                let unary = match kind {
                    OpKind::Abs => Unary::Abs,
                    OpKind::Relu => Unary::Relu,
                    OpKind::Tanh => Unary::Tanh,
                    OpKind::Sigmoid => Unary::Sigmoid,
                    OpKind::Square => Unary::Square,
                    OpKind::Sqrt => Unary::Sqrt,
                    _ => Unary::Log,
                };
                Ok(self.unary_impl(inputs[0], unary))
            }
            OpKind::Sum | OpKind::Mean => {
                arity(1)?;
                self.reduce_impl(inputs[0], attrs.axis, kind == OpKind::Mean)
            }
            OpKind::StopGradient => {
                arity(1)?;
                let t = self.value(inputs[0]).clone();
                Ok(self.push(t, false, None, Op::Leaf))
            }
            OpKind::Slice => {
                arity(1)?;
                let axis = attrs.axis.unwrap_or(0);
                let start = attrs.start.ok_or_else(|| attr_err(kind, "missing start"))?;
                let len = attrs.len.ok_or_else(|| attr_err(kind, "missing len"))?;
                self.slice_impl(inputs[0], axis, start, len)
            }
            OpKind::Reshape => {
                arity(1)?;
                let shape = attrs.shape.clone().ok_or_else(|| attr_err(kind, "missing shape"))?;
                let x = inputs[0];
                let t = self.value(x).reshaped(shape)?;
                Ok(self.record(t, inputs, Op::Reshape { x: x.0 }))
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::MatMul, &[a, b], &OpAttrs::default())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var, AutodiffError> {
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.forward_op(OpKind::Conv2d, &inputs, &OpAttrs::conv(stride, padding))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Add, &[a, b], &OpAttrs::default())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Sub, &[a, b], &OpAttrs::default())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Mul, &[a, b], &OpAttrs::default())
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Div, &[a, b], &OpAttrs::default())
    }

    /// `x[..., j] + b[j]` for a 1-D `b` matching the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::AddBias, &[x, b], &OpAttrs::default())
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Scale, &[x], &OpAttrs::factor(factor))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Concat, parts, &OpAttrs::axis(axis))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::SoftmaxAxis, &[x], &OpAttrs::axis(axis))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::LogSoftmaxAxis, &[x], &OpAttrs::axis(axis))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Abs, &[x], &OpAttrs::default())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Relu, &[x], &OpAttrs::default())
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Tanh, &[x], &OpAttrs::default())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Sigmoid, &[x], &OpAttrs::default())
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Square, &[x], &OpAttrs::default())
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Sqrt, &[x], &OpAttrs::default())
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Log, &[x], &OpAttrs::default())
    }

    /// Sum of all elements (scalar result).
    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Sum, &[x], &OpAttrs::default())
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Sum, &[x], &OpAttrs::axis(axis))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Mean, &[x], &OpAttrs::default())
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Mean, &[x], &OpAttrs::axis(axis))
    }

    pub fn stop_gradient(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::StopGradient, &[x], &OpAttrs::default())
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Slice, &[x], &OpAttrs::slice(axis, start, len))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Reshape, &[x], &OpAttrs::shape(shape))
    }

    fn matmul_impl(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch(OpKind::MatMul, format!("cannot multiply {:?} by {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.record(t, &[a, b], Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    fn conv2d_impl(&mut self, x: Var, w: Var, b: Option<Var>, attrs: Conv2dAttrs) -> Result<Var, AutodiffError> {
        let op = OpKind::Conv2d;
        if attrs.stride == 0 {
            return Err(attr_err(op, "stride must be positive"));
        }
        let xs = self.shape(x).to_vec();
        let batched = match xs.len() {
            4 => true,
            3 => false,
            _ => return Err(mismatch(op, format!("input must be [N,C,H,W] or [C,H,W], got {:?}", xs))),
        };
        let (n, c, h, wd) = if batched { (xs[0], xs[1], xs[2], xs[3]) } else { (1, xs[0], xs[1], xs[2]) };
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != c {
            return Err(mismatch(op, format!("weight {:?} does not fit input with {} channels", ws, c)));
        }
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch(op, format!("bias {:?} must be [{}]", self.shape(b), o)));
            }
        }
        let (hp, wp) = (h + 2 * attrs.padding, wd + 2 * attrs.padding);
        if hp < kh || wp < kw {
            return Err(mismatch(op, format!("kernel {}x{} larger than padded input {}x{}", kh, kw, hp, wp)));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            oh: (hp - kh) / attrs.stride + 1,
            ow: (wp - kw) / attrs.stride + 1,
            stride: attrs.stride,
            pad: attrs.padding,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let (p, width) = (geom.positions(), geom.cols_width());
        let mut tmp = vec![0.0; o * width];
        gemm(o, geom.patch(), width, self.value(w).data(), false, &cols, false, 0.0, &mut tmp);
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = vec![0.0; n * o * p];
        for ni in 0..n {
            for oi in 0..o {
                let bv = bias.as_ref().map_or(0.0, |bb| bb[oi]);
                let src = &tmp[oi * width + ni * p..oi * width + (ni + 1) * p];
                let dst = &mut out[(ni * o + oi) * p..(ni * o + oi + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bv;
                }
            }
        }
        let shape = if batched { vec![n, o, geom.oh, geom.ow] } else { vec![o, geom.oh, geom.ow] };
        let t = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let requires = inputs.iter().any(|v| self.requires_grad(*v));
        let op = Op::Conv2d { x: x.0, w: w.0, b: b.map(|b| b.0), geom, cols: if requires { cols } else { Vec::new() } };
        Ok(self.record(t, &inputs, op))
    }

    fn binary_impl(&mut self, kind: OpKind, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(kind, format!("operands {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let f: fn(f64, f64) -> f64 = match kind {
            OpKind::Add => |x, y| x + y,
            OpKind::Sub => |x, y| x - y,
            OpKind::Mul => |x, y| x * y,
            _ => |x, y| x / y,
        };
        let data: Vec<f64> = da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let op = match kind {
            OpKind::Add => Op::Add { a: a.0, b: b.0 },
            OpKind::Sub => Op::Sub { a: a.0, b: b.0 },
            OpKind::Mul => Op::Mul { a: a.0, b: b.0 },
            _ => Op::Div { a: a.0, b: b.0 },
        };
        Ok(self.record(t, &[a, b], op))
    }

    fn add_bias_impl(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.len() != 1 || xs.last() != Some(&bs[0]) {
            return Err(mismatch(OpKind::AddBias, format!("bias {:?} does not match last axis of {:?}", bs, xs)));
        }
        let width = bs[0];
        let bd = self.value(b).data();
        let data: Vec<f64> = self.value(x).data().iter().enumerate().map(|(i, v)| v + bd[i % width]).collect();
        let t = Tensor::new(xs.to_vec(), data)?;
        Ok(self.record(t, &[x, b], Op::AddBias { x: x.0, b: b.0 }))
    }

    fn concat_impl(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let op = OpKind::Concat;
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(mismatch(op, format!("axis {} out of range for {:?}", axis, first)));
        }
        let mut total = 0;
        let mut extents = Vec::with_capacity(parts.len());
        for v in parts {
            let s = self.shape(*v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch(op, format!("part {:?} incompatible with {:?} along axis {}", s, first, axis)));
            }
            extents.push((v.0, s[axis]));
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(id, len) in &extents {
                let src = self.nodes[id].data.data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        Ok(self.record(t, parts, Op::Concat { parts: extents, outer, inner }))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var, AutodiffError> {
        let kind = if log { OpKind::LogSoftmaxAxis } else { OpKind::SoftmaxAxis };
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(mismatch(kind, format!("axis {} out of range for {:?}", axis, shape)));
        }
        let dims = AxisDims::of(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..dims.outer {
            for r in 0..dims.inner {
                let idx = |j: usize| (o * dims.len + j) * dims.inner + r;
                let max = (0..dims.len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..dims.len).map(|j| (src[idx(j)] - max).exp()).sum();
                let lz = z.ln();
                for j in 0..dims.len {
                    let shifted = src[idx(j)] - max;
                    out[idx(j)] = if log { shifted - lz } else { shifted.exp() / z };
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        let op = if log { Op::LogSoftmax { x: x.0, dims } } else { Op::Softmax { x: x.0, dims } };
        Ok(self.record(t, &[x], op))
    }

    fn unary_impl(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Abs => f64::abs,
            Unary::Relu => |v| v.max(0.0),
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Unary::Square => |v| v * v,
            Unary::Sqrt => f64::sqrt,
            Unary::Log => f64::ln,
        };
        let data: Vec<f64> = self.value(x).data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.record(t, &[x], Op::Unary { x: x.0, kind })
    }

    fn reduce_impl(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var, AutodiffError> {
        let kind = if mean { OpKind::Mean } else { OpKind::Sum };
        let shape = self.shape(x).to_vec();
        let src = self.value(x).data();
        match axis {
            None => {
                let s: f64 = src.iter().sum();
                let v = if mean { s / src.len().max(1) as f64 } else { s };
                let t = Tensor::scalar(v);
                let op = if mean { Op::Mean { x: x.0, dims: None } } else { Op::Sum { x: x.0, dims: None } };
                Ok(self.record(t, &[x], op))
            }
            Some(axis) => {
                if axis >= shape.len() {
                    return Err(mismatch(kind, format!("axis {} out of range for {:?}", axis, shape)));
                }
                let dims = AxisDims::of(&shape, axis);
                let mut out = vec![0.0; dims.outer * dims.inner];
                for o in 0..dims.outer {
                    for j in 0..dims.len {
                        for r in 0..dims.inner {
                            out[o * dims.inner + r] += src[(o * dims.len + j) * dims.inner + r];
                        }
                    }
                }
                if mean {
                    let inv = 1.0 / dims.len.max(1) as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                let mut out_shape = shape;
                out_shape.remove(axis);
                let t = Tensor::new(out_shape, out)?;
                let op = if mean { Op::Mean { x: x.0, dims: Some(dims) } } else { Op::Sum { x: x.0, dims: Some(dims) } };
                Ok(self.record(t, &[x], op))
            }
        }
    }

    fn slice_impl(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(mismatch(
                OpKind::Slice,
                format!("range {}..{} on axis {} out of bounds for {:?}", start, start + len, axis, shape),
            ));
        }
        let dims = AxisDims::of(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(dims.outer * len * dims.inner);
        for o in 0..dims.outer {
            let base = (o * dims.len + start) * dims.inner;
            data.extend_from_slice(&src[base..base + len * dims.inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data)?;
        Ok(self.record(t, &[x], Op::Slice { x: x.0, dims, start }))
    }

    /// Accumulates d`loss`/d(value) into every value that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = match (&node.op, node.grad.as_deref()) {
                (Op::Leaf, _) | (_, None) => continue,
                (_, Some(g)) => g,
            };
            for (j, adj) in adjoints(before, node, g) {
                let target = &mut before[j];
                if !target.requires_grad {
                    continue;
                }
                match target.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&adj).for_each(|(a, d)| *a += d),
                    None => target.grad = Some(adj),
                }
            }
        }
        Ok(())
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, width) = (g.positions(), g.cols_width());
    let mut cols = vec![0.0; g.patch() * width];
    for ni in 0..g.n {
        for ci in 0..g.c {
            let plane = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let dst = &mut cols[row * width + ni * p..row * width + (ni + 1) * p];
                    for oh in 0..g.oh {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        for ow in 0..g.ow {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                dst[oh * g.ow + ow] = plane[ih as usize * g.w + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, width) = (g.positions(), g.cols_width());
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for ni in 0..g.n {
        for ci in 0..g.c {
            let plane = &mut x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let src = &cols[row * width + ni * p..row * width + (ni + 1) * p];
                    for oh in 0..g.oh {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        for ow in 0..g.ow {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                plane[ih as usize * g.w + iw as usize] += src[oh * g.ow + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Input adjoints for one recorded node given its output adjoint `g`.
fn adjoints(before: &[Value], node: &Value, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let needs = |j: usize| before[j].requires_grad;
    let data = |j: usize| before[j].data.data();
    let mut out = Vec::with_capacity(2);
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if needs(*a) {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, data(*b), true, 0.0, &mut ga);
                out.push((*a, ga));
            }
            if needs(*b) {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, data(*a), true, g, false, 0.0, &mut gb);
                out.push((*b, gb));
            }
        }
        Op::Conv2d { x, w, b, geom, cols } => {
            let (p, width, patch) = (geom.positions(), geom.cols_width(), geom.patch());
            let mut gt = vec![0.0; geom.o * width];
            for ni in 0..geom.n {
                for oi in 0..geom.o {
                    let src = &g[(ni * geom.o + oi) * p..(ni * geom.o + oi + 1) * p];
                    gt[oi * width + ni * p..oi * width + (ni + 1) * p].copy_from_slice(src);
                }
            }
            if needs(*w) {
                let mut gw = vec![0.0; geom.o * patch];
                gemm(geom.o, width, patch, &gt, false, cols, true, 0.0, &mut gw);
                out.push((*w, gw));
            }
            if let Some(b) = b {
                if needs(*b) {
                    let gb = (0..geom.o).map(|oi| gt[oi * width..(oi + 1) * width].iter().sum()).collect();
                    out.push((*b, gb));
                }
            }
            if needs(*x) {
                let mut gcols = vec![0.0; patch * width];
                gemm(patch, geom.o, width, data(*w), true, &gt, false, 0.0, &mut gcols);
                out.push((*x, col2im(&gcols, geom)));
            }
        }
        Op::Add { a, b } => {
            out.push((*a, g.to_vec()));
            out.push((*b, g.to_vec()));
        }
        Op::Sub { a, b } => {
            out.push((*a, g.to_vec()));
            out.push((*b, g.iter().map(|v| -v).collect()));
        }
        Op::Mul { a, b } => {
            if needs(*a) {
                out.push((*a, g.iter().zip(data(*b)).map(|(gi, bi)| gi * bi).collect()));
            }
            if needs(*b) {
                out.push((*b, g.iter().zip(data(*a)).map(|(gi, ai)| gi * ai).collect()));
            }
        }
        Op::Div { a, b } => {
            let (da, db) = (data(*a), data(*b));
            if needs(*a) {
                out.push((*a, g.iter().zip(db).map(|(gi, bi)| gi / bi).collect()));
            }
            if needs(*b) {
                let gb = g.iter().zip(da.iter().zip(db)).map(|(gi, (ai, bi))| -gi * ai / (bi * bi)).collect();
                out.push((*b, gb));
            }
        }
        Op::AddBias { x, b } => {
            out.push((*x, g.to_vec()));
            if needs(*b) {
                let width = before[*b].data.len();
                let mut gb = vec![0.0; width];
                for (i, gi) in g.iter().enumerate() {
                    gb[i % width] += gi;
                }
                out.push((*b, gb));
            }
        }
        Op::Scale { x, factor } => {
            out.push((*x, g.iter().map(|v| v * factor).collect()));
        }
        Op::Concat { parts, outer, inner } => {
            let total: usize = parts.iter().map(|(_, len)| len).sum();
            let mut offset = 0;
            for &(id, len) in parts {
                if needs(id) {
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..*outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    out.push((id, gp));
                }
                offset += len;
            }
        }
        Op::Softmax { x, dims } => {
            let y = node.data.data();
            let mut gx = vec![0.0; y.len()];
            for o in 0..dims.outer {
                for r in 0..dims.inner {
                    let idx = |j: usize| (o * dims.len + j) * dims.inner + r;
                    let dot: f64 = (0..dims.len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..dims.len {
                        gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            out.push((*x, gx));
        }
        Op::LogSoftmax { x, dims } => {
            let y = node.data.data();
            let mut gx = vec![0.0; y.len()];
            for o in 0..dims.outer {
                for r in 0..dims.inner {
                    let idx = |j: usize| (o * dims.len + j) * dims.inner + r;
                    let total: f64 = (0..dims.len).map(|j| g[idx(j)]).sum();
                    for j in 0..dims.len {
                        gx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * total;
                    }
                }
            }
            out.push((*x, gx));
        }
        Op::Unary { x, kind } => {
            let xs = data(*x);
            let ys = node.data.data();
            let gx = match kind {
                Unary::Abs => g.iter().zip(xs).map(|(gi, v)| if *v > 0.0 { *gi } else if *v < 0.0 { -gi } else { 0.0 }).collect(),
                Unary::Relu => g.iter().zip(xs).map(|(gi, v)| if *v > 0.0 { *gi } else { 0.0 }).collect(),
                Unary::Tanh => g.iter().zip(ys).map(|(gi, y)| gi * (1.0 - y * y)).collect(),
                Unary::Sigmoid => g.iter().zip(ys).map(|(gi, y)| gi * y * (1.0 - y)).collect(),
                Unary::Square => g.iter().zip(xs).map(|(gi, v)| 2.0 * gi * v).collect(),
                // zero where the output is zero (subgradient at the origin)
                Unary::Sqrt => g.iter().zip(ys).map(|(gi, y)| if *y > 0.0 { gi / (2.0 * y) } else { 0.0 }).collect(),
                Unary::Log => g.iter().zip(xs).map(|(gi, v)| gi / v).collect(),
            };
            out.push((*x, gx));
        }
        Op::Sum { x, dims } | Op::Mean { x, dims } => {
            let n = before[*x].data.len();
            let mean = matches!(node.op, Op::Mean { .. });
            let gx = match dims {
                None => {
                    let v = if mean { g[0] / n.max(1) as f64 } else { g[0] };
                    vec![v; n]
                }
                Some(d) => {
                    let scale = if mean { 1.0 / d.len.max(1) as f64 } else { 1.0 };
                    let mut gx = vec![0.0; n];
                    for o in 0..d.outer {
                        for j in 0..d.len {
                            for r in 0..d.inner {
                                gx[(o * d.len + j) * d.inner + r] = g[o * d.inner + r] * scale;
                            }
                        }
                    }
                    gx
                }
            };
            out.push((*x, gx));
        }
        Op::Slice { x, dims, start } => {
            let len = node.data.shape().iter().product::<usize>() / (dims.outer * dims.inner).max(1);
            let mut gx = vec![0.0; before[*x].data.len()];
            for o in 0..dims.outer {
                let base = (o * dims.len + start) * dims.inner;
                let src = &g[o * len * dims.inner..(o + 1) * len * dims.inner];
                gx[base..base + len * dims.inner].copy_from_slice(src);
            }
            out.push((*x, gx));
        }
        Op::Reshape { x } => out.push((*x, g.to_vec())),
    }
    out
}
