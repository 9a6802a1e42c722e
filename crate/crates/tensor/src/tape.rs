//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Nodes are appended in execution order, so the record is topologically
//! sorted by construction and `backward` is a single reverse sweep.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{invalid, shape_err, Result, TensorError};
use crate::ops::basic::{
    self, broadcast_binary, broadcast_shape, linear_backward, prelu_dims, reduce_to,
    softmax_backward, Activation,
};
use crate::ops::conv::{self, Conv1dSpec};
use crate::ops::norm::{self, BatchNormArgs, Mode, Normalized};
use crate::ops::pool::{self, PoolKind};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{axis_split, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Smallest radicand used when differentiating a clamped square root.
pub const SQRT_GRAD_FLOOR: f64 = 1e-10;

/// An operation whose forward value is computed outside the tape but whose
/// vector-Jacobian product the tape must replay.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;

    /// One gradient per input; entries for inputs with `needs[i] == false`
    /// may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Act(Activation),
    Abs,
    Log1p,
    Square,
    SqrtClamped,
    Exp,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    Param,
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    Prelu { x: Var, a: Var },
    Conv1d { x: Var, w: Var, b: Option<Var>, spec: Conv1dSpec },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var>, stride: usize },
    Pool1d { x: Var, kind: PoolKind, k: usize, s: usize, argmax: Option<Vec<usize>> },
    SumAxis { x: Var },
    SumAll(Var),
    Expand(Var),
    Reshape(Var),
    Softmax { x: Var, axis: usize },
    GlobalLayerNorm { x: Var, gamma: Var, beta: Var, saved: Normalized },
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: Normalized, mode: Mode },
    Linear { x: Var, w: Var, b: Option<Var> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    NormalizeRows(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed primitives; confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

/// Adjoints for every node of a tape after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds each parameter's adjoint into its `grad` slot.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                store.param_mut(id).grad.add_assign(g);
            }
        }
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }
}

fn acc(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn any_rg(&self, vs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vs.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Records a constant input (no gradient).
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a free variable that receives a gradient but is not a stored parameter.
    pub fn variable(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.borrow().get(&id) {
            return *v;
        }
        let v = self.push(store.param(id).value.clone(), Op::Param, true);
        self.params.borrow_mut().insert(id, v);
        v
    }

    fn unary(&self, x: Var, u: Unary) -> Var {
        let xv = self.value(x);
        let out = match u {
            Unary::Act(a) => basic::activation(&xv, a),
            Unary::Abs => xv.map(f64::abs),
            Unary::Log1p => xv.map(f64::ln_1p),
            Unary::Square => xv.map(|v| v * v),
            Unary::SqrtClamped => xv.map(|v| v.max(0.0).sqrt()),
            Unary::Exp => xv.map(f64::exp),
            Unary::Scale(k) => xv.map(|v| v * k),
            Unary::AddScalar(k) => xv.map(|v| v + k),
        };
        self.push(out, Op::Unary(x, u), self.rg(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Unary::Act(Activation::Relu))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Unary::Act(Activation::Sigmoid))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Unary::Act(Activation::Tanh))
    }

    pub fn activation(&self, x: Var, kind: Activation) -> Var {
        self.unary(x, Unary::Act(kind))
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn log1p(&self, x: Var) -> Var {
        self.unary(x, Unary::Log1p)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    /// `sqrt(max(x, 0))`; the derivative is zero where `x <= 0`.
    pub fn sqrt_clamped(&self, x: Var) -> Var {
        self.unary(x, Unary::SqrtClamped)
    }

    pub fn scale(&self, x: Var, k: f64) -> Var {
        self.unary(x, Unary::Scale(k))
    }

    pub fn add_scalar(&self, x: Var, k: f64) -> Var {
        self.unary(x, Unary::AddScalar(k))
    }

    fn binary(&self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (name, f): (&'static str, fn(f64, f64) -> f64) = match op {
            Binary::Add => ("add", |x, y| x + y),
            Binary::Sub => ("sub", |x, y| x - y),
            Binary::Mul => ("mul", |x, y| x * y),
        };
        let out = broadcast_binary(name, &av, &bv, f)?;
        Ok(self.push(out, Op::Binary(a, b, op), self.any_rg(&[a, b])))
    }

    /// Elementwise sum with same-rank broadcasting of size-1 dimensions.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn prelu(&self, x: Var, a: Var) -> Result<Var> {
        let out = basic::prelu(&self.value(x), &self.value(a))?;
        Ok(self.push(out, Op::Prelu { x, a }, self.any_rg(&[x, a])))
    }

    pub fn conv1d(&self, x: Var, w: Var, b: Option<Var>, spec: Conv1dSpec) -> Result<Var> {
        let bv = b.map(|b| self.value(b));
        let out = conv::conv1d(&self.value(x), &self.value(w), bv.as_deref(), &spec)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(out, Op::Conv1d { x, w, b, spec }, self.any_rg(&ins)))
    }

    pub fn conv_transpose1d(&self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let bv = b.map(|b| self.value(b));
        let out = conv::conv_transpose1d(&self.value(x), &self.value(w), bv.as_deref(), stride)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(out, Op::ConvTranspose1d { x, w, b, stride }, self.any_rg(&ins)))
    }

    pub fn pool1d(&self, x: Var, kind: PoolKind, k: usize, s: usize) -> Result<Var> {
        let p = pool::pool1d_impl(&self.value(x), kind, k, s)?;
        Ok(self.push(
            p.out,
            Op::Pool1d {
                x,
                kind,
                k,
                s,
                argmax: p.argmax,
            },
            self.rg(x),
        ))
    }

    /// Sum along `axis`, keeping it as a length-1 dimension.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let out = basic::sum_axis(&self.value(x), axis)?;
        Ok(self.push(out, Op::SumAxis { x }, self.rg(x)))
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let n = self
            .shape(x)
            .get(axis)
            .copied()
            .ok_or_else(|| invalid("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Mean over the last (temporal) axis of `[B,C,L]`, giving `[B,C,1]`.
    pub fn adaptive_avg_pool(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 3 {
            return Err(shape_err("adaptive_avg_pool", format!("expected [B,C,L], got {shape:?}")));
        }
        self.mean_axis(x, 2)
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), self.rg(x))
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Broadcasts size-1 dimensions of `x` up to `shape`.
    pub fn expand(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let target = broadcast_shape("expand", xv.shape(), shape)?;
        if target != shape {
            return Err(shape_err("expand", format!("{:?} does not expand to {shape:?}", xv.shape())));
        }
        let out = broadcast_binary("expand", &xv, &Tensor::zeros(shape.to_vec()), |a, _| a)?;
        Ok(self.push(out, Op::Expand(x), self.rg(x)))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), self.rg(x)))
    }

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let out = basic::softmax(&self.value(x), axis)?;
        Ok(self.push(out, Op::Softmax { x, axis }, self.rg(x)))
    }

    pub fn global_layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let saved = norm::gln_impl(&self.value(x), &self.value(gamma), &self.value(beta), norm::NORM_EPS)?;
        let out = saved.out.clone();
        let rg = self.any_rg(&[x, gamma, beta]);
        Ok(self.push(out, Op::GlobalLayerNorm { x, gamma, beta, saved }, rg))
    }

    /// Batch norm over `[B,C]` or `[B,C,L]`. In train mode the updated running
    /// statistics are returned for the caller to store.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&Tensor, &Tensor),
        mode: Mode,
    ) -> Result<(Var, Option<(Tensor, Tensor)>)> {
        let (g, b) = (self.value(gamma), self.value(beta));
        let r = norm::batch_norm_impl(
            &self.value(x),
            &BatchNormArgs {
                gamma: &g,
                beta: &b,
                running_mean: running.0,
                running_var: running.1,
                mode,
                eps: norm::NORM_EPS,
                momentum: norm::BN_MOMENTUM,
            },
        )?;
        let out = r.norm.out.clone();
        let rg = self.any_rg(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: r.norm,
                mode,
            },
            rg,
        );
        Ok((v, r.running))
    }

    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let bv = b.map(|b| self.value(b));
        let out = basic::linear(&self.value(x), &self.value(w), bv.as_deref())?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, self.any_rg(&ins)))
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = xs.iter().map(|&v| self.value(v)).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let out = basic::concat(&refs, axis)?;
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, self.any_rg(xs)))
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = basic::slice(&self.value(x), axis, start, len)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, self.rg(x)))
    }

    /// L2-normalizes each row of a `[N,D]` tensor.
    pub fn normalize_rows(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, d) = xv.dims2("normalize_rows")?;
        let mut out = xv.as_ref().clone();
        for row in out.data_mut().chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(invalid("normalize_rows", "zero-norm row"));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(self.push(out, Op::NormalizeRows(x), self.rg(x)))
    }

    pub fn custom(&self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.any_rg(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(&nodes, node, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        let params = self.params.borrow().iter().map(|(p, v)| (*p, *v)).collect();
        Ok(Gradients { grads, params })
    }

    /// Backward sweep followed by accumulation into `store`; returns the loss value.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<f64> {
        let g = self.backward(loss)?;
        g.accumulate_into(store);
        Ok(self.value(loss).item())
    }

    fn propagate(
        &self,
        nodes: &[Node],
        node: &Node,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };
        let need = |v: Var| nodes[v.0].requires_grad;
        let y = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Unary(x, u) => {
                let xv = val(*x);
                let g: Vec<f64> = match *u {
                    Unary::Act(Activation::Relu) => zip3(gy, xv, y, |g, x, _| if x > 0.0 { g } else { 0.0 }),
                    Unary::Act(Activation::Prelu(a)) => zip3(gy, xv, y, |g, x, _| if x >= 0.0 { g } else { a * g }),
                    Unary::Act(Activation::Sigmoid) => zip3(gy, xv, y, |g, _, y| g * y * (1.0 - y)),
                    Unary::Act(Activation::Tanh) => zip3(gy, xv, y, |g, _, y| g * (1.0 - y * y)),
                    Unary::Abs => zip3(gy, xv, y, |g, x, _| if x > 0.0 { g } else if x < 0.0 { -g } else { 0.0 }),
                    Unary::Log1p => zip3(gy, xv, y, |g, x, _| g / (1.0 + x)),
                    Unary::Square => zip3(gy, xv, y, |g, x, _| 2.0 * x * g),
                    Unary::SqrtClamped => zip3(gy, xv, y, |g, x, _| {
                        if x > 0.0 {
                            0.5 * g / x.max(SQRT_GRAD_FLOOR).sqrt()
                        } else {
                            0.0
                        }
                    }),
                    Unary::Exp => zip3(gy, xv, y, |g, _, y| g * y),
                    Unary::Scale(k) => gy.data().iter().map(|g| g * k).collect(),
                    Unary::AddScalar(_) => gy.data().to_vec(),
                };
                acc(&mut grads[x.0], Tensor::from_parts(xv.shape().to_vec(), g));
            }
            Op::Binary(a, b, op) => {
                let (av, bv) = (val(*a), val(*b));
                if need(*a) {
                    let ga = match op {
                        Binary::Add | Binary::Sub => gy.clone(),
                        Binary::Mul => broadcast_binary("mul", gy, bv, |g, b| g * b)?,
                    };
                    acc(&mut grads[a.0], reduce_to(&ga, av.shape()));
                }
                if need(*b) {
                    let gb = match op {
                        Binary::Add => gy.clone(),
                        Binary::Sub => gy.map(|g| -g),
                        Binary::Mul => broadcast_binary("mul", gy, av, |g, a| g * a)?,
                    };
                    acc(&mut grads[b.0], reduce_to(&gb, bv.shape()));
                }
            }
            Op::Prelu { x, a } => {
                let (xv, av) = (val(*x), val(*a));
                let (c, inner) = prelu_dims(xv, av)?;
                let slope = |i: usize| if c == 1 { 0 } else { (i / inner) % c };
                if need(*x) {
                    let g = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .enumerate()
                        .map(|(i, (&x, &g))| if x >= 0.0 { g } else { av.data()[slope(i)] * g })
                        .collect();
                    acc(&mut grads[x.0], Tensor::from_parts(xv.shape().to_vec(), g));
                }
                if need(*a) {
                    let mut ga = vec![0.0; av.numel()];
                    for (i, (&x, &g)) in xv.data().iter().zip(gy.data()).enumerate() {
                        if x < 0.0 {
                            ga[slope(i)] += g * x;
                        }
                    }
                    acc(&mut grads[a.0], Tensor::from_parts(av.shape().to_vec(), ga));
                }
            }
            Op::Conv1d { x, w, b, spec } => {
                let nb = b.is_some_and(need);
                let g = conv::conv1d_backward(val(*x), val(*w), gy, spec, [need(*x), need(*w), nb])?;
                push_grads(grads, &[Some(*x), Some(*w), *b], [g.x, g.w, g.b]);
            }
            Op::ConvTranspose1d { x, w, b, stride } => {
                let nb = b.is_some_and(need);
                let g = conv::conv_transpose1d_backward(val(*x), val(*w), gy, *stride, [need(*x), need(*w), nb])?;
                push_grads(grads, &[Some(*x), Some(*w), *b], [g.x, g.w, g.b]);
            }
            Op::Pool1d { x, kind, k, s, argmax } => {
                let g = pool::pool1d_backward(val(*x).shape(), gy, *kind, *k, *s, argmax.as_deref());
                acc(&mut grads[x.0], g);
            }
            Op::SumAxis { x, .. } | Op::Expand(x) => {
                let xv = val(*x);
                let g = match &node.op {
                    Op::SumAxis { .. } => broadcast_binary("sum_axis", gy, &Tensor::zeros(xv.shape().to_vec()), |g, _| g)?,
                    _ => reduce_to(gy, xv.shape()),
                };
                acc(&mut grads[x.0], g);
            }
            Op::SumAll(x) => {
                let xv = val(*x);
                acc(&mut grads[x.0], Tensor::full(xv.shape().to_vec(), gy.item()));
            }
            Op::Reshape(x) => {
                acc(&mut grads[x.0], Tensor::from_parts(val(*x).shape().to_vec(), gy.data().to_vec()));
            }
            Op::Softmax { x, axis } => {
                acc(&mut grads[x.0], softmax_backward(y, gy, *axis));
            }
            Op::GlobalLayerNorm { x, gamma, beta, saved } => {
                let g = norm::gln_backward(gy, val(*gamma), saved);
                push_affine(grads, nodes, (*x, *gamma, *beta), g);
            }
            Op::BatchNorm { x, gamma, beta, saved, mode } => {
                let g = norm::batch_norm_backward(gy, val(*gamma), saved, *mode);
                push_affine(grads, nodes, (*x, *gamma, *beta), g);
            }
            Op::Linear { x, w, b } => {
                let nb = b.is_some_and(need);
                let (gx, gw, gb) = linear_backward(val(*x), val(*w), gy, [need(*x), need(*w), nb]);
                push_grads(grads, &[Some(*x), Some(*w), *b], [gx, gw, gb]);
            }
            Op::Concat { xs, axis } => {
                let mut start = 0;
                for &x in xs {
                    let n = val(x).shape()[*axis];
                    if need(x) {
                        acc(&mut grads[x.0], basic::slice(gy, *axis, start, n)?);
                    }
                    start += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let xv = val(*x);
                let (outer, n, inner) = axis_split(xv.shape(), *axis);
                let len = gy.shape()[*axis];
                let mut g = vec![0.0; xv.numel()];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    g[dst..dst + len * inner].copy_from_slice(&gy.data()[o * len * inner..(o + 1) * len * inner]);
                }
                acc(&mut grads[x.0], Tensor::from_parts(xv.shape().to_vec(), g));
            }
            Op::NormalizeRows(x) => {
                let xv = val(*x);
                let d = xv.shape()[1];
                let mut g = vec![0.0; xv.numel()];
                for (r, (xr, (yr, gr))) in xv
                    .data()
                    .chunks(d)
                    .zip(y.data().chunks(d).zip(gy.data().chunks(d)))
                    .enumerate()
                {
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        g[r * d + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                acc(&mut grads[x.0], Tensor::from_parts(xv.shape().to_vec(), g));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| need(v)).collect();
                let gs = op.backward(&ins, y, gy, &needs)?;
                if gs.len() != inputs.len() {
                    return Err(invalid(op.name(), "backward returned wrong number of gradients"));
                }
                for ((&v, g), n) in inputs.iter().zip(gs).zip(needs) {
                    if let (Some(g), true) = (g, n) {
                        if g.shape() != val(v).shape() {
                            return Err(shape_err(op.name(), format!("gradient {:?} for input {:?}", g.shape(), val(v).shape())));
                        }
                        acc(&mut grads[v.0], g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn zip3(gy: &Tensor, x: &Tensor, y: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
    gy.data()
        .iter()
        .zip(x.data())
        .zip(y.data())
        .map(|((&g, &x), &y)| f(g, x, y))
        .collect()
}

fn push_grads<const N: usize>(grads: &mut [Option<Tensor>], vars: &[Option<Var>; N], gs: [Option<Tensor>; N]) {
    for (v, g) in vars.iter().zip(gs) {
        if let (Some(v), Some(g)) = (v, g) {
            acc(&mut grads[v.0], g);
        }
    }
}

fn push_affine(grads: &mut [Option<Tensor>], nodes: &[Node], (x, gamma, beta): (Var, Var, Var), g: norm::AffineGrads) {
    for (v, t) in [(x, g.x), (gamma, g.gamma), (beta, g.beta)] {
        if nodes[v.0].requires_grad {
            acc(&mut grads[v.0], t);
        }
    }
}
