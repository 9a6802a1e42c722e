use crate::error::{invalid, shape_err, Result};
use crate::ops::gemm::gemm;
use crate::tensor::{axis_split, strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Leaky slope shared by all channels; the learnable per-channel form is
    /// [`crate::Tape::prelu`].
    Prelu(f64),
    Sigmoid,
    Tanh,
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Prelu(a) => x.map(|v| if v >= 0.0 { v } else { a * v }),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => x.map(f64::tanh),
    }
}

/// Per-channel PReLU; `a` has one slope per channel (axis 1) or a single shared slope.
pub fn prelu(x: &Tensor, a: &Tensor) -> Result<Tensor> {
    let (c, inner) = prelu_dims(x, a)?;
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < 0.0 {
            *v *= a.data()[if c == 1 { 0 } else { (i / inner) % c }];
        }
    }
    Ok(out)
}

/// (slopes, elements per channel row) for PReLU broadcasting.
pub(crate) fn prelu_dims(x: &Tensor, a: &Tensor) -> Result<(usize, usize)> {
    if x.rank() < 2 {
        return Err(shape_err("prelu", format!("input {:?} lacks a channel axis", x.shape())));
    }
    let c = x.shape()[1];
    let inner: usize = x.shape()[2..].iter().product();
    match a.shape() {
        [1] => Ok((1, inner)),
        [n] if *n == c => Ok((c, inner)),
        s => Err(shape_err("prelu", format!("slopes {s:?} for {c} channels"))),
    }
}

/// Softmax along `axis`, stabilized by max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(invalid("softmax", format!("axis {axis} for rank {}", x.rank())));
    }
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                m = m.max(d[at(j)]);
            }
            let mut s = 0.0;
            for j in 0..n {
                let e = (d[at(j)] - m).exp();
                d[at(j)] = e;
                s += e;
            }
            for j in 0..n {
                d[at(j)] /= s;
            }
        }
    }
    Ok(out)
}

pub(crate) fn softmax_backward(y: &Tensor, gy: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_split(y.shape(), axis);
    let mut gx = vec![0.0; y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let dot: f64 = (0..n).map(|j| y.data()[at(j)] * gy.data()[at(j)]).sum();
            for j in 0..n {
                gx[at(j)] = y.data()[at(j)] * (gy.data()[at(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), gx)
}

/// `x·Wᵀ + b` for `x: [B,Din]`, `W: [Dout,Din]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (batch, din) = x.dims2("linear")?;
    let (dout, wdin) = w.dims2("linear")?;
    if din != wdin {
        return Err(shape_err("linear", format!("input {:?} vs weight {:?}", x.shape(), w.shape())));
    }
    let mut out = vec![0.0; batch * dout];
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(shape_err("linear", format!("bias {:?} for Dout={dout}", b.shape())));
        }
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(batch, din, dout, x.data(), (din, 1), w.data(), (1, din), 1.0, &mut out, (dout, 1));
    Ok(Tensor::from_parts(vec![batch, dout], out))
}

pub(crate) fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    need: [bool; 3],
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let (batch, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    let gx = need[0].then(|| {
        let mut gx = vec![0.0; batch * din];
        gemm(batch, dout, din, gy.data(), (dout, 1), w.data(), (din, 1), 0.0, &mut gx, (din, 1));
        Tensor::from_parts(vec![batch, din], gx)
    });
    let gw = need[1].then(|| {
        let mut gw = vec![0.0; dout * din];
        gemm(dout, batch, din, gy.data(), (1, dout), x.data(), (din, 1), 0.0, &mut gw, (din, 1));
        Tensor::from_parts(vec![dout, din], gw)
    });
    let gb = need[2].then(|| {
        let mut gb = vec![0.0; dout];
        for row in gy.data().chunks(dout) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        Tensor::from_parts(vec![dout], gb)
    });
    (gx, gw, gb)
}

/// Output shape of a same-rank broadcast, where every dimension pair is equal
/// or one side is 1.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(shape_err(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Strides of `shape` viewed inside `out`, zero along broadcast dimensions.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    strides(shape)
        .into_iter()
        .zip(shape.iter().zip(out))
        .map(|(s, (&d, &o))| if d == 1 && o != 1 { 0 } else { s })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out`.
pub(crate) fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let n: usize = out.iter().product();
    let rank = out.len();
    let last = rank - 1;
    let (inner, ia, ib) = (out[last], sa[last], sb[last]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut i = 0;
    while i < n {
        for t in 0..inner {
            f(i + t, oa + t * ia, ob + t * ib);
        }
        i += inner;
        // advance the odometer over all but the last axis
        let mut ax = last;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let mut out = vec![0.0; shape.iter().product()];
    for_each_broadcast(a.shape(), b.shape(), &shape, |i, ia, ib| {
        out[i] = f(a.data()[ia], b.data()[ib]);
    });
    Ok(Tensor::from_parts(shape, out))
}

/// Sums `g` (shaped like the broadcast output) back down to `shape`.
pub(crate) fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = vec![0.0; shape.iter().product()];
    for_each_broadcast(shape, shape, g.shape(), |i, ia, _| {
        out[ia] += g.data()[i];
    });
    Tensor::from_parts(shape.to_vec(), out)
}

pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or(crate::TensorError::Empty { op: "concat" })?;
    if axis >= first.rank() {
        return Err(invalid("concat", format!("axis {axis} for rank {}", first.rank())));
    }
    for x in xs {
        let same = x.rank() == first.rank()
            && x.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(shape_err("concat", format!("{:?} vs {:?} along axis {axis}", x.shape(), first.shape())));
        }
    }
    let total: usize = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let (outer, _, inner) = axis_split(&shape, axis);
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.rank() || len == 0 || start + len > x.shape()[axis] {
        return Err(invalid(
            "slice",
            format!("[{start}..{}) on axis {axis} of {:?}", start + len, x.shape()),
        ));
    }
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * n * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Ok(Tensor::from_parts(shape, out))
}

/// Sum along `axis`, keeping it as a length-1 dimension.
pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(invalid("sum_axis", format!("axis {axis} for rank {}", x.rank())));
    }
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let row = &x.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
            for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::from_parts(shape, out))
}
