use crate::error::{invalid, Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

pub(crate) struct Pooled {
    pub out: Tensor,
    /// Flat input index of each output's maximum (max pooling only).
    pub argmax: Option<Vec<usize>>,
}

pub(crate) fn pool1d_impl(x: &Tensor, kind: PoolKind, k: usize, s: usize) -> Result<Pooled> {
    let (b, c, l) = x.dims3("pool1d")?;
    if k == 0 || s == 0 {
        return Err(invalid("pool1d", "kernel and stride must be >= 1"));
    }
    if k > l {
        return Err(TensorError::KernelTooLong {
            op: "pool1d",
            span: k,
            padded: l,
        });
    }
    let out_len = (l - k) / s + 1;
    let mut out = Vec::with_capacity(b * c * out_len);
    let mut argmax = (kind == PoolKind::Max).then(|| Vec::with_capacity(b * c * out_len));
    for (r, row) in x.data().chunks(l).enumerate() {
        for t in 0..out_len {
            let win = &row[t * s..t * s + k];
            match kind {
                PoolKind::Avg => out.push(win.iter().sum::<f64>() / k as f64),
                PoolKind::Max => {
                    let mut best = 0;
                    for (i, v) in win.iter().enumerate() {
                        if *v > win[best] {
                            best = i;
                        }
                    }
                    out.push(win[best]);
                    if let Some(a) = argmax.as_mut() {
                        a.push(r * l + t * s + best);
                    }
                }
            }
        }
    }
    Ok(Pooled {
        out: Tensor::from_parts(vec![b, c, out_len], out),
        argmax,
    })
}

/// Windowed max or mean over the last axis; output length `floor((L−k)/s)+1`.
pub fn pool1d(x: &Tensor, kind: PoolKind, k: usize, s: usize) -> Result<Tensor> {
    Ok(pool1d_impl(x, kind, k, s)?.out)
}

pub(crate) fn pool1d_backward(
    x_shape: &[usize],
    gy: &Tensor,
    kind: PoolKind,
    k: usize,
    s: usize,
    argmax: Option<&[usize]>,
) -> Tensor {
    let l = x_shape[2];
    let mut gx = Tensor::zeros(x_shape.to_vec());
    let out_len = gy.shape()[2];
    let g = gx.data_mut();
    match kind {
        PoolKind::Max => {
            for (i, &src) in argmax.expect("max pool saves argmax").iter().enumerate() {
                g[src] += gy.data()[i];
            }
        }
        PoolKind::Avg => {
            let inv = 1.0 / k as f64;
            for (r, grow) in gy.data().chunks(out_len).enumerate() {
                for (t, gv) in grow.iter().enumerate() {
                    for v in &mut g[r * l + t * s..r * l + t * s + k] {
                        *v += gv * inv;
                    }
                }
            }
        }
    }
    gx
}

/// Mean over the temporal (last) axis: `[B,C,L] → [B,C,1]`.
pub fn adaptive_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, l) = x.dims3("adaptive_avg_pool")?;
    let data = x.data().chunks(l).map(|r| r.iter().sum::<f64>() / l as f64).collect();
    Ok(Tensor::from_parts(vec![b, c, 1], data))
}
