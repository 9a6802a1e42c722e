use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn check_affine(op: &'static str, c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            op,
            format!("gamma {:?} / beta {:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

pub(crate) struct Normalized {
    pub out: Tensor,
    pub xhat: Tensor,
    /// One entry per normalization group (batch item for gLN, channel for BN).
    pub inv_std: Vec<f64>,
}

pub(crate) fn gln_impl(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Normalized> {
    let (b, c, l) = x.dims3("global_layer_norm")?;
    check_affine("global_layer_norm", c, gamma, beta)?;
    let n = (c * l) as f64;
    let mut xhat = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    let mut inv_std = Vec::with_capacity(b);
    for bi in 0..b {
        let xs = &x.data()[bi * c * l..(bi + 1) * c * l];
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for ci in 0..c {
            let (g, bb) = (gamma.data()[ci], beta.data()[ci]);
            for t in 0..l {
                let i = bi * c * l + ci * l + t;
                let h = (x.data()[i] - mean) * is;
                xhat[i] = h;
                out[i] = g * h + bb;
            }
        }
    }
    Ok(Normalized {
        out: Tensor::from_parts(x.shape().to_vec(), out),
        xhat: Tensor::from_parts(x.shape().to_vec(), xhat),
        inv_std,
    })
}

/// Global layer normalization: statistics over channels and time jointly per
/// batch item, then a per-channel affine.
pub fn global_layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(gln_impl(x, gamma, beta, eps)?.out)
}

pub(crate) struct AffineGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub(crate) fn gln_backward(gy: &Tensor, gamma: &Tensor, saved: &Normalized) -> AffineGrads {
    let (b, c, l) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let n = (c * l) as f64;
    let xh = saved.xhat.data();
    let g = gy.data();
    let mut gx = vec![0.0; gy.numel()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for bi in 0..b {
        let mut sum_gh = 0.0;
        let mut sum_ghx = 0.0;
        for ci in 0..c {
            for t in 0..l {
                let i = bi * c * l + ci * l + t;
                let gh = g[i] * gamma.data()[ci];
                sum_gh += gh;
                sum_ghx += gh * xh[i];
                gg[ci] += g[i] * xh[i];
                gb[ci] += g[i];
            }
        }
        let is = saved.inv_std[bi];
        for ci in 0..c {
            for t in 0..l {
                let i = bi * c * l + ci * l + t;
                let gh = g[i] * gamma.data()[ci];
                gx[i] = is / n * (n * gh - sum_gh - xh[i] * sum_ghx);
            }
        }
    }
    AffineGrads {
        x: Tensor::from_parts(gy.shape().to_vec(), gx),
        gamma: Tensor::from_parts(vec![c], gg),
        beta: Tensor::from_parts(vec![c], gb),
    }
}

/// `(batch, channels, length)` view of a `[B,C]` or `[B,C,L]` tensor.
fn bn_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [b, c] => Ok((b, c, 1)),
        [b, c, l] => Ok((b, c, l)),
        _ => Err(shape_err("batch_norm1d", format!("expected [B,C] or [B,C,L], got {:?}", x.shape()))),
    }
}

pub(crate) struct BatchNormed {
    pub norm: Normalized,
    /// Updated (running_mean, running_var) in train mode.
    pub running: Option<(Tensor, Tensor)>,
}

/// Per-channel batch normalization over batch (and time) axes.
pub struct BatchNormArgs<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a Tensor,
    pub running_var: &'a Tensor,
    pub mode: Mode,
    pub eps: f64,
    pub momentum: f64,
}

pub(crate) fn batch_norm_impl(x: &Tensor, a: &BatchNormArgs<'_>) -> Result<BatchNormed> {
    let (b, c, l) = bn_dims(x)?;
    check_affine("batch_norm1d", c, a.gamma, a.beta)?;
    check_affine("batch_norm1d", c, a.running_mean, a.running_var)?;
    let n = b * l;
    let at = |bi: usize, ci: usize, t: usize| (bi * c + ci) * l + t;
    let mut xhat = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    let mut inv_std = Vec::with_capacity(c);
    let mut new_mean = a.running_mean.clone();
    let mut new_var = a.running_var.clone();
    for ci in 0..c {
        let (mean, var) = match a.mode {
            Mode::Train => {
                let mut s = 0.0;
                for bi in 0..b {
                    for t in 0..l {
                        s += x.data()[at(bi, ci, t)];
                    }
                }
                let mean = s / n as f64;
                let mut v = 0.0;
                for bi in 0..b {
                    for t in 0..l {
                        let d = x.data()[at(bi, ci, t)] - mean;
                        v += d * d;
                    }
                }
                let var = v / n as f64;
                let unbiased = if n > 1 { v / (n - 1) as f64 } else { var };
                let m = a.momentum;
                new_mean.data_mut()[ci] = (1.0 - m) * a.running_mean.data()[ci] + m * mean;
                new_var.data_mut()[ci] = (1.0 - m) * a.running_var.data()[ci] + m * unbiased;
                (mean, var)
            }
            Mode::Eval => (a.running_mean.data()[ci], a.running_var.data()[ci]),
        };
        let is = 1.0 / (var + a.eps).sqrt();
        inv_std.push(is);
        let (g, bb) = (a.gamma.data()[ci], a.beta.data()[ci]);
        for bi in 0..b {
            for t in 0..l {
                let i = at(bi, ci, t);
                let h = (x.data()[i] - mean) * is;
                xhat[i] = h;
                out[i] = g * h + bb;
            }
        }
    }
    Ok(BatchNormed {
        norm: Normalized {
            out: Tensor::from_parts(x.shape().to_vec(), out),
            xhat: Tensor::from_parts(x.shape().to_vec(), xhat),
            inv_std,
        },
        running: (a.mode == Mode::Train).then_some((new_mean, new_var)),
    })
}

/// Forward-only batch norm; returns the output and, in train mode, the
/// updated running statistics.
pub fn batch_norm1d(x: &Tensor, args: &BatchNormArgs<'_>) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
    let r = batch_norm_impl(x, args)?;
    Ok((r.norm.out, r.running))
}

pub(crate) fn batch_norm_backward(gy: &Tensor, gamma: &Tensor, saved: &Normalized, mode: Mode) -> AffineGrads {
    let (b, c, l) = bn_dims(gy).expect("shape checked in forward");
    let n = (b * l) as f64;
    let at = |bi: usize, ci: usize, t: usize| (bi * c + ci) * l + t;
    let xh = saved.xhat.data();
    let g = gy.data();
    let mut gx = vec![0.0; gy.numel()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for ci in 0..c {
        let gam = gamma.data()[ci];
        let is = saved.inv_std[ci];
        let mut sum_gh = 0.0;
        let mut sum_ghx = 0.0;
        for bi in 0..b {
            for t in 0..l {
                let i = at(bi, ci, t);
                gg[ci] += g[i] * xh[i];
                gb[ci] += g[i];
                sum_gh += g[i] * gam;
                sum_ghx += g[i] * gam * xh[i];
            }
        }
        for bi in 0..b {
            for t in 0..l {
                let i = at(bi, ci, t);
                let gh = g[i] * gam;
                gx[i] = match mode {
                    Mode::Train => is / n * (n * gh - sum_gh - xh[i] * sum_ghx),
                    Mode::Eval => gh * is,
                };
            }
        }
    }
    AffineGrads {
        x: Tensor::from_parts(gy.shape().to_vec(), gx),
        gamma: Tensor::from_parts(vec![c], gg),
        beta: Tensor::from_parts(vec![c], gb),
    }
}
