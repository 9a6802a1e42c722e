//! 1-D convolution kernels (cross-correlation, no kernel flip).
//!
//! Ungrouped convolutions go through im2col + GEMM; grouped ones (depthwise in
//! practice) use direct loops.

use crate::error::{invalid, shape_err, Result, TensorError};
use crate::ops::gemm::gemm;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding totalling `dilation·(K−1)`, the odd sample going left.
    /// Output length is `ceil(L / stride)`.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: Padding::Valid,
            groups: 1,
        }
    }
}

impl Conv1dSpec {
    pub fn same() -> Self {
        Self {
            padding: Padding::Same,
            ..Self::default()
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// (left, right) zero padding for a kernel of `k` taps.
    pub fn pads(&self, k: usize) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = self.dilation * (k - 1);
                let left = total.div_ceil(2);
                (left, total - left)
            }
        }
    }

    pub fn out_len(&self, len: usize, k: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(invalid("conv1d", "stride and dilation must be >= 1"));
        }
        let (l, r) = self.pads(k);
        let padded = len + l + r;
        let span = self.dilation * (k - 1) + 1;
        if span > padded {
            return Err(TensorError::KernelTooLong {
                op: "conv1d",
                span,
                padded,
            });
        }
        Ok((padded - span) / self.stride + 1)
    }
}

/// Output positions `t` in `[lo, hi)` whose input index `t·stride + offset`
/// falls inside `[0, len)`.
#[inline]
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

pub(crate) struct ConvShape {
    pub batch: usize,
    pub cin: usize,
    pub len: usize,
    pub cout: usize,
    pub k: usize,
    pub out_len: usize,
}

pub(crate) fn check_conv1d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &Conv1dSpec,
) -> Result<ConvShape> {
    let (batch, cin, len) = x.dims3("conv1d")?;
    let (cout, cin_g, k) = w.dims3("conv1d")?;
    let g = spec.groups;
    if g == 0 || cin % g != 0 || cout % g != 0 {
        return Err(invalid(
            "conv1d",
            format!("groups={g} must divide Cin={cin} and Cout={cout}"),
        ));
    }
    if cin_g != cin / g {
        return Err(shape_err(
            "conv1d",
            format!("weight {:?} expects Cin/groups={}, input has {cin}/{g}", w.shape(), cin_g),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err("conv1d", format!("bias {:?} for Cout={cout}", b.shape())));
        }
    }
    let out_len = spec.out_len(len, k)?;
    Ok(ConvShape {
        batch,
        cin,
        len,
        cout,
        k,
        out_len,
    })
}

fn is_pointwise(sh: &ConvShape, spec: &Conv1dSpec) -> bool {
    sh.k == 1 && spec.stride == 1 && sh.out_len == sh.len
}

/// Fills `cols[(ic·K + k)·Lout + t] = x[ic, t·s + k·d − padL]` (zero outside).
fn im2col(xb: &[f64], sh: &ConvShape, spec: &Conv1dSpec, cols: &mut [f64]) {
    let (pad_l, _) = spec.pads(sh.k);
    cols.fill(0.0);
    for ic in 0..sh.cin {
        let xrow = &xb[ic * sh.len..(ic + 1) * sh.len];
        for kk in 0..sh.k {
            let off = (kk * spec.dilation) as isize - pad_l as isize;
            let (lo, hi) = valid_range(off, spec.stride, sh.len, sh.out_len);
            let crow = &mut cols[(ic * sh.k + kk) * sh.out_len..(ic * sh.k + kk + 1) * sh.out_len];
            for t in lo..hi {
                crow[t] = xrow[(t as isize * spec.stride as isize + off) as usize];
            }
        }
    }
}

fn col2im_add(cols: &[f64], sh: &ConvShape, spec: &Conv1dSpec, gxb: &mut [f64]) {
    let (pad_l, _) = spec.pads(sh.k);
    for ic in 0..sh.cin {
        let grow = &mut gxb[ic * sh.len..(ic + 1) * sh.len];
        for kk in 0..sh.k {
            let off = (kk * spec.dilation) as isize - pad_l as isize;
            let (lo, hi) = valid_range(off, spec.stride, sh.len, sh.out_len);
            let crow = &cols[(ic * sh.k + kk) * sh.out_len..(ic * sh.k + kk + 1) * sh.out_len];
            for t in lo..hi {
                grow[(t as isize * spec.stride as isize + off) as usize] += crow[t];
            }
        }
    }
}

pub fn conv1d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &Conv1dSpec) -> Result<Tensor> {
    let sh = check_conv1d(x, w, b, spec)?;
    let mut out = vec![0.0; sh.batch * sh.cout * sh.out_len];
    let ckl = sh.cin * sh.k;
    if spec.groups == 1 {
        let pointwise = is_pointwise(&sh, spec);
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; ckl * sh.out_len] };
        for bi in 0..sh.batch {
            let xb = &x.data()[bi * sh.cin * sh.len..(bi + 1) * sh.cin * sh.len];
            let src: &[f64] = if pointwise {
                xb
            } else {
                im2col(xb, &sh, spec, &mut cols);
                &cols
            };
            let ob = &mut out[bi * sh.cout * sh.out_len..(bi + 1) * sh.cout * sh.out_len];
            gemm(
                sh.cout,
                ckl,
                sh.out_len,
                w.data(),
                (ckl, 1),
                src,
                (sh.out_len, 1),
                0.0,
                ob,
                (sh.out_len, 1),
            );
        }
    } else {
        grouped_forward(x.data(), w.data(), &sh, spec, &mut out);
    }
    if let Some(b) = b {
        for (row, bias) in out.chunks_mut(sh.out_len).zip(b.data().iter().cycle()) {
            row.iter_mut().for_each(|v| *v += bias);
        }
    }
    Ok(Tensor::from_parts(vec![sh.batch, sh.cout, sh.out_len], out))
}

fn grouped_forward(x: &[f64], w: &[f64], sh: &ConvShape, spec: &Conv1dSpec, out: &mut [f64]) {
    let (pad_l, _) = spec.pads(sh.k);
    let cin_g = sh.cin / spec.groups;
    let cout_g = sh.cout / spec.groups;
    for bi in 0..sh.batch {
        for oc in 0..sh.cout {
            let g = oc / cout_g;
            let orow = &mut out[(bi * sh.cout + oc) * sh.out_len..(bi * sh.cout + oc + 1) * sh.out_len];
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let xrow = &x[(bi * sh.cin + ic) * sh.len..(bi * sh.cin + ic + 1) * sh.len];
                for kk in 0..sh.k {
                    let wv = w[(oc * cin_g + icl) * sh.k + kk];
                    let off = (kk * spec.dilation) as isize - pad_l as isize;
                    let (lo, hi) = valid_range(off, spec.stride, sh.len, sh.out_len);
                    for t in lo..hi {
                        orow[t] += wv * xrow[(t as isize * spec.stride as isize + off) as usize];
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv1d`] with respect to the requested inputs.
pub struct Conv1dGrads {
    pub x: Option<Tensor>,
    pub w: Option<Tensor>,
    pub b: Option<Tensor>,
}

pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    spec: &Conv1dSpec,
    need: [bool; 3],
) -> Result<Conv1dGrads> {
    let sh = check_conv1d(x, w, None, spec)?;
    if gy.shape() != [sh.batch, sh.cout, sh.out_len] {
        return Err(shape_err("conv1d_backward", format!("grad {:?}", gy.shape())));
    }
    let [need_x, need_w, need_b] = need;
    let ckl = sh.cin / spec.groups * sh.k;
    let mut gx = need_x.then(|| vec![0.0; x.numel()]);
    let mut gw = need_w.then(|| vec![0.0; w.numel()]);

    if spec.groups == 1 && (need_x || need_w) {
        let pointwise = is_pointwise(&sh, spec);
        let mut cols = vec![0.0; ckl * sh.out_len];
        for bi in 0..sh.batch {
            let xb = &x.data()[bi * sh.cin * sh.len..(bi + 1) * sh.cin * sh.len];
            let gyb = &gy.data()[bi * sh.cout * sh.out_len..(bi + 1) * sh.cout * sh.out_len];
            if let Some(gw) = gw.as_mut() {
                let src: &[f64] = if pointwise {
                    xb
                } else {
                    im2col(xb, &sh, spec, &mut cols);
                    &cols
                };
                // gw[o, j] += Σ_t gy[o, t]·cols[j, t]
                gemm(
                    sh.cout,
                    sh.out_len,
                    ckl,
                    gyb,
                    (sh.out_len, 1),
                    src,
                    (1, sh.out_len),
                    1.0,
                    gw,
                    (ckl, 1),
                );
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[bi * sh.cin * sh.len..(bi + 1) * sh.cin * sh.len];
                if pointwise {
                    gemm(
                        ckl,
                        sh.cout,
                        sh.out_len,
                        w.data(),
                        (1, ckl),
                        gyb,
                        (sh.out_len, 1),
                        1.0,
                        gxb,
                        (sh.out_len, 1),
                    );
                } else {
                    gemm(
                        ckl,
                        sh.cout,
                        sh.out_len,
                        w.data(),
                        (1, ckl),
                        gyb,
                        (sh.out_len, 1),
                        0.0,
                        &mut cols,
                        (sh.out_len, 1),
                    );
                    col2im_add(&cols, &sh, spec, gxb);
                }
            }
        }
    } else if need_x || need_w {
        grouped_backward(x.data(), w.data(), gy.data(), &sh, spec, gx.as_deref_mut(), gw.as_deref_mut());
    }

    let gb = need_b.then(|| {
        let mut gb = vec![0.0; sh.cout];
        for (i, row) in gy.data().chunks(sh.out_len).enumerate() {
            gb[i % sh.cout] += row.iter().sum::<f64>();
        }
        Tensor::from_parts(vec![sh.cout], gb)
    });
    Ok(Conv1dGrads {
        x: gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        w: gw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        b: gb,
    })
}

fn grouped_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    sh: &ConvShape,
    spec: &Conv1dSpec,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    let (pad_l, _) = spec.pads(sh.k);
    let cin_g = sh.cin / spec.groups;
    let cout_g = sh.cout / spec.groups;
    let s = spec.stride as isize;
    for bi in 0..sh.batch {
        for oc in 0..sh.cout {
            let g = oc / cout_g;
            let grow = &gy[(bi * sh.cout + oc) * sh.out_len..(bi * sh.cout + oc + 1) * sh.out_len];
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let xoff = (bi * sh.cin + ic) * sh.len;
                for kk in 0..sh.k {
                    let widx = (oc * cin_g + icl) * sh.k + kk;
                    let off = (kk * spec.dilation) as isize - pad_l as isize;
                    let (lo, hi) = valid_range(off, spec.stride, sh.len, sh.out_len);
                    if let Some(gw) = gw.as_deref_mut() {
                        let mut acc = 0.0;
                        for t in lo..hi {
                            acc += grow[t] * x[xoff + (t as isize * s + off) as usize];
                        }
                        gw[widx] += acc;
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[widx];
                        for t in lo..hi {
                            gx[xoff + (t as isize * s + off) as usize] += wv * grow[t];
                        }
                    }
                }
            }
        }
    }
}

fn check_transpose(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    if stride == 0 {
        return Err(invalid("conv_transpose1d", "stride must be >= 1"));
    }
    if x.numel() == 0 {
        return Err(TensorError::Empty { op: "conv_transpose1d" });
    }
    let (batch, cin, len) = x.dims3("conv_transpose1d")?;
    let (wc, cout, k) = w.dims3("conv_transpose1d")?;
    if wc != cin {
        return Err(shape_err(
            "conv_transpose1d",
            format!("weight {:?} for input channels {cin}", w.shape()),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err("conv_transpose1d", format!("bias {:?}", b.shape())));
        }
    }
    Ok((batch, cin, len, cout, k))
}

/// Transposed convolution: `y[o, t·s + k] += x[i, t]·w[i, o, k]`.
/// Output length is `(L−1)·stride + K`.
pub fn conv_transpose1d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Result<Tensor> {
    let (batch, cin, len, cout, k) = check_transpose(x, w, b, stride)?;
    let out_len = (len - 1) * stride + k;
    let mut out = vec![0.0; batch * cout * out_len];
    for bi in 0..batch {
        let xb = &x.data()[bi * cin * len..(bi + 1) * cin * len];
        let ob = &mut out[bi * cout * out_len..(bi + 1) * cout * out_len];
        if let Some(b) = b {
            for (row, bv) in ob.chunks_mut(out_len).zip(b.data()) {
                row.fill(*bv);
            }
        }
        // y[oc, t·stride + kk] += Σ_ic w[ic, oc, kk]·x[ic, t]
        for kk in 0..k {
            gemm(
                cout,
                cin,
                len,
                &w.data()[kk..],
                (k, cout * k),
                xb,
                (len, 1),
                1.0,
                &mut ob[kk..],
                (out_len, stride),
            );
        }
    }
    Ok(Tensor::from_parts(vec![batch, cout, out_len], out))
}

pub fn conv_transpose1d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    stride: usize,
    need: [bool; 3],
) -> Result<Conv1dGrads> {
    let (batch, cin, len, cout, k) = check_transpose(x, w, None, stride)?;
    let out_len = (len - 1) * stride + k;
    if gy.shape() != [batch, cout, out_len] {
        return Err(shape_err("conv_transpose1d_backward", format!("grad {:?}", gy.shape())));
    }
    let [need_x, need_w, need_b] = need;
    let mut gx = need_x.then(|| vec![0.0; x.numel()]);
    let mut gw = need_w.then(|| vec![0.0; w.numel()]);
    for bi in 0..batch {
        let xb = &x.data()[bi * cin * len..(bi + 1) * cin * len];
        let gb = &gy.data()[bi * cout * out_len..(bi + 1) * cout * out_len];
        for kk in 0..k {
            if let Some(gw) = gw.as_mut() {
                // gw[ic, oc, kk] += Σ_t x[ic, t]·gy[oc, t·stride + kk]
                gemm(
                    cin,
                    len,
                    cout,
                    xb,
                    (len, 1),
                    &gb[kk..],
                    (stride, out_len),
                    1.0,
                    &mut gw[kk..],
                    (cout * k, k),
                );
            }
            if let Some(gx) = gx.as_mut() {
                // gx[ic, t] += Σ_oc w[ic, oc, kk]·gy[oc, t·stride + kk]
                gemm(
                    cin,
                    cout,
                    len,
                    &w.data()[kk..],
                    (cout * k, k),
                    &gb[kk..],
                    (out_len, stride),
                    1.0,
                    &mut gx[bi * cin * len..(bi + 1) * cin * len],
                    (len, 1),
                );
            }
        }
    }
    let gb = need_b.then(|| {
        let mut gb = vec![0.0; cout];
        for (i, row) in gy.data().chunks(out_len).enumerate() {
            gb[i % cout] += row.iter().sum::<f64>();
        }
        Tensor::from_parts(vec![cout], gb)
    });
    Ok(Conv1dGrads {
        x: gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        w: gw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        b: gb,
    })
}
