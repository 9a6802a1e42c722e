use mrrawnet_tensor::{Conv1dSpec, PoolKind, Tensor, Var};

use crate::error::Result;
use crate::nn::{BatchNorm, Builder, Conv, Linear, Session};

/// Additive per-channel offset followed by a sigmoid channel gate.
#[derive(Clone, Debug)]
pub struct Afms {
    pub alpha: mrrawnet_tensor::ParamId,
    pub fc: Linear,
}

impl Afms {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            alpha: b.param("alpha", Tensor::zeros([c]))?,
            fc: Linear::new(&mut b, "fc", c, c)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let (bsz, c) = {
            let sh = s.shape(x);
            (sh[0], sh[1])
        };
        let t = &s.tape;
        let pooled = t.reshape(t.adaptive_avg_pool(x)?, &[bsz, c])?;
        let gate = t.sigmoid(self.fc.forward(s, pooled)?);
        let gate = t.reshape(gate, &[bsz, c, 1])?;
        let alpha = t.reshape(s.p(self.alpha), &[1, c, 1])?;
        Ok(t.mul(t.add(x, alpha)?, gate)?)
    }
}

/// Channel-split hierarchical residual convolution.
#[derive(Clone, Debug)]
pub struct Res2Dilated {
    pub convs: Vec<Conv>,
    pub scale: usize,
}

impl Res2Dilated {
    pub fn new(
        b: &mut Builder,
        name: &str,
        (c, scale, kernel): (usize, usize, usize),
        dilation: usize,
        bias: bool,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        let w = c / scale;
        let spec = Conv1dSpec::same().dilation(dilation);
        let convs = (1..scale)
            .map(|j| Conv::new(&mut b, &format!("conv{j}"), (w, w, kernel), spec, bias))
            .collect::<Result<_>>()?;
        Ok(Self { convs, scale })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let t = &s.tape;
        let w = s.shape(x)[1] / self.scale;
        let mut ys = vec![t.slice(x, 1, 0, w)?];
        for (j, conv) in self.convs.iter().enumerate() {
            let mut xj = t.slice(x, 1, (j + 1) * w, w)?;
            if j > 0 {
                xj = t.add(xj, ys[j])?;
            }
            ys.push(conv.forward(s, xj)?);
        }
        Ok(t.concat(&ys, 1)?)
    }
}

#[derive(Clone, Debug)]
pub struct AfmsRes2Block {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub res2: Res2Dilated,
    pub bn2: BatchNorm,
    pub conv3: Conv,
    pub bn3: BatchNorm,
    pub afms: Afms,
}

impl AfmsRes2Block {
    pub fn new(
        b: &mut Builder,
        name: &str,
        (cin, c): (usize, usize),
        (scale, kernel, dilation): (usize, usize, usize),
        bias: bool,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            conv1: Conv::pointwise(&mut b, "conv1", cin, c, bias)?,
            bn1: BatchNorm::new(&mut b, "bn1", c)?,
            res2: Res2Dilated::new(&mut b, "res2", (c, scale, kernel), dilation, bias)?,
            bn2: BatchNorm::new(&mut b, "bn2", c)?,
            conv3: Conv::pointwise(&mut b, "conv3", c, c, bias)?,
            bn3: BatchNorm::new(&mut b, "bn3", c)?,
            afms: Afms::new(&mut b, "afms", c)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let t = &s.tape;
        let h = self.bn1.forward(s, t.relu(self.conv1.forward(s, x)?))?;
        let h = self.bn2.forward(s, t.relu(self.res2.forward(s, h)?))?;
        let h = self.bn3.forward(s, t.relu(self.conv3.forward(s, h)?))?;
        self.afms.forward(s, h)
    }
}

/// Halves temporal resolution by averaging frame pairs. An odd trailing frame
/// is replicated first.
pub fn downsample(s: &Session, x: Var) -> Result<Var> {
    let t = &s.tape;
    let l = s.shape(x)[2];
    let x = if l % 2 == 1 {
        s.flag(format!("downsample: odd length {l} padded by repeating the last frame"));
        t.concat(&[x, t.slice(x, 2, l - 1, 1)?], 2)?
    } else {
        x
    };
    Ok(t.pool1d(x, PoolKind::Avg, 2, 2)?)
}

/// Stride-2 transposed convolution, initialised to repeat every frame twice.
#[derive(Clone, Debug)]
pub struct Upsampler {
    pub w: mrrawnet_tensor::ParamId,
    pub b: Option<mrrawnet_tensor::ParamId>,
}

impl Upsampler {
    pub fn new(b: &mut Builder, name: &str, c: usize, bias: bool) -> Result<Self> {
        let mut b = b.sub(name);
        let w = Tensor::from_fn([c, c, 2], |i| if (i / 2) / c == (i / 2) % c { 1.0 } else { 0.0 });
        Ok(Self {
            w: b.param("weight", w)?,
            b: if bias {
                Some(b.param("bias", Tensor::zeros([c]))?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let b = self.b.map(|b| s.p(b));
        Ok(s.tape.conv_transpose1d(x, s.p(self.w), b, 2)?)
    }
}
