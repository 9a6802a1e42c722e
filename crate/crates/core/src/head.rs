//! Attentive statistics pooling and the embedding projection.

use mrrawnet_tensor::Var;

use crate::error::Result;
use crate::nn::{Builder, Conv, Linear, Session};

#[derive(Clone, Debug)]
pub struct Asp {
    pub att1: Conv,
    pub att2: Conv,
}

pub struct AspOutput {
    /// `[B,2P]`: weighted mean then weighted standard deviation.
    pub pooled: Var,
    /// `[B,P,L]`, softmax over time.
    pub weights: Var,
}

impl Asp {
    pub fn new(b: &mut Builder, channels: usize, d_att: usize, bias: bool) -> Result<Self> {
        let mut b = b.sub("asp");
        Ok(Self {
            att1: Conv::pointwise(&mut b, "att1", 3 * channels, d_att, bias)?,
            att2: Conv::pointwise(&mut b, "att2", d_att, channels, bias)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<AspOutput> {
        let t = &s.tape;
        let shape = s.shape(x);
        let (bsz, c) = (shape[0], shape[1]);
        let mean = t.mean_axis(x, 2)?;
        let dev = t.sub(x, t.expand(mean, &shape)?)?;
        let std = t.sqrt_clamped(t.mean_axis(t.square(dev), 2)?);
        let ctx = t.concat(&[x, t.expand(mean, &shape)?, t.expand(std, &shape)?], 1)?;
        let e = self.att2.forward(s, t.tanh(self.att1.forward(s, ctx)?))?;
        let w = t.softmax(e, 2)?;
        let mu = t.sum_axis(t.mul(w, x)?, 2)?;
        // Centred second moment; equal to Σw·x² − μ² but exact for constant rows.
        let dev = t.sub(x, t.expand(mu, &shape)?)?;
        let sigma = t.sqrt_clamped(t.sum_axis(t.mul(w, t.square(dev))?, 2)?);
        let pooled = t.reshape(t.concat(&[mu, sigma], 1)?, &[bsz, 2 * c])?;
        Ok(AspOutput { pooled, weights: w })
    }
}

#[derive(Clone, Debug)]
pub struct Embed {
    pub fc: Linear,
}

impl Embed {
    pub fn new(b: &mut Builder, din: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            fc: Linear::new(b, "embed", din, dim)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        self.fc.forward(s, x)
    }
}
