//! Stacked residual depthwise-separable conv blocks with doubling dilation.

use mrrawnet_tensor::{Conv1dSpec, Var};

use crate::error::Result;
use crate::nn::{Builder, Conv, GlobalLayerNorm, Prelu, Session};

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub pw_in: Conv,
    pub act1: Prelu,
    pub norm1: GlobalLayerNorm,
    pub dw: Conv,
    pub act2: Prelu,
    pub norm2: GlobalLayerNorm,
    pub pw_out: Conv,
}

impl ConvBlock {
    pub fn new(b: &mut Builder, name: &str, width: usize, hidden: usize, dilation: usize, bias: bool) -> Result<Self> {
        let mut b = b.sub(name);
        let dw_spec = Conv1dSpec::same().dilation(dilation).groups(hidden);
        Ok(Self {
            pw_in: Conv::pointwise(&mut b, "pw_in", width, hidden, bias)?,
            act1: Prelu::new(&mut b, "prelu1", hidden)?,
            norm1: GlobalLayerNorm::new(&mut b, "gln1", hidden)?,
            dw: Conv::new(&mut b, "dw", (hidden, hidden, 3), dw_spec, bias)?,
            act2: Prelu::new(&mut b, "prelu2", hidden)?,
            norm2: GlobalLayerNorm::new(&mut b, "gln2", hidden)?,
            pw_out: Conv::pointwise(&mut b, "pw_out", hidden, width, bias)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let h = self.pw_in.forward(s, x)?;
        let h = self.norm1.forward(s, self.act1.forward(s, h)?)?;
        let h = self.dw.forward(s, h)?;
        let h = self.norm2.forward(s, self.act2.forward(s, h)?)?;
        let h = self.pw_out.forward(s, h)?;
        Ok(s.tape.add(x, h)?)
    }
}

#[derive(Clone, Debug)]
pub struct Tcn {
    pub blocks: Vec<ConvBlock>,
}

impl Tcn {
    /// `repeats` runs of `per_repeat` blocks with dilations 1, 2, …, 2^(per_repeat−1).
    pub fn new(
        b: &mut Builder,
        name: &str,
        (width, hidden): (usize, usize),
        (per_repeat, repeats): (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        let mut blocks = Vec::with_capacity(per_repeat * repeats);
        for r in 0..repeats {
            for x in 0..per_repeat {
                let name = format!("block{}", r * per_repeat + x);
                blocks.push(ConvBlock::new(&mut b, &name, width, hidden, 1 << x, bias)?);
            }
        }
        Ok(Self { blocks })
    }

    pub fn forward(&self, s: &Session, mut x: Var) -> Result<Var> {
        for blk in &self.blocks {
            x = blk.forward(s, x)?;
        }
        Ok(x)
    }
}

/// Frames spanned by the output of `repeats` runs of `per_repeat` blocks.
pub fn receptive_field(per_repeat: usize, repeats: usize) -> usize {
    1 + repeats * 2 * ((1 << per_repeat) - 1)
}
