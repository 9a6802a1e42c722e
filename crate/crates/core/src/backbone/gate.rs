use mrrawnet_tensor::Var;

use crate::error::Result;
use crate::nn::{BatchNorm, Builder, Linear, Session};

/// How branch scores are turned into weights. Only `Softmax` is correct; the
/// other variant exists so the verifier can prove it catches a broken gate.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateNorm {
    #[default]
    Softmax,
    Unnormalized,
}

/// Per-channel attention over the three resolution branches, one set of
/// weights shared by all branches.
#[derive(Clone, Debug)]
pub struct Gate {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
    #[doc(hidden)]
    pub norm: GateNorm,
}

pub struct GateOutput {
    pub o: Var,
    /// `[3,B,C]`, branch weights per channel.
    pub alpha: Var,
}

impl Gate {
    pub fn new(b: &mut Builder, name: &str, c: usize, d: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            fc1: Linear::new(&mut b, "fc1", c, d)?,
            bn: BatchNorm::new(&mut b, "bn", d)?,
            fc2: Linear::new(&mut b, "fc2", d, c)?,
            norm: GateNorm::Softmax,
        })
    }

    pub fn forward(&self, s: &Session, hs: [Var; 3]) -> Result<GateOutput> {
        let t = &s.tape;
        let shape = s.shape(hs[0]);
        for h in &hs[1..] {
            if s.shape(*h) != shape {
                return Err(crate::error::Error::Config(format!(
                    "gate: branch shapes differ ({:?} vs {:?})",
                    shape,
                    s.shape(*h)
                )));
            }
        }
        let (bsz, c) = (shape[0], shape[1]);
        let pooled = hs
            .iter()
            .map(|&h| Ok(t.reshape(t.adaptive_avg_pool(h)?, &[bsz, c])?))
            .collect::<Result<Vec<_>>>()?;
        // Stacking the branches lets one batch norm see all three score sets.
        let stacked = t.concat(&pooled, 0)?;
        let z = self.fc1.forward(s, stacked)?;
        let z = self.bn.forward(s, t.relu(z))?;
        let z = t.reshape(self.fc2.forward(s, z)?, &[3, bsz, c])?;
        let alpha = match self.norm {
            GateNorm::Softmax => t.softmax(z, 0)?,
            GateNorm::Unnormalized => t.exp(z),
        };
        let mut o = None;
        for (i, &h) in hs.iter().enumerate() {
            let a = t.reshape(t.slice(alpha, 0, i, 1)?, &[bsz, c, 1])?;
            let term = t.mul(a, h)?;
            o = Some(match o {
                None => term,
                Some(acc) => t.add(acc, term)?,
            });
        }
        Ok(GateOutput {
            o: o.expect("three branches"),
            alpha,
        })
    }
}
