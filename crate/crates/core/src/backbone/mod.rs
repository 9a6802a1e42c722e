//! Multi-resolution attention stages.

mod blocks;
mod gate;

pub use blocks::{downsample, Afms, AfmsRes2Block, Res2Dilated, Upsampler};
#[doc(hidden)]
pub use gate::GateNorm;
pub use gate::{Gate, GateOutput};

use mrrawnet_tensor::{PoolKind, Var};

use crate::config::{BackboneConfig, BaselineConfig};
use crate::error::Result;
use crate::nn::{Builder, Conv, Session};

/// Low, original and high temporal-resolution branches fused by a gate, plus
/// the identity residual.
#[derive(Clone, Debug)]
pub struct MraBlock {
    pub low_up: Upsampler,
    pub high_up: Upsampler,
    pub low: AfmsRes2Block,
    pub orig: AfmsRes2Block,
    pub high: AfmsRes2Block,
    pub gate: Gate,
}

impl MraBlock {
    pub fn new(b: &mut Builder, name: &str, cfg: &BackboneConfig, dilation: usize, bias: bool) -> Result<Self> {
        let mut b = b.sub(name);
        let c = cfg.channels;
        let layout = (cfg.res2_scale, cfg.res2_kernel, dilation);
        Ok(Self {
            low_up: Upsampler::new(&mut b, "low_up", c, bias)?,
            high_up: Upsampler::new(&mut b, "high_up", c, bias)?,
            low: AfmsRes2Block::new(&mut b, "low", (c, c), layout, bias)?,
            orig: AfmsRes2Block::new(&mut b, "orig", (c, c), layout, bias)?,
            high: AfmsRes2Block::new(&mut b, "high", (c, c), layout, bias)?,
            gate: Gate::new(&mut b, "gate", c, c / 2)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        Ok(self.forward_gated(s, x)?.o)
    }

    /// Like `forward`, but also returns the branch weights.
    pub fn forward_gated(&self, s: &Session, x: Var) -> Result<GateOutput> {
        let t = &s.tape;
        let l = s.shape(x)[2];
        let low = self.low_up.forward(s, self.low.forward(s, downsample(s, x)?)?)?;
        let low = if s.shape(low)[2] != l {
            t.slice(low, 2, 0, l)?
        } else {
            low
        };
        let orig = self.orig.forward(s, x)?;
        let high = downsample(s, self.high.forward(s, self.high_up.forward(s, x)?)?)?;
        let g = self.gate.forward(s, [low, orig, high])?;
        Ok(GateOutput {
            o: t.add(g.o, x)?,
            alpha: g.alpha,
        })
    }
}

pub struct BackboneOutput {
    /// o_3, o_4, o_5.
    pub stages: [Var; 3],
    pub o6: Var,
    pub o7: Var,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<Vec<MraBlock>>,
    pub out: Conv,
}

impl Backbone {
    pub fn new(b: &mut Builder, cfg: &BackboneConfig, bias: bool) -> Result<Self> {
        let mut b = b.sub("backbone");
        let mut stages = Vec::with_capacity(3);
        for (si, &dil) in cfg.dilations.iter().enumerate() {
            let mut sb = b.sub(&format!("stage{}", si + 1));
            let blocks = (0..cfg.blocks)
                .map(|k| MraBlock::new(&mut sb, &format!("block{}", k + 1), cfg, dil, bias))
                .collect::<Result<_>>()?;
            stages.push(blocks);
        }
        let out = Conv::pointwise(&mut b, "out", 3 * cfg.channels, cfg.pool_channels, bias)?;
        Ok(Self { stages, out })
    }

    pub fn forward(&self, s: &Session, o2: Var) -> Result<BackboneOutput> {
        let mut x = o2;
        let mut outs = Vec::with_capacity(3);
        for stage in &self.stages {
            for blk in stage {
                x = blk.forward(s, x)?;
            }
            outs.push(x);
        }
        let o6 = s.tape.concat(&outs, 1)?;
        let o7 = s.tape.relu(self.out.forward(s, o6)?);
        Ok(BackboneOutput {
            stages: [outs[0], outs[1], outs[2]],
            o6,
            o7,
        })
    }
}

/// The single-resolution reference backbone: AFMS-Res2 blocks with a residual,
/// each followed by max pooling; earlier stages are pooled down to the final
/// rate before concatenation.
#[derive(Clone, Debug)]
pub struct BaselineStages {
    pub blocks: Vec<AfmsRes2Block>,
    pub pools: Vec<usize>,
    pub out: Conv,
}

impl BaselineStages {
    pub fn new(b: &mut Builder, cfg: &BaselineConfig, pool_channels: usize, bias: bool) -> Result<Self> {
        let mut b = b.sub("backbone");
        let c = cfg.channels;
        let blocks = cfg
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| AfmsRes2Block::new(&mut b, &format!("stage{}", i + 1), (c, c), (cfg.res2_scale, 3, d), bias))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            pools: cfg.pools.clone(),
            out: Conv::pointwise(&mut b, "out", 3 * c, pool_channels, bias)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<BackboneOutput> {
        let t = &s.tape;
        let mut x = x;
        let mut outs = Vec::with_capacity(3);
        for (blk, &p) in self.blocks.iter().zip(&self.pools) {
            let h = t.add(blk.forward(s, x)?, x)?;
            x = t.pool1d(h, PoolKind::Max, p, p)?;
            outs.push(x);
        }
        let mut aligned = Vec::with_capacity(3);
        for (i, &o) in outs.iter().enumerate() {
            let k: usize = self.pools[i + 1..].iter().product();
            aligned.push(if k > 1 { t.pool1d(o, PoolKind::Max, k, k)? } else { o });
        }
        let o6 = t.concat(&aligned, 1)?;
        let o7 = t.relu(self.out.forward(s, o6)?);
        Ok(BackboneOutput {
            stages: [aligned[0], aligned[1], aligned[2]],
            o6,
            o7,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrrawnet_tensor::{Mode, ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro() -> BackboneConfig {
        BackboneConfig {
            channels: 8,
            blocks: 1,
            pool_channels: 12,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn zeroed_block_is_pure_residual() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blk = MraBlock::new(&mut Builder::new(&mut store, &mut rng), "mra", &micro(), 2, true).unwrap();
        for p in store.params_mut() {
            if p.name.contains("/low/") || p.name.contains("/orig/") || p.name.contains("/high/") {
                if p.name.ends_with("weight") {
                    p.value.data_mut().fill(0.0);
                }
            }
        }
        let s = Session::new(&store, Mode::Train);
        let x = Tensor::from_fn([2, 8, 7], |i| (i as f64 * 0.37).sin());
        let y = blk.forward(&s, s.tape.constant(x.clone())).unwrap();
        assert!(s.tape.value(y).max_abs_diff(&x) < 1e-15);
        assert!(!s.flags().is_empty(), "odd length is flagged");
    }

    #[test]
    fn shapes_are_preserved() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bb = Backbone::new(&mut Builder::new(&mut store, &mut rng), &micro(), true).unwrap();
        let s = Session::new(&store, Mode::Train);
        let x = s.tape.constant(Tensor::from_fn([2, 8, 10], |i| (i as f64).cos()));
        let out = bb.forward(&s, x).unwrap();
        for o in out.stages {
            assert_eq!(s.shape(o), [2, 8, 10]);
        }
        assert_eq!(s.shape(out.o6), [2, 24, 10]);
        assert_eq!(s.shape(out.o7), [2, 12, 10]);
        assert_eq!(bb.stages.iter().map(Vec::len).sum::<usize>(), 3);
    }

    #[test]
    fn baseline_stages_align_rates() {
        let cfg = BaselineConfig {
            filters: 4,
            channels: 8,
            res2_scale: 4,
            ..BaselineConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bb = BaselineStages::new(&mut Builder::new(&mut store, &mut rng), &cfg, 12, true).unwrap();
        let s = Session::new(&store, Mode::Train);
        let x = s.tape.constant(Tensor::from_fn([2, 8, 61], |i| (i as f64).cos()));
        let out = bb.forward(&s, x).unwrap();
        assert_eq!(s.shape(out.o7), [2, 12, 2]);
    }
}
