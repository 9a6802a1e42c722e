//! Full network assembly, forward pass and parameter accounting.

use mrrawnet_tensor::{BufferId, Mode, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneOutput, BaselineStages, GateNorm, MraBlock};
use crate::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::frontend::fbank::ParamFbank;
use crate::frontend::Mrfe;
use crate::head::{Asp, Embed};
use crate::nn::{count_by_module, Builder, Conv, Session};

#[derive(Clone, Debug)]
enum Body {
    MrRawnet { mrfe: Mrfe, proj: Conv, backbone: Backbone },
    Baseline { fbank: ParamFbank, proj: Conv, stages: BaselineStages },
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    body: Body,
    asp: Asp,
    embed: Embed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// Scalars per top-level module, in wiring order.
    pub modules: Vec<(String, usize)>,
}

impl Model {
    /// Builds and initialises a model; the same seed always yields the same parameters.
    pub fn assemble(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let bias = cfg.conv_bias;
        let pool = cfg.backbone.pool_channels;
        let body = match cfg.variant {
            Variant::MrRawnet => {
                let f = cfg.mrfe.f2 * cfg.mrfe.n;
                Body::MrRawnet {
                    mrfe: Mrfe::new(&mut b, cfg)?,
                    proj: Conv::pointwise(&mut b, "proj", f, cfg.backbone.channels, bias)?,
                    backbone: Backbone::new(&mut b, &cfg.backbone, bias)?,
                }
            }
            Variant::Rawnet3Baseline => {
                let bl = &cfg.baseline;
                Body::Baseline {
                    fbank: ParamFbank::new(
                        &mut b,
                        "fbank",
                        bl.filters,
                        (bl.kernel, bl.stride),
                        cfg.sample_rate,
                        cfg.mrfe.log_compression,
                    )?,
                    proj: Conv::pointwise(&mut b, "proj", bl.filters, bl.channels, bias)?,
                    stages: BaselineStages::new(&mut b, bl, pool, bias)?,
                }
            }
        };
        let asp = Asp::new(&mut b, pool, cfg.head.d_att, bias)?;
        let embed = Embed::new(&mut b, 2 * pool, cfg.head.embed_dim)?;
        Ok(Self {
            config: cfg.clone(),
            store,
            body,
            asp,
            embed,
        })
    }

    /// Samples per output frame; inputs must be a multiple of this.
    pub fn hop(&self) -> usize {
        self.config.hop()
    }

    pub fn embed_dim(&self) -> usize {
        self.config.head.embed_dim
    }

    pub fn session(&self, mode: Mode) -> Session<'_> {
        Session::new(&self.store, mode)
    }

    /// `[B,1,T] → [B,D]`, recording the shapes of o_1…o_8 on the session.
    pub fn forward(&self, s: &Session, wave: Var) -> Result<Var> {
        let shape = s.shape(wave);
        if shape.len() != 3 || shape[1] != 1 {
            return Err(Error::Config(format!("model input must be [B,1,T], got {shape:?}")));
        }
        if shape[2] == 0 || shape[2] % self.hop() != 0 {
            return Err(Error::Crop {
                len: shape[2],
                hop: self.hop(),
            });
        }
        let bb: BackboneOutput = match &self.body {
            Body::MrRawnet { mrfe, proj, backbone } => {
                let o1 = mrfe.forward(s, wave)?;
                s.record("o1", o1);
                let o2 = proj.forward(s, o1)?;
                s.record("o2", o2);
                backbone.forward(s, o2)?
            }
            Body::Baseline { fbank, proj, stages } => {
                let o1 = fbank.forward(s, wave)?;
                s.record("o1", o1);
                let o2 = proj.forward(s, o1)?;
                s.record("o2", o2);
                stages.forward(s, o2)?
            }
        };
        for (name, v) in ["o3", "o4", "o5"].iter().zip(bb.stages) {
            s.record(name, v);
        }
        s.record("o6", bb.o6);
        s.record("o7", bb.o7);
        let o8 = self.asp.forward(s, bb.o7)?.pooled;
        s.record("o8", o8);
        let e = self.embed.forward(s, o8)?;
        s.record("embedding", e);
        Ok(e)
    }

    /// Eval-mode embeddings for a `[B,1,T]` batch.
    pub fn embed(&self, wave: &Tensor) -> Result<Tensor> {
        let s = self.session(Mode::Eval);
        let x = s.tape.constant(wave.clone());
        let e = self.forward(&s, x)?;
        Ok(s.tape.value(e).as_ref().clone())
    }

    /// Shapes of o_1…o_8 and the embedding for one eval pass over `wave`.
    pub fn trace(&self, wave: &Tensor) -> Result<Vec<(String, Vec<usize>)>> {
        let s = self.session(Mode::Eval);
        let x = s.tape.constant(wave.clone());
        self.forward(&s, x)?;
        Ok(s.trace())
    }

    pub fn count_params(&self) -> ParamCount {
        ParamCount {
            total: self.store.num_scalars(),
            modules: count_by_module(&self.store),
        }
    }

    /// Writes queued running statistics back into the parameter tree.
    pub fn apply_updates(&mut self, updates: Vec<(BufferId, Tensor)>) {
        for (id, v) in updates {
            self.store.set_buffer(id, v);
        }
    }

    /// Every MRA block in wiring order (empty for the baseline).
    pub fn mra_blocks(&self) -> Vec<&MraBlock> {
        match &self.body {
            Body::MrRawnet { backbone, .. } => backbone.stages.iter().flatten().collect(),
            Body::Baseline { .. } => Vec::new(),
        }
    }

    pub fn asp(&self) -> &Asp {
        &self.asp
    }

    #[doc(hidden)]
    pub fn set_gate_norm(&mut self, norm: GateNorm) {
        if let Body::MrRawnet { backbone, .. } = &mut self.body {
            for blk in backbone.stages.iter_mut().flatten() {
                blk.gate.norm = norm;
            }
        }
    }
}
