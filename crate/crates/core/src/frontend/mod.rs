//! Multi-resolution feature extraction: N filterbank + TCN branches sharing one frame hop.

pub mod fbank;
pub mod geometry;
pub mod tcn;

use mrrawnet_tensor::{Conv1dSpec, PoolKind, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Session};
use fbank::ParamFbank;
use geometry::{derive_geometry, FeGeometry, Geometry};
use tcn::Tcn;

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub geom: FeGeometry,
    pub fbank: ParamFbank,
    pub proj: Conv,
    pub tcn: Tcn,
    pub last: Conv,
}

pub struct FeOutput {
    /// `[B,F2,T/S]`.
    pub y: Var,
    /// Max-pooled TCN output for the next extractor, when requested.
    pub skip: Option<Var>,
}

impl FeatureExtractor {
    pub fn new(b: &mut Builder, cfg: &ModelConfig, geom: FeGeometry) -> Result<Self> {
        let m = &cfg.mrfe;
        let bias = cfg.conv_bias;
        let mut b = b.sub(&format!("fe{}", geom.index));
        let last_spec = Conv1dSpec::same().stride(geom.stride_last);
        Ok(Self {
            geom,
            fbank: ParamFbank::new(
                &mut b,
                "fbank",
                m.f1,
                (geom.kernel, geom.stride_pf),
                cfg.sample_rate,
                m.log_compression,
            )?,
            proj: Conv::pointwise(&mut b, "proj", m.f1, m.f2, bias)?,
            tcn: Tcn::new(&mut b, "tcn", (m.f2, m.h), (m.x, m.r), bias)?,
            last: Conv::new(&mut b, "last", (m.f2, m.f2, geom.m), last_spec, bias)?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var, skip_in: Option<Var>, want_skip: bool) -> Result<FeOutput> {
        let f = self.fbank.forward(s, x)?;
        let mut h = self.proj.forward(s, f)?;
        if let Some(skip) = skip_in {
            let (want, got) = (s.shape(h)[2], s.shape(skip)[2]);
            if want != got {
                return Err(Error::Config(format!(
                    "extractor {}: skip input has {got} frames, expected {want}",
                    self.geom.index
                )));
            }
            h = s.tape.add(h, skip)?;
        }
        let h = self.tcn.forward(s, h)?;
        let skip = if want_skip {
            Some(s.tape.pool1d(h, PoolKind::Max, 2, 2)?)
        } else {
            None
        };
        Ok(FeOutput {
            y: self.last.forward(s, h)?,
            skip,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Mrfe {
    pub geometry: Geometry,
    pub extractors: Vec<FeatureExtractor>,
}

impl Mrfe {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        let m = &cfg.mrfe;
        let geometry = derive_geometry(m.k1, m.m1, m.n)?;
        let mut b = b.sub("mrfe");
        let extractors = geometry
            .extractors
            .iter()
            .map(|g| FeatureExtractor::new(&mut b, cfg, *g))
            .collect::<Result<_>>()?;
        Ok(Self { geometry, extractors })
    }

    /// `[B,1,T] → o_1 [B,F2·N,T/S]`.
    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let t = s.shape(x)[2];
        let frames = self.geometry.frames(t).ok_or(Error::Crop {
            len: t,
            hop: self.geometry.hop,
        })?;
        let mut ys = Vec::with_capacity(self.extractors.len());
        let mut skip = None;
        for (i, fe) in self.extractors.iter().enumerate() {
            let has_next = i + 1 < self.extractors.len();
            let out = fe.forward(s, x, skip, has_next)?;
            if s.shape(out.y)[2] != frames {
                return Err(Error::Config(format!(
                    "extractor {} produced {} frames, expected {frames}",
                    fe.geom.index,
                    s.shape(out.y)[2]
                )));
            }
            ys.push(out.y);
            skip = out.skip;
        }
        if ys.len() == 1 {
            return Ok(ys[0]);
        }
        Ok(s.tape.concat(&ys, 1)?)
    }
}
