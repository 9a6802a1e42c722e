//! Architecture configuration and presets.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::frontend::geometry::derive_geometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    MrRawnet,
    Rawnet3Baseline,
}

/// Multi-resolution front-end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrfeConfig {
    /// Number of parallel feature extractors.
    pub n: usize,
    pub k1: usize,
    pub m1: usize,
    /// Filterbank filters per extractor.
    pub f1: usize,
    /// TCN channel width.
    pub f2: usize,
    /// Conv blocks per repeat.
    pub x: usize,
    /// Repeats.
    pub r: usize,
    /// Hidden width inside each conv block.
    pub h: usize,
    /// Apply `log(1+|·|)` after the filterbank.
    pub log_compression: bool,
}

impl Default for MrfeConfig {
    fn default() -> Self {
        Self {
            n: 4,
            k1: 50,
            m1: 16,
            f1: 128,
            f2: 64,
            x: 5,
            r: 2,
            h: 128,
            log_compression: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub channels: usize,
    /// MRA blocks per stage.
    pub blocks: usize,
    pub res2_scale: usize,
    pub res2_kernel: usize,
    pub dilations: Vec<usize>,
    /// Width of the pre-pooling feature.
    pub pool_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: 256,
            blocks: 3,
            res2_scale: 4,
            res2_kernel: 3,
            dilations: vec![2, 3, 4],
            pool_channels: 1536,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub d_att: usize,
    pub embed_dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            d_att: 128,
            embed_dim: 256,
        }
    }
}

/// Single-filterbank reference network with max-pooled stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub res2_scale: usize,
    pub dilations: Vec<usize>,
    pub pools: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            filters: 256,
            kernel: 251,
            stride: 10,
            channels: 1024,
            res2_scale: 8,
            dilations: vec![2, 3, 4],
            pools: vec![5, 3, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub sample_rate: u32,
    pub preemphasis: f64,
    /// Disabling biases makes the front-end exactly zero on a zero waveform.
    #[serde(default = "yes")]
    pub conv_bias: bool,
    #[serde(default)]
    pub mrfe: MrfeConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::mr_rawnet()
    }
}

impl ModelConfig {
    pub fn mr_rawnet() -> Self {
        Self {
            variant: Variant::MrRawnet,
            sample_rate: 16_000,
            preemphasis: 0.97,
            conv_bias: true,
            mrfe: MrfeConfig::default(),
            backbone: BackboneConfig::default(),
            head: HeadConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }

    pub fn rawnet3_baseline() -> Self {
        Self {
            variant: Variant::Rawnet3Baseline,
            ..Self::mr_rawnet()
        }
    }

    /// Tiny MR-RawNet used for gradient checks and desk-scale training.
    pub fn micro() -> Self {
        Self {
            mrfe: MrfeConfig {
                n: 2,
                k1: 50,
                m1: 16,
                f1: 16,
                f2: 8,
                x: 3,
                r: 1,
                h: 16,
                log_compression: true,
            },
            backbone: BackboneConfig {
                channels: 8,
                blocks: 1,
                pool_channels: 32,
                ..BackboneConfig::default()
            },
            head: HeadConfig {
                d_att: 16,
                embed_dim: 32,
            },
            ..Self::mr_rawnet()
        }
    }

    /// Micro with a wider backbone and embedding, for overfit runs.
    pub fn micro_wide() -> Self {
        let mut c = Self::micro();
        c.backbone.channels = 32;
        c.backbone.pool_channels = 64;
        c.head.embed_dim = 64;
        c
    }

    /// Resolves a preset name: `mr-rawnet`, `rawnet3-baseline`, `micro` or `micro-wide`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "mr-rawnet" => Some(Self::mr_rawnet()),
            "rawnet3-baseline" => Some(Self::rawnet3_baseline()),
            "micro" => Some(Self::micro()),
            "micro-wide" => Some(Self::micro_wide()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config is always serializable")
    }

    /// Samples per output frame.
    pub fn hop(&self) -> usize {
        match self.variant {
            Variant::MrRawnet => self.mrfe.k1 * self.mrfe.m1 / 5,
            Variant::Rawnet3Baseline => self.baseline.stride * self.baseline.pools.iter().product::<usize>(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(config_err("sample_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err(config_err("preemphasis must lie in [0, 1)"));
        }
        let h = &self.head;
        if h.d_att == 0 || h.embed_dim == 0 {
            return Err(config_err("head: d_att and embed_dim must be positive"));
        }
        match self.variant {
            Variant::MrRawnet => {
                let m = &self.mrfe;
                derive_geometry(m.k1, m.m1, m.n)?;
                if [m.f1, m.f2, m.x, m.r, m.h].contains(&0) {
                    return Err(config_err("mrfe: f1, f2, x, r, h must be positive"));
                }
                let b = &self.backbone;
                check_stage_widths("backbone", b.channels, b.res2_scale, &b.dilations)?;
                if b.blocks == 0 || b.pool_channels == 0 {
                    return Err(config_err("backbone: blocks and pool_channels must be positive"));
                }
                if b.channels < 2 {
                    return Err(config_err("backbone: gate bottleneck channels/2 would be zero"));
                }
                if b.res2_kernel % 2 == 0 {
                    return Err(config_err("backbone: res2_kernel must be odd"));
                }
            }
            Variant::Rawnet3Baseline => {
                let b = &self.baseline;
                if b.filters == 0 || b.kernel == 0 || b.stride == 0 {
                    return Err(config_err("baseline: filterbank sizes must be positive"));
                }
                check_stage_widths("baseline", b.channels, b.res2_scale, &b.dilations)?;
                if b.pools.len() != 3 || b.pools.contains(&0) {
                    return Err(config_err("baseline: pools needs three positive sizes"));
                }
                if self.backbone.pool_channels == 0 {
                    return Err(config_err("backbone: pool_channels must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn check_stage_widths(what: &str, channels: usize, scale: usize, dilations: &[usize]) -> Result<()> {
    if scale < 2 || channels % scale != 0 {
        return Err(config_err(format!(
            "{what}: channels {channels} must be divisible by res2_scale {scale} (>= 2)"
        )));
    }
    if dilations.len() != 3 || dilations.contains(&0) {
        return Err(config_err(format!("{what}: dilations needs three positive entries")));
    }
    Ok(())
}
