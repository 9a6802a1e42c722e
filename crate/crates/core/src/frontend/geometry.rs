use crate::error::{config_err, Result};

/// Kernel and stride schedule of one feature extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeGeometry {
    /// 1-based extractor index.
    pub index: usize,
    /// Filterbank kernel in samples.
    pub kernel: usize,
    pub stride_pf: usize,
    /// Last-conv kernel in frames.
    pub m: usize,
    pub stride_last: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub extractors: Vec<FeGeometry>,
    /// Samples per output frame.
    pub hop: usize,
}

impl Geometry {
    /// Output frames for a waveform of `t` samples.
    pub fn frames(&self, t: usize) -> Option<usize> {
        (t % self.hop == 0).then_some(t / self.hop)
    }
}

/// Doubles the filterbank kernel and halves the last-conv kernel per
/// extractor so every extractor lands on the same frame hop.
pub fn derive_geometry(k1: usize, m1: usize, n: usize) -> Result<Geometry> {
    if n == 0 {
        return Err(config_err("mrfe: need at least one feature extractor"));
    }
    if k1 == 0 || m1 == 0 {
        return Err(config_err("mrfe: k1 and m1 must be positive"));
    }
    let mut extractors = Vec::with_capacity(n);
    let mut hop = None;
    for i in 0..n {
        let kernel = k1 << i;
        let scale = 1usize << i;
        if m1 % scale != 0 {
            return Err(config_err(format!(
                "mrfe: m1 = {m1} is not divisible by 2^{i} (extractor {})",
                i + 1
            )));
        }
        let m = m1 / scale;
        if m < 2 || m % 2 != 0 {
            return Err(config_err(format!(
                "mrfe: extractor {} last-conv kernel {m} has no integer stride m/2",
                i + 1
            )));
        }
        if (2 * kernel) % 5 != 0 {
            return Err(config_err(format!(
                "mrfe: extractor {} kernel {kernel} gives a non-integer stride 2k/5",
                i + 1
            )));
        }
        let g = FeGeometry {
            index: i + 1,
            kernel,
            stride_pf: 2 * kernel / 5,
            m,
            stride_last: m / 2,
        };
        let s = g.stride_pf * g.stride_last;
        if *hop.get_or_insert(s) != s {
            return Err(config_err("mrfe: extractors disagree on the frame hop"));
        }
        extractors.push(g);
    }
    Ok(Geometry {
        extractors,
        hop: hop.expect("n >= 1"),
    })
}
