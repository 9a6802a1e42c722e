//! Learnable band-pass filterbank applied directly to the waveform.

use std::f64::consts::PI;

use mrrawnet_tensor::{Conv1dSpec, CustomOp, ParamId, ParamStore, Tensor, Var};

use crate::error::Result;
use crate::nn::{Builder, Session};

/// Narrowest admissible band, in Hz.
pub const MIN_BAND_HZ: f64 = 50.0;
const INIT_LOW_HZ: f64 = 30.0;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

pub fn hamming(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    (0..k)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (k - 1) as f64).cos())
        .collect()
}

/// Ideal low-pass impulse response `2f·sinc(2πfn)` and its derivative in `f`.
fn lowpass(f: f64, n: f64) -> (f64, f64) {
    if n == 0.0 {
        (2.0 * f, 2.0)
    } else {
        ((2.0 * PI * f * n).sin() / (PI * n), 2.0 * (2.0 * PI * f * n).cos())
    }
}

/// Effective band edges after clamping, with the partial derivatives
/// `(∂lo/∂lo_raw, ∂hi/∂lo_raw, ∂hi/∂bw_raw)`.
fn band_edges(lo: f64, bw: f64, min_band: f64) -> (f64, f64, [f64; 3]) {
    let lo_in = lo > 0.0 && lo < 0.5;
    let f_lo = lo.clamp(0.0, 0.5);
    let band = bw.max(min_band);
    let hi_raw = f_lo + band;
    let f_hi = hi_raw.min(0.5);
    let hi_in = if hi_raw < 0.5 { 1.0 } else { 0.0 };
    let d_lo = if lo_in { 1.0 } else { 0.0 };
    let d_bw = if bw > min_band { hi_in } else { 0.0 };
    (f_lo, f_hi, [d_lo, hi_in * d_lo, d_bw])
}

fn taps(kernel: usize) -> impl Iterator<Item = f64> {
    let c = (kernel as f64 - 1.0) / 2.0;
    (0..kernel).map(move |k| k as f64 - c)
}

/// Impulse responses `[F,1,K]` from per-filter low edge, bandwidth and gain.
pub fn build_filters(lo: &[f64], bw: &[f64], gain: &[f64], kernel: usize, min_band: f64) -> Tensor {
    let win = hamming(kernel);
    let mut out = Vec::with_capacity(lo.len() * kernel);
    for f in 0..lo.len() {
        let (f_lo, f_hi, _) = band_edges(lo[f], bw[f], min_band);
        if f_hi <= f_lo {
            out.extend(std::iter::repeat_n(0.0, kernel));
            continue;
        }
        for (n, w) in taps(kernel).zip(&win) {
            let band = lowpass(f_hi, n).0 - lowpass(f_lo, n).0;
            out.push(gain[f] * band * w);
        }
    }
    Tensor::new([lo.len(), 1, kernel], out).expect("filter shape")
}

#[derive(Debug)]
struct SincFilters {
    kernel: usize,
    min_band: f64,
}

impl CustomOp for SincFilters {
    fn name(&self) -> &'static str {
        "sinc_filters"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
        _needs: &[bool],
    ) -> mrrawnet_tensor::Result<Vec<Option<Tensor>>> {
        let (lo, bw, gain) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let nf = lo.len();
        let win = hamming(self.kernel);
        let (mut g_lo, mut g_bw, mut g_gain) = (vec![0.0; nf], vec![0.0; nf], vec![0.0; nf]);
        for f in 0..nf {
            let (f_lo, f_hi, [dlo_lo, dhi_lo, dhi_bw]) = band_edges(lo[f], bw[f], self.min_band);
            if f_hi <= f_lo {
                continue;
            }
            let go = &grad_out.data()[f * self.kernel..(f + 1) * self.kernel];
            let (mut d_gain, mut d_hi, mut d_lo) = (0.0, 0.0, 0.0);
            for ((n, w), g) in taps(self.kernel).zip(&win).zip(go) {
                let (h, dh) = lowpass(f_hi, n);
                let (l, dl) = lowpass(f_lo, n);
                d_gain += g * (h - l) * w;
                d_hi += g * gain[f] * w * dh;
                d_lo -= g * gain[f] * w * dl;
            }
            g_gain[f] = d_gain;
            g_lo[f] = d_lo * dlo_lo + d_hi * dhi_lo;
            g_bw[f] = d_hi * dhi_bw;
        }
        Ok(vec![
            Some(Tensor::vector(&g_lo)),
            Some(Tensor::vector(&g_bw)),
            Some(Tensor::vector(&g_gain)),
        ])
    }
}

#[derive(Clone, Debug)]
pub struct ParamFbank {
    /// Low band edge, normalized frequency.
    pub lo: ParamId,
    pub bw: ParamId,
    pub gain: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub compress: bool,
    min_band: f64,
}

impl ParamFbank {
    /// Band edges start mel-spaced between 30 Hz and Nyquist, gain 1.
    pub fn new(
        b: &mut Builder,
        name: &str,
        filters: usize,
        (kernel, stride): (usize, usize),
        sample_rate: u32,
        compress: bool,
    ) -> Result<Self> {
        let sr = sample_rate as f64;
        let min_band = MIN_BAND_HZ / sr;
        let (m0, m1) = (hz_to_mel(INIT_LOW_HZ), hz_to_mel(sr / 2.0 - MIN_BAND_HZ));
        let hz: Vec<f64> = (0..=filters)
            .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / filters as f64))
            .collect();
        let lo: Vec<f64> = hz[..filters].iter().map(|h| h / sr).collect();
        let bw: Vec<f64> = hz.windows(2).map(|w| (w[1] - w[0]) / sr).collect();
        let mut b = b.sub(name);
        Ok(Self {
            lo: b.param("low", Tensor::vector(&lo))?,
            bw: b.param("band", Tensor::vector(&bw))?,
            gain: b.param("gain", Tensor::ones([filters]))?,
            kernel,
            stride,
            compress,
            min_band,
        })
    }

    pub fn filters(&self, store: &ParamStore) -> Tensor {
        build_filters(
            store.param(self.lo).value.data(),
            store.param(self.bw).value.data(),
            store.param(self.gain).value.data(),
            self.kernel,
            self.min_band,
        )
    }

    /// `[B,1,T] → [B,F,T/stride]`.
    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let filt = s.tape.custom(
            &[s.p(self.lo), s.p(self.bw), s.p(self.gain)],
            self.filters(s.store),
            Box::new(SincFilters {
                kernel: self.kernel,
                min_band: self.min_band,
            }),
        );
        let y = s
            .tape
            .conv1d(x, filt, None, Conv1dSpec::same().stride(self.stride))?;
        Ok(if self.compress {
            s.tape.log1p(s.tape.abs(y))
        } else {
            y
        })
    }
}
