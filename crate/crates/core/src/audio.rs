//! 16-bit PCM mono WAV reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

fn audio_err(path: &Path, detail: impl ToString) -> Error {
    Error::Audio {
        path: path.to_owned(),
        detail: detail.to_string(),
    }
}

/// Reads a mono 16-bit WAV at `sample_rate`, scaled to [−1, 1).
pub fn read_wav(path: impl AsRef<Path>, sample_rate: u32) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(audio_err(path, "expected mono 16-bit PCM"));
    }
    if spec.sample_rate != sample_rate {
        return Err(audio_err(
            path,
            format!("sample rate {} Hz, expected {sample_rate} Hz", spec.sample_rate),
        ));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(|e| audio_err(path, e)))
        .collect()
}

/// Writes samples clipped to [−1, 1] as mono 16-bit PCM.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| audio_err(path, e))?;
    }
    w.finalize().map_err(|e| audio_err(path, e))
}

/// Rounds samples the way a WAV round trip does.
pub fn quantize(samples: &[f64]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| (s.clamp(-1.0, 1.0) * 32767.0).round() / 32768.0)
        .collect()
}
