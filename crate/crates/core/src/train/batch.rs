use mrrawnet_tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Utterance;

/// `y[0] = x[0]`, `y[n] = x[n] − coef·x[n−1]`.
pub fn preemphasis(x: &[f64], coef: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    let mut prev = None;
    for &v in x {
        y.push(match prev {
            None => v,
            Some(p) => v - coef * p,
        });
        prev = Some(v);
    }
    y
}

/// Half the batches use the full crop; the rest draw a length uniformly
/// between `min_len` and `full_len`. Lengths are floored to a multiple of `hop`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPolicy {
    pub full_len: usize,
    pub min_len: usize,
    pub p_full: f64,
    pub hop: usize,
}

impl BatchPolicy {
    /// 3 s full crops, 1 s minimum.
    pub fn new(sample_rate: u32, hop: usize) -> Self {
        let sr = sample_rate as usize;
        Self {
            full_len: 3 * sr,
            min_len: sr,
            p_full: 0.5,
            hop,
        }
    }

    pub fn draw_len(&self, rng: &mut ChaCha8Rng) -> usize {
        let len = if rng.random_bool(self.p_full) {
            self.full_len
        } else {
            rng.random_range(self.min_len..=self.full_len)
        };
        (len / self.hop * self.hop).max(self.hop)
    }
}

/// Hook for waveform augmentation; the default does nothing.
pub trait Augment {
    fn apply(&self, _wave: &mut [f64], _rng: &mut ChaCha8Rng) {}
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoAugment;

impl Augment for NoAugment {}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B,1,L]`, pre-emphasized.
    pub wave: Tensor,
    pub labels: Vec<usize>,
    /// Utterances shorter than the crop, filled by repetition.
    pub wrapped: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.wave.shape()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Crops every utterance to one shared length at a random offset.
pub fn make_batch(
    utts: &[&Utterance],
    policy: &BatchPolicy,
    preemph: f64,
    augment: &dyn Augment,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let len = policy.draw_len(rng);
    let mut data = Vec::with_capacity(utts.len() * len);
    let mut wrapped = Vec::new();
    for u in utts {
        let n = u.samples.len();
        let mut crop: Vec<f64> = if n >= len {
            let start = rng.random_range(0..=n - len);
            u.samples[start..start + len].to_vec()
        } else {
            wrapped.push(u.key.clone());
            u.samples.iter().copied().cycle().take(len).collect()
        };
        augment.apply(&mut crop, rng);
        data.extend(preemphasis(&crop, preemph));
    }
    Batch {
        wave: Tensor::new([utts.len(), 1, len], data).expect("batch shape"),
        labels: utts.iter().map(|u| u.speaker).collect(),
        wrapped,
    }
}
