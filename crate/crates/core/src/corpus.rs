//! Deterministic synthetic speakers: a glottal pulse source shaped by
//! vowel formants scaled per speaker, with syllable-level phonetic variation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::eval::{Trial, UtteranceStore};

/// Lowest fundamental and the slot spacing between speakers' fundamentals, Hz.
/// A ±2 Hz per-speaker offset keeps any two speakers at least 20 Hz apart.
pub const F0_BASE: f64 = 85.0;
pub const F0_SPACING: f64 = 24.0;
pub const MIN_F0_GAP: f64 = 20.0;

/// (F1, F2, F3) of five reference vowels, Hz.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_min_dur")]
    pub min_dur: f64,
    #[serde(default = "default_max_dur")]
    pub max_dur: f64,
}

fn default_rate() -> u32 {
    16_000
}
fn default_min_dur() -> f64 {
    2.0
}
fn default_max_dur() -> f64 {
    6.0
}

impl CorpusSpec {
    pub fn new(speakers: usize, utts_per_speaker: usize, seed: u64) -> Self {
        Self {
            speakers,
            utts_per_speaker,
            seed,
            sample_rate: default_rate(),
            min_dur: default_min_dur(),
            max_dur: default_max_dur(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerRecipe {
    pub f0: f64,
    /// Formant scale from vocal-tract length.
    pub tract: f64,
    pub bandwidth: f64,
    /// Fraction of each glottal period the glottis is open.
    pub open_quotient: f64,
    pub breath: f64,
    /// Fixed high resonance, Hz.
    pub ring: f64,
}

#[derive(Clone, Debug)]
pub struct Utterance {
    pub key: String,
    pub speaker: usize,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerRecipe>,
    pub utterances: Vec<Utterance>,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const UTT_STREAM: u64 = 1 << 40;

impl SynthCorpus {
    pub fn generate(spec: &CorpusSpec) -> Result<Self> {
        let speakers = recipes(spec)?;
        let mut corpus = Self {
            spec: spec.clone(),
            speakers,
            utterances: Vec::new(),
        };
        corpus.utterances = (0..spec.speakers)
            .flat_map(|s| (0..spec.utts_per_speaker).map(move |u| (s, u)))
            .map(|(s, u)| corpus.utterance(s, u))
            .collect();
        Ok(corpus)
    }

    /// Utterance `index` of `speaker`; indices past `utts_per_speaker` give
    /// held-out material from the same recipe.
    pub fn utterance(&self, speaker: usize, index: usize) -> Utterance {
        let r = &self.speakers[speaker];
        let mut rng = stream(self.spec.seed, UTT_STREAM + ((speaker as u64) << 20) + index as u64);
        let sr = self.spec.sample_rate as f64;
        let dur = rng.random_range(self.spec.min_dur..=self.spec.max_dur);
        let n = (dur * sr) as usize;
        Utterance {
            key: format!("spk{speaker:03}_utt{index:03}"),
            speaker,
            samples: render(r, n, sr, &mut rng),
        }
    }

    pub fn num_speakers(&self) -> usize {
        self.spec.speakers
    }

    /// Verification trials over every pair of `per_speaker` held-out utterances
    /// per speaker, none of which appear in `utterances`.
    pub fn heldout_trials(&self, per_speaker: usize) -> (Vec<Trial>, UtteranceStore) {
        let first = self.spec.utts_per_speaker;
        let held: Vec<Utterance> = (0..self.spec.speakers)
            .flat_map(|s| (first..first + per_speaker).map(move |i| (s, i)))
            .map(|(s, i)| self.utterance(s, i))
            .collect();
        let mut trials = Vec::with_capacity(held.len() * held.len().saturating_sub(1) / 2);
        for (i, a) in held.iter().enumerate() {
            for b in &held[i + 1..] {
                trials.push(Trial {
                    target: a.speaker == b.speaker,
                    enroll: a.key.clone(),
                    test: b.key.clone(),
                });
            }
        }
        let store = held.into_iter().map(|u| (u.key, u.samples)).collect();
        (trials, store)
    }
}

/// Convenience wrapper with default durations.
pub fn synth_corpus(num_speakers: usize, utts_per_speaker: usize, seed: u64) -> Result<SynthCorpus> {
    SynthCorpus::generate(&CorpusSpec::new(num_speakers, utts_per_speaker, seed))
}

fn recipes(spec: &CorpusSpec) -> Result<Vec<SpeakerRecipe>> {
    if spec.speakers < 2 {
        return Err(config_err("corpus: need at least two speakers"));
    }
    if !(spec.min_dur > 0.0 && spec.min_dur <= spec.max_dur) {
        return Err(config_err("corpus: need 0 < min_dur <= max_dur"));
    }
    let mut slots: Vec<usize> = (0..spec.speakers).collect();
    let mut rng = stream(spec.seed, 0);
    for i in (1..slots.len()).rev() {
        slots.swap(i, rng.random_range(0..=i));
    }
    Ok(slots
        .iter()
        .enumerate()
        .map(|(k, &slot)| {
            let mut r = stream(spec.seed, 1 + k as u64);
            SpeakerRecipe {
                f0: F0_BASE + F0_SPACING * slot as f64 + r.random_range(-2.0..2.0),
                tract: r.random_range(0.85..1.2),
                bandwidth: r.random_range(0.8..1.4),
                open_quotient: r.random_range(0.3..0.7),
                breath: r.random_range(0.02..0.12),
                ring: r.random_range(2900.0..4600.0),
            }
        })
        .collect())
}

/// Two-pole resonator with unit peak gain.
#[derive(Clone, Copy, Default)]
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, fc: f64, bw: f64, sr: f64) {
        let r = (-PI * bw / sr).exp();
        let th = 2.0 * PI * fc.min(0.45 * sr) / sr;
        self.a1 = 2.0 * r * th.cos();
        self.a2 = -r * r;
        self.g = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * th).cos() + r * r).sqrt();
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn render(r: &SpeakerRecipe, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = vec![0.0; n];
    let mut res = [Resonator::default(); 4];
    res[3].tune(r.ring, 250.0 * r.bandwidth, sr);
    let f0_utt = r.f0 * rng.random_range(0.96..1.04);
    let mut phase = 0.0;
    let mut prev_g = 0.0;
    let mut t = (rng.random_range(0.0..0.15) * sr) as usize;
    while t < n {
        let syl = ((rng.random_range(0.12..0.35) * sr) as usize).min(n - t);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        for (k, f) in vowel.iter().enumerate() {
            let jitter = rng.random_range(0.93..1.07);
            res[k].tune(f * r.tract * jitter, (60.0 + 40.0 * k as f64) * r.bandwidth, sr);
        }
        let glide = rng.random_range(-0.08..0.08);
        let ramp = (0.02 * sr) as usize;
        for i in 0..syl {
            let pos = i as f64 / syl as f64;
            let f0 = f0_utt * (1.0 + glide * (pos - 0.5));
            phase = (phase + f0 / sr).fract();
            let g = if phase < r.open_quotient {
                (PI * phase / r.open_quotient).sin().powi(2)
            } else {
                0.0
            };
            let src = (g - prev_g) * 8.0 + r.breath * noise.sample(rng);
            prev_g = g;
            let env = (i.min(syl - 1 - i) as f64 / ramp as f64).min(1.0);
            let mut y = 0.0;
            for res in &mut res[..3] {
                y += res.step(src);
            }
            y += 0.5 * res[3].step(src);
            out[t + i] = env * y;
        }
        t += syl + (rng.random_range(0.03..0.15) * sr) as usize;
    }
    for v in out.iter_mut() {
        *v += 0.002 * noise.sample(rng);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let gain = rng.random_range(0.3..0.6) / peak;
    out.iter_mut().for_each(|v| *v *= gain);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = synth_corpus(3, 2, 5).unwrap();
        let b = synth_corpus(3, 2, 5).unwrap();
        assert_eq!(a.utterances.len(), 6);
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(x.samples, y.samples);
            let secs = x.samples.len() as f64 / 16_000.0;
            assert!((2.0..=6.0).contains(&secs));
            assert!(x.samples.iter().all(|v| v.abs() < 1.0));
        }
        assert_eq!(a.utterances[3].key, "spk001_utt001");
    }

    #[test]
    fn fundamentals_are_spread() {
        let c = synth_corpus(12, 1, 1).unwrap();
        for (i, p) in c.speakers.iter().enumerate() {
            for q in &c.speakers[i + 1..] {
                assert!((p.f0 - q.f0).abs() >= MIN_F0_GAP);
            }
        }
        assert!(synth_corpus(1, 1, 1).is_err());
    }

    #[test]
    fn heldout_pairs_are_disjoint_from_training() {
        let c = synth_corpus(3, 2, 9).unwrap();
        let (trials, store) = c.heldout_trials(2);
        assert_eq!(trials.len(), 15);
        assert_eq!(trials.iter().filter(|t| t.target).count(), 3);
        assert_eq!(store.len(), 6);
        for u in &c.utterances {
            assert!(!store.contains_key(&u.key));
        }
        assert!(store.contains_key("spk002_utt003"));
    }
}
