//! Variable-duration verification: centre crops, cosine scoring, EER and minDCF.

pub mod metrics;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mrrawnet_tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::error::{io_err, Error, Result};
use crate::model::Model;
use crate::train::preemphasis;
pub use metrics::{cosine_score, eer, min_dcf, operating_points, OperatingPoint};

pub const P_TARGET: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Cropped {
    pub samples: Vec<f64>,
    /// The utterance was shorter than the requested window.
    pub short: bool,
}

/// Keeps the centred `want` samples, floored to a multiple of `hop`. Shorter
/// utterances are returned whole (also floored) and flagged.
pub fn center_crop(x: &[f64], want: usize, hop: usize) -> Cropped {
    let short = want > x.len();
    let n = want.min(x.len()) / hop * hop;
    let start = (x.len() - n) / 2;
    Cropped {
        samples: x[start..start + n].to_vec(),
        short,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Duration {
    Full,
    Seconds(f64),
}

impl Duration {
    pub fn label(&self) -> String {
        match self {
            Self::Full => "full".into(),
            Self::Seconds(s) => format!("{s}s"),
        }
    }

    fn samples(&self, len: usize, sample_rate: u32) -> usize {
        match self {
            Self::Full => len,
            Self::Seconds(s) => (s * sample_rate as f64).round() as usize,
        }
    }
}

pub const DEFAULT_DURATIONS: [Duration; 4] = [
    Duration::Full,
    Duration::Seconds(5.0),
    Duration::Seconds(2.0),
    Duration::Seconds(1.0),
];

/// Parses a comma list such as `full,5,2,1` (seconds; a trailing `s` is allowed).
pub fn parse_durations(text: &str) -> Result<Vec<Duration>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|tok| {
            if tok.eq_ignore_ascii_case("full") {
                return Ok(Duration::Full);
            }
            let v: f64 = tok
                .trim_end_matches('s')
                .parse()
                .map_err(|_| Error::Config(format!("bad duration {tok:?}")))?;
            if v.is_finite() && v > 0.0 {
                Ok(Duration::Seconds(v))
            } else {
                Err(Error::Config(format!("duration must be positive, got {tok:?}")))
            }
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|d| {
            if d.is_empty() {
                Err(Error::Config("no durations given".into()))
            } else {
                Ok(d)
            }
        })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

/// One `<0|1> <enroll> <test>` trial per line; blank lines are skipped.
pub fn parse_trials_str(text: &str, path: &Path) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |detail: String| Error::Trials {
            path: path.to_owned(),
            line: i + 1,
            detail,
        };
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let target = match fields[0] {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("label must be 0 or 1, found {other:?}"))),
        };
        out.push(Trial {
            target,
            enroll: fields[1].to_owned(),
            test: fields[2].to_owned(),
        });
    }
    Ok(out)
}

pub fn parse_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_trials_str(&text, path)
}

/// Waveforms by utterance key.
pub type UtteranceStore = HashMap<String, Vec<f64>>;

/// Loads every key referenced by `trials` as a WAV path relative to `base`.
pub fn load_wavs(trials: &[Trial], base: &Path, sample_rate: u32) -> Result<UtteranceStore> {
    let keys: BTreeSet<&str> = trials.iter().flat_map(|t| [t.enroll.as_str(), t.test.as_str()]).collect();
    let mut store = UtteranceStore::new();
    for key in keys {
        let p: PathBuf = base.join(key);
        if !p.is_file() {
            return Err(Error::UnknownKey(key.to_owned()));
        }
        store.insert(key.to_owned(), read_wav(&p, sample_rate)?);
    }
    Ok(store)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationRow {
    pub duration: String,
    /// Percent.
    pub eer: f64,
    pub min_dcf: f64,
    pub threshold: f64,
    pub trials: usize,
    pub targets: usize,
    /// Utterances shorter than the requested window, scored whole.
    pub short_utterances: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<DurationRow>,
}

impl ScoreReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>8} {:>8} {:>10} {:>7} {:>6}\n",
            "duration", "EER(%)", "minDCF", "threshold", "trials", "short"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>8.3} {:>8.4} {:>10.4} {:>7} {:>6}",
                r.duration, r.eer, r.min_dcf, r.threshold, r.trials, r.short_utterances
            );
        }
        s
    }

    /// One JSON record per duration.
    pub fn jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    pub fn row(&self, label: &str) -> Option<&DurationRow> {
        self.rows.iter().find(|r| r.duration == label)
    }
}

/// Embeds each (utterance, duration) pair at most once.
pub struct Evaluator<'m> {
    pub model: &'m Model,
    cache: HashMap<(String, String), (Vec<f64>, bool)>,
}

impl<'m> Evaluator<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self {
            model,
            cache: HashMap::new(),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }

    /// Embedding of the centre crop of `x`, computed without the cache.
    pub fn embed_crop(model: &Model, x: &[f64], d: Duration) -> Result<(Vec<f64>, bool)> {
        let cfg = &model.config;
        let c = center_crop(x, d.samples(x.len(), cfg.sample_rate), model.hop());
        if c.samples.is_empty() {
            return Err(Error::Crop { len: x.len(), hop: model.hop() });
        }
        let n = c.samples.len();
        let wave = Tensor::new([1, 1, n], preemphasis(&c.samples, cfg.preemphasis))?;
        Ok((model.embed(&wave)?.into_data(), c.short))
    }

    fn fill(&mut self, keys: &[&str], store: &UtteranceStore, d: Duration) -> Result<()> {
        let label = d.label();
        let todo: Vec<&str> = keys
            .iter()
            .copied()
            .filter(|k| !self.cache.contains_key(&(k.to_string(), label.clone())))
            .collect();
        let model = self.model;
        let done: Vec<Result<(String, (Vec<f64>, bool))>> = todo
            .par_iter()
            .map(|&k| {
                let x = store.get(k).ok_or_else(|| Error::UnknownKey(k.to_owned()))?;
                Ok((k.to_owned(), Self::embed_crop(model, x, d)?))
            })
            .collect();
        for r in done {
            let (k, v) = r?;
            self.cache.insert((k, label.clone()), v);
        }
        Ok(())
    }

    pub fn evaluate(&mut self, trials: &[Trial], store: &UtteranceStore, durations: &[Duration]) -> Result<ScoreReport> {
        let keys: Vec<&str> = trials
            .iter()
            .flat_map(|t| [t.enroll.as_str(), t.test.as_str()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rows = Vec::with_capacity(durations.len());
        for &d in durations {
            self.fill(&keys, store, d)?;
            let label = d.label();
            let get = |k: &str| &self.cache[&(k.to_owned(), label.clone())];
            let scores = trials
                .iter()
                .map(|t| cosine_score(&get(&t.enroll).0, &get(&t.test).0))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<bool> = trials.iter().map(|t| t.target).collect();
            let (e, threshold) = eer(&scores, &labels)?;
            rows.push(DurationRow {
                duration: label.clone(),
                eer: 100.0 * e,
                min_dcf: min_dcf(&scores, &labels, P_TARGET, 1.0, 1.0)?,
                threshold,
                trials: trials.len(),
                targets: labels.iter().filter(|&&l| l).count(),
                short_utterances: keys.iter().filter(|k| get(k).1).count(),
            });
        }
        Ok(ScoreReport { rows })
    }
}

/// Scores `trials` at each duration with a fresh cache.
pub fn evaluate(model: &Model, trials: &[Trial], store: &UtteranceStore, durations: &[Duration]) -> Result<ScoreReport> {
    Evaluator::new(model).evaluate(trials, store, durations)
}
