use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mrrawnet::corpus::CorpusSpec;
use mrrawnet::eval::{parse_durations, Duration};
use mrrawnet::train::TrainConfig;
use mrrawnet::ModelConfig;
use serde::{Deserialize, Serialize};

/// Everything a `train` run needs; with the seed it determines every output.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name or a model TOML path relative to this file.
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Unseen utterances per speaker written out as the trial set.
    pub heldout_per_speaker: usize,
    pub durations: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            heldout_per_speaker: 4,
            durations: "full,5,2,1".into(),
        }
    }
}

fn default_model() -> String {
    "micro".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

pub struct Resolved {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub durations: Vec<Duration>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Resolved> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let run: RunConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let model = match ModelConfig::preset(&run.model) {
            Some(m) => m,
            None => {
                let p = base.join(&run.model);
                let text = std::fs::read_to_string(&p)
                    .with_context(|| format!("model {:?} is neither a preset nor a readable file", run.model))?;
                ModelConfig::from_toml(&text).with_context(|| format!("invalid model config {}", p.display()))?
            }
        };
        if run.corpus.sample_rate != model.sample_rate {
            bail!(
                "corpus sample rate {} differs from model sample rate {}",
                run.corpus.sample_rate,
                model.sample_rate
            );
        }
        if run.train.batch_size == 0 || run.train.epochs == 0 {
            bail!("train: batch_size and epochs must be positive");
        }
        let durations = parse_durations(&run.eval.durations)?;
        Ok(Resolved { run, model, durations })
    }
}
