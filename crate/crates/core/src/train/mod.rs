//! Desk-scale training: rectangular random-length batches, margin softmax,
//! Adam with cosine annealing.

pub mod aam;
pub mod batch;
pub mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use mrrawnet_tensor::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{SynthCorpus, Utterance};
use crate::error::{io_err, Error, Result};
use crate::model::Model;
pub use aam::{aam_softmax_loss, target_logit};
pub use batch::{make_batch, preemphasis, Augment, Batch, BatchPolicy, NoAugment};
pub use optim::{cosine_lr, Adam};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to one pass over the utterances.
    pub steps_per_epoch: Option<usize>,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 1,
            steps_per_epoch: None,
            lr_max: 5e-4,
            lr_min: 3e-6,
            weight_decay: 5e-5,
            margin: 0.3,
            scale: 30.0,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, utterances: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| utterances.div_ceil(self.batch_size.max(1)))
            .max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<StepRecord>,
    /// Class weights `[K,D]` of the margin head.
    pub head: Tensor,
    pub checkpoints: Vec<PathBuf>,
    /// Batches in which some utterance was shorter than the crop.
    pub wrapped_batches: usize,
}

/// Row-wise argmax of `cos` compared against `labels`.
fn batch_accuracy(cos: &Tensor, labels: &[usize]) -> f64 {
    let k = cos.shape()[1];
    let hits = cos
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn dump(batch: &Batch) -> String {
    let w = &batch.wave;
    let mean = w.mean();
    let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.numel() as f64).sqrt();
    format!(
        "shape {:?}, mean {mean:.4e}, std {std:.4e}, finite {}, labels {:?}",
        w.shape(),
        w.all_finite(),
        batch.labels
    )
}

/// Trains `model` in place on every utterance of `corpus`, one checkpoint per
/// epoch when `out` is given. Fully determined by `seed`.
pub fn train_loop(
    model: &mut Model,
    corpus: &SynthCorpus,
    cfg: &TrainConfig,
    seed: u64,
    out: Option<&Path>,
    augment: &dyn Augment,
) -> Result<TrainOutcome> {
    let k = corpus.num_speakers();
    let d = model.embed_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let mut head = Tensor::from_fn([k, d], |_| rng.random_range(-bound..bound));
    let policy = BatchPolicy::new(model.config.sample_rate, model.hop());
    let per_epoch = cfg.steps_per_epoch(corpus.utterances.len());
    let total = per_epoch * cfg.epochs;
    let sizes: Vec<usize> = model.store.params().iter().map(|p| p.value.numel()).collect();
    let head_slot = sizes.len();
    let mut adam = Adam::new(sizes.into_iter().chain([k * d]), cfg.weight_decay);

    let mut log = Vec::with_capacity(total);
    let mut checkpoints = Vec::new();
    let mut wrapped_batches = 0;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut metrics = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let p = dir.join("metrics.jsonl");
            Some((std::fs::File::create(&p).map_err(io_err(&p))?, p))
        }
        None => None,
    };

    for step in 0..total {
        let mut picks: Vec<&Utterance> = Vec::with_capacity(cfg.batch_size);
        while picks.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..corpus.utterances.len()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                cursor = 0;
            }
            picks.push(&corpus.utterances[order[cursor]]);
            cursor += 1;
        }
        let batch = make_batch(&picks, &policy, model.config.preemphasis, augment, &mut rng);
        if !batch.wrapped.is_empty() {
            wrapped_batches += 1;
        }
        let lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min);

        let s = model.session(Mode::Train);
        let x = s.tape.constant(batch.wave.clone());
        let emb = model.forward(&s, x)?;
        let w = s.tape.variable(head.clone());
        let aam = aam_softmax_loss(&s.tape, emb, w, &batch.labels, cfg.margin, cfg.scale)?;
        let loss = s.tape.value(aam.loss).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, dump: dump(&batch) });
        }
        let acc = batch_accuracy(&s.tape.value(aam.cos), &batch.labels);
        let grads = s.tape.backward(aam.loss)?;
        let updates = s.take_updates();
        let ids: Vec<_> = model.store.param_ids().collect();
        let param_grads: Vec<Option<Tensor>> = ids.iter().map(|&id| grads.param_grad(id).cloned()).collect();
        let head_grad = grads.get(w).cloned();
        drop(grads);
        drop(s);

        adam.begin_step();
        for (slot, (id, g)) in ids.iter().zip(param_grads).enumerate() {
            let p = model.store.param_mut(*id);
            let zero;
            let g = match &g {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0; p.value.numel()];
                    &zero
                }
            };
            adam.update(slot, p.value.data_mut(), g, lr);
        }
        if let Some(g) = head_grad {
            adam.update(head_slot, head.data_mut(), g.data(), lr);
        }
        model.apply_updates(updates);

        let rec = StepRecord { step, loss, lr, acc };
        if let Some((f, p)) = metrics.as_mut() {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(f, "{line}").map_err(io_err(p.as_path()))?;
        }
        log.push(rec);

        if (step + 1) % per_epoch == 0 {
            if let Some(dir) = out {
                let p = dir.join(format!("epoch{:03}.mrrw", (step + 1) / per_epoch));
                checkpoint::save(model, &p)?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(dir) = out {
        let p = dir.join("model.mrrw");
        checkpoint::save(model, &p)?;
        checkpoints.push(p);
    }
    Ok(TrainOutcome {
        log,
        head,
        checkpoints,
        wrapped_batches,
    })
}

/// Eval-mode speaker classification accuracy on centred `crop`-sample windows.
pub fn classification_accuracy(model: &Model, head: &Tensor, utts: &[Utterance], crop: usize) -> Result<f64> {
    let mut hits = 0;
    let k = head.shape()[0];
    for u in utts {
        let n = crate::eval::center_crop(&u.samples, crop, model.hop()).samples;
        let wave = Tensor::new([1, 1, n.len()], preemphasis(&n, model.config.preemphasis))?;
        let e = model.embed(&wave)?;
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let en = norm(e.data());
        let scores: Vec<f64> = (0..k)
            .map(|j| {
                let w = head.row(j);
                e.data().iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / (en * norm(w))
            })
            .collect();
        if argmax(&scores) == u.speaker {
            hits += 1;
        }
    }
    Ok(hits as f64 / utts.len() as f64)
}
