//! Additive angular margin softmax over cosine logits.

use mrrawnet_tensor::{CustomOp, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Margin-adjusted target cosine. Past `cos(π−m)` the angle would wrap, so a
/// linear penalty `c − m·sin m` keeps the logit monotone in `c`.
pub fn target_cos(c: f64, m: f64) -> (f64, f64) {
    if c > (std::f64::consts::PI - m).cos() {
        let s = (1.0 - c * c).max(0.0).sqrt();
        let phi = c * m.cos() - s * m.sin();
        let dphi = m.cos() + m.sin() * c / s.max(1e-12);
        (phi, dphi)
    } else {
        (c - m * m.sin(), 1.0)
    }
}

/// Target logit `s·cos(θ+m)` for target cosine `c`.
pub fn target_logit(c: f64, m: f64, s: f64) -> f64 {
    s * target_cos(c, m).0
}

/// Per-row softmax probabilities and the mean cross-entropy.
fn cross_entropy(cos: &Tensor, labels: &[usize], m: f64, s: f64) -> (Tensor, Vec<f64>, f64) {
    let k = cos.shape()[1];
    let mut probs = Vec::with_capacity(cos.numel());
    let mut dphi = Vec::with_capacity(labels.len());
    let mut total = 0.0;
    for (row, &y) in cos.data().chunks(k).zip(labels) {
        let (phi, d) = target_cos(row[y], m);
        dphi.push(d);
        let logits: Vec<f64> = (0..k).map(|j| s * if j == y { phi } else { row[j] }).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        total += z.ln() + mx - logits[y];
        probs.extend(logits.iter().map(|l| (l - mx).exp() / z));
    }
    let probs = Tensor::new(cos.shape().to_vec(), probs).expect("prob shape");
    (probs, dphi, total / labels.len() as f64)
}

/// Mean loss for a `[B,K]` cosine matrix.
pub fn aam_loss_value(cos: &Tensor, labels: &[usize], m: f64, s: f64) -> f64 {
    cross_entropy(cos, labels, m, s).2
}

#[derive(Debug)]
struct AamCe {
    labels: Vec<usize>,
    probs: Tensor,
    dphi: Vec<f64>,
    scale: f64,
}

impl CustomOp for AamCe {
    fn name(&self) -> &'static str {
        "aam_cross_entropy"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
        _needs: &[bool],
    ) -> mrrawnet_tensor::Result<Vec<Option<Tensor>>> {
        let k = self.probs.shape()[1];
        let g = grad_out.item() * self.scale / self.labels.len() as f64;
        let mut out = self.probs.clone();
        for (b, (row, &y)) in out.data_mut().chunks_mut(k).zip(&self.labels).enumerate() {
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= g;
            }
            row[y] *= self.dphi[b];
        }
        Ok(vec![Some(out)])
    }
}

pub struct AamOutput {
    pub loss: Var,
    /// `[B,K]` cosines between normalized embeddings and class weights.
    pub cos: Var,
}

/// Normalizes embeddings `[B,D]` and class weights `[K,D]`, then applies the margin loss.
pub fn aam_softmax_loss(t: &Tape, emb: Var, weights: Var, labels: &[usize], m: f64, s: f64) -> Result<AamOutput> {
    let k = t.shape(weights)[0];
    if labels.len() != t.shape(emb)[0] {
        return Err(Error::Config("aam: one label per embedding required".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Config(format!("aam: label {bad} out of range for {k} classes")));
    }
    let e = t.normalize_rows(emb)?;
    let w = t.normalize_rows(weights)?;
    let cos = t.linear(e, w, None)?;
    let (probs, dphi, loss) = cross_entropy(&t.value(cos), labels, m, s);
    let op = AamCe {
        labels: labels.to_vec(),
        probs,
        dphi,
        scale: s,
    };
    Ok(AamOutput {
        loss: t.custom(&[cos], Tensor::scalar(loss), Box::new(op)),
        cos,
    })
}
