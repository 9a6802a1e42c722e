use crate::error::{Error, Result};

/// Cosine similarity of two equal-length vectors.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!("dimension mismatch {} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Metric("cosine score of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// One point of the detection trade-off: a score is accepted when `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Operating points at every distinct score and at `+∞`, by increasing threshold.
pub fn operating_points(scores: &[f64], labels: &[bool]) -> Result<Vec<OperatingPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::Metric("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let nt = labels.iter().filter(|&&l| l).count();
    let nn = labels.len() - nt;
    if nt == 0 || nn == 0 {
        return Err(Error::Metric("need at least one target and one non-target trial".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut points = Vec::new();
    // Targets below / non-targets at-or-above the current threshold.
    let (mut misses, mut fas) = (0usize, nn);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        points.push(OperatingPoint {
            threshold: t,
            p_miss: misses as f64 / nt as f64,
            p_fa: fas as f64 / nn as f64,
        });
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] {
                misses += 1;
            } else {
                fas -= 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate (fraction) and the threshold of the first operating point
/// at or past the crossing. Between two bracketing points the rate is linearly
/// interpolated.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let pts = operating_points(scores, labels)?;
    for (i, p) in pts.iter().enumerate() {
        let d = p.p_miss - p.p_fa;
        if d == 0.0 {
            return Ok((p.p_miss, p.threshold));
        }
        if d > 0.0 {
            // The lowest threshold accepts everything, so i >= 1 here.
            let q = pts[i - 1];
            let dq = q.p_miss - q.p_fa;
            let a = -dq / (d - dq);
            return Ok((q.p_miss + a * (p.p_miss - q.p_miss), p.threshold));
        }
    }
    unreachable!("the +inf point always has p_miss = 1 >= p_fa = 0")
}

/// Minimum of `c_miss·P_miss·p + c_fa·P_fa·(1−p)` over thresholds, divided by
/// `min(c_miss·p, c_fa·(1−p))`.
pub fn min_dcf(scores: &[f64], labels: &[bool], p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    let pts = operating_points(scores, labels)?;
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let best = pts
        .iter()
        .map(|p| c_miss * p.p_miss * p_target + c_fa * p.p_fa * (1.0 - p_target))
        .fold(f64::INFINITY, f64::min);
    Ok(best / norm)
}
