//! The synthetic speakers must be separable by a linear classifier on
//! utterance-level log-mel statistics.

use mrrawnet::corpus::{synth_corpus, Utterance};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const NFFT: usize = 512;
const HOP: usize = 160;
const BANDS: usize = 40;

fn mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn triangles(sr: f64) -> Vec<Vec<f64>> {
    let top = mel(sr / 2.0);
    let centers: Vec<f64> = (0..BANDS + 2).map(|i| top * i as f64 / (BANDS + 1) as f64).collect();
    (0..BANDS)
        .map(|b| {
            (0..=NFFT / 2)
                .map(|k| {
                    let m = mel(k as f64 * sr / NFFT as f64);
                    let (l, c, r) = (centers[b], centers[b + 1], centers[b + 2]);
                    if m <= l || m >= r {
                        0.0
                    } else if m <= c {
                        (m - l) / (c - l)
                    } else {
                        (r - m) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

/// Mean and standard deviation over frames of each log-mel band.
fn features(u: &Utterance, bank: &[Vec<f64>], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let fft = planner.plan_fft_forward(NFFT);
    let win: Vec<f64> = (0..NFFT)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / NFFT as f64).cos())
        .collect();
    let mut frames = Vec::new();
    for start in (0..u.samples.len().saturating_sub(NFFT)).step_by(HOP) {
        let mut buf: Vec<Complex<f64>> = (0..NFFT).map(|i| Complex::new(u.samples[start + i] * win[i], 0.0)).collect();
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..=NFFT / 2].iter().map(|c| c.norm_sqr()).collect();
        frames.push(
            bank.iter()
                .map(|tri| (tri.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>() + 1e-8).ln())
                .collect::<Vec<f64>>(),
        );
    }
    let n = frames.len() as f64;
    let mut out = Vec::with_capacity(2 * BANDS);
    for b in 0..BANDS {
        let m = frames.iter().map(|f| f[b]).sum::<f64>() / n;
        let v = frames.iter().map(|f| (f[b] - m).powi(2)).sum::<f64>() / n;
        out.push(m);
        out.push(v.sqrt());
    }
    out
}

/// Multinomial logistic regression by full-batch gradient descent on standardized features.
fn fit(x: &[Vec<f64>], y: &[usize], k: usize) -> impl Fn(&[f64]) -> usize {
    let d = x[0].len();
    let mu: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (x.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / x.len() as f64).sqrt() + 1e-9)
        .collect();
    let z = move |r: &[f64]| -> Vec<f64> { r.iter().enumerate().map(|(j, v)| (v - mu[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = x.iter().map(|r| z(r)).collect();
    let mut w = vec![vec![0.0; d + 1]; k];
    let logits = move |w: &[Vec<f64>], r: &[f64]| -> Vec<f64> {
        w.iter().map(|wc| wc[d] + wc[..d].iter().zip(r).map(|(a, b)| a * b).sum::<f64>()).collect()
    };
    for _ in 0..500 {
        let mut g = vec![vec![0.0; d + 1]; k];
        for (r, &label) in xs.iter().zip(y) {
            let l = logits(&w, r);
            let mx = l.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let p = e[c] / s - if c == label { 1.0 } else { 0.0 };
                for j in 0..d {
                    g[c][j] += p * r[j];
                }
                g[c][d] += p;
            }
        }
        for c in 0..k {
            for j in 0..=d {
                w[c][j] -= 0.5 * (g[c][j] / xs.len() as f64 + if j < d { 1e-3 * w[c][j] } else { 0.0 });
            }
        }
    }
    move |r: &[f64]| {
        let l = logits(&w, &z(r));
        (0..k).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap()
    }
}

#[test]
fn mel_statistics_linear_probe_exceeds_ninety_percent() {
    let corpus = synth_corpus(8, 10, 3).unwrap();
    let bank = triangles(16_000.0);
    let mut planner = FftPlanner::new();
    let x: Vec<Vec<f64>> = corpus.utterances.iter().map(|u| features(u, &bank, &mut planner)).collect();
    let y: Vec<usize> = corpus.utterances.iter().map(|u| u.speaker).collect();
    let predict = fit(&x, &y, 8);

    let held: Vec<Utterance> = (0..8).flat_map(|s| (10..15).map(move |i| (s, i))).map(|(s, i)| corpus.utterance(s, i)).collect();
    let hits = held
        .iter()
        .filter(|u| predict(&features(u, &bank, &mut planner)) == u.speaker)
        .count();
    let acc = hits as f64 / held.len() as f64;
    println!("held-out probe accuracy {acc:.3}");
    assert!(acc > 0.9, "probe accuracy {acc}");
}
