//! Self-checks run by the `verify` command: invariant suites and, at the full
//! level, finite-difference gradient checks of every block on micro configs.

use std::time::Instant;

use mrrawnet_tensor::ops::basic::softmax;
use mrrawnet_tensor::ops::norm::global_layer_norm;
use mrrawnet_tensor::{
    finite_diff_check, GradCheckOptions, GradCheckReport, Mode, ParamStore, Tape, Tensor, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{AfmsRes2Block, Gate, GateNorm, MraBlock};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::eval::{eer, min_dcf};
use crate::frontend::geometry::derive_geometry;
use crate::frontend::tcn::ConvBlock;
use crate::head::Asp;
use crate::model::Model;
use crate::nn::{Builder, Session};
use crate::train::aam::{aam_loss_value, aam_softmax_loss, target_logit};
use crate::train::cosine_lr;

/// Largest accepted relative error of analytic against numeric gradients.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub full: bool,
    #[doc(hidden)]
    pub corrupt_gate: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Suite = fn(&VerifyOptions) -> std::result::Result<String, String>;

pub fn run(opts: &VerifyOptions) -> Vec<SuiteResult> {
    let mut suites: Vec<(&'static str, Suite)> = vec![
        ("geometry", geometry),
        ("shape-law", shape_law),
        ("softmax", softmax_laws),
        ("gln", gln_laws),
        ("gate-normalization", gate_normalization),
        ("asp-normalization", asp_normalization),
        ("metric-oracle", metric_oracle),
        ("schedule-loss", schedule_loss),
    ];
    if opts.full {
        suites.push(("gradients", gradients));
    }
    suites
        .into_iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let r = f(opts);
            let seconds = t.elapsed().as_secs_f64();
            match r {
                Ok(detail) => SuiteResult {
                    name,
                    passed: true,
                    detail,
                    seconds,
                },
                Err(detail) => SuiteResult {
                    name,
                    passed: false,
                    detail,
                    seconds,
                },
            }
        })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

fn geometry(_: &VerifyOptions) -> std::result::Result<String, String> {
    let g = derive_geometry(50, 16, 4).map_err(s)?;
    let km: Vec<_> = g.extractors.iter().map(|e| (e.kernel, e.m)).collect();
    ensure(km == [(50, 16), (100, 8), (200, 4), (400, 2)], || format!("schedule {km:?}"))?;
    ensure(g.hop == 160 && g.frames(48_000) == Some(300), || format!("hop {}", g.hop))?;
    ensure(derive_geometry(50, 16, 5).is_err(), || "N=5 accepted".into())?;
    Ok(format!("hop {} samples", g.hop))
}

fn shape_law(_: &VerifyOptions) -> std::result::Result<String, String> {
    let m = Model::assemble(&ModelConfig::micro(), 0).map_err(s)?;
    let c = &m.config;
    let f = c.mrfe.f2 * c.mrfe.n;
    let (ch, p) = (c.backbone.channels, c.backbone.pool_channels);
    for secs in [1, 2] {
        let t = 16_000 * secs;
        let l = t / 160;
        let trace = m.trace(&Tensor::zeros([1, 1, t])).map_err(s)?;
        let want: Vec<Vec<usize>> = vec![
            vec![1, f, l],
            vec![1, ch, l],
            vec![1, ch, l],
            vec![1, ch, l],
            vec![1, ch, l],
            vec![1, 3 * ch, l],
            vec![1, p, l],
            vec![1, 2 * p],
            vec![1, c.head.embed_dim],
        ];
        let got: Vec<Vec<usize>> = trace.into_iter().map(|(_, sh)| sh).collect();
        ensure(got == want, || format!("T={t}: trace {got:?}, expected {want:?}"))?;
    }
    let total = Model::assemble(&ModelConfig::mr_rawnet(), 0).map_err(s)?.count_params().total;
    ensure((12_400_000..=18_600_000).contains(&total), || format!("default count {total}"))?;
    Ok(format!("micro trace ok; default model {total} parameters"))
}

fn softmax_laws(_: &VerifyOptions) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = uniform(&mut rng, &[3, 4, 5], 20.0);
        for axis in 0..3 {
            let y = softmax(&x, axis).map_err(s)?;
            let shifted = softmax(&x.map(|v| v + 7.5), axis).map_err(s)?;
            worst = worst.max(y.max_abs_diff(&shifted));
            let sums = mrrawnet_tensor::ops::basic::sum_axis(&y, axis).map_err(s)?;
            worst = sums.data().iter().fold(worst, |w, v| w.max((v - 1.0).abs()));
            ensure(y.data().iter().all(|v| *v >= 0.0), || "negative probability".into())?;
        }
    }
    ensure(worst < 1e-12, || format!("deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn gln_laws(_: &VerifyOptions) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = uniform(&mut rng, &[2, 6, 9], 10.0);
        let y = global_layer_norm(&x, &Tensor::ones([6]), &Tensor::zeros([6]), 1e-5).map_err(s)?;
        for (xi, yi) in x.data().chunks(54).zip(y.data().chunks(54)) {
            let mx = xi.iter().sum::<f64>() / 54.0;
            let vx = xi.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / 54.0;
            let m = yi.iter().sum::<f64>() / 54.0;
            let v = yi.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 54.0;
            mean_err = mean_err.max(m.abs());
            var_err = var_err.max((v - vx / (vx + 1e-5)).abs());
        }
    }
    ensure(mean_err < 1e-10 && var_err < 1e-10, || format!("mean {mean_err:.2e}, var {var_err:.2e}"))?;
    Ok(format!("mean {mean_err:.1e}, variance {var_err:.1e}"))
}

fn gate_normalization(opts: &VerifyOptions) -> std::result::Result<String, String> {
    let mut m = Model::assemble(&ModelConfig::micro(), 3).map_err(s)?;
    if opts.corrupt_gate {
        m.set_gate_norm(GateNorm::Unnormalized);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let c = m.config.backbone.channels;
    for blk in m.mra_blocks() {
        for mode in [Mode::Train, Mode::Eval] {
            let sess = m.session(mode);
            let x = sess.tape.constant(uniform(&mut rng, &[3, c, 10], 2.0));
            let a = sess.tape.value(blk.forward_gated(&sess, x).map_err(s)?.alpha);
            let n = a.numel() / 3;
            for j in 0..n {
                let col = [a.data()[j], a.data()[n + j], a.data()[2 * n + j]];
                worst = worst.max((col.iter().sum::<f64>() - 1.0).abs());
                ensure(col.iter().all(|v| *v > 0.0 && *v < 1.0), || format!("weight outside (0,1): {col:?}"))?;
            }
        }
    }
    ensure(worst < 1e-12, || format!("branch weights sum off by {worst:.3e}"))?;
    Ok(format!("max |Σα − 1| = {worst:.1e}"))
}

fn asp_normalization(_: &VerifyOptions) -> std::result::Result<String, String> {
    let m = Model::assemble(&ModelConfig::micro(), 4).map_err(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = m.config.backbone.pool_channels;
    let mut worst = 0.0f64;
    for l in [1, 5, 30] {
        let sess = m.session(Mode::Eval);
        let x = sess.tape.constant(uniform(&mut rng, &[2, p, l], 3.0));
        let out = m.asp().forward(&sess, x).map_err(s)?;
        let w = sess.tape.value(out.weights);
        for row in w.data().chunks(l) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            ensure(row.iter().all(|v| *v >= 0.0), || "negative attention weight".into())?;
        }
        let pooled = sess.tape.value(out.pooled);
        ensure(pooled.data().chunks(2 * p).all(|r| r[p..].iter().all(|v| *v >= 0.0)), || {
            "negative pooled deviation".into()
        })?;
    }
    ensure(worst < 1e-12, || format!("attention sums off by {worst:.3e}"))?;
    Ok(format!("max |Σw − 1| = {worst:.1e}"))
}

/// Threshold-by-threshold recount: for every candidate threshold the error
/// rates are recomputed from scratch over all trials.
pub fn brute_force_rates(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut cands: Vec<f64> = scores.to_vec();
    cands.push(f64::INFINITY);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let nt = labels.iter().filter(|&&l| l).count() as f64;
    let nn = labels.len() as f64 - nt;
    cands
        .into_iter()
        .map(|t| {
            let miss = scores.iter().zip(labels).filter(|(s, &l)| l && **s < t).count() as f64;
            let fa = scores.iter().zip(labels).filter(|(s, &l)| !l && **s >= t).count() as f64;
            (t, miss / nt, fa / nn)
        })
        .collect()
}

/// EER from [`brute_force_rates`], interpolating linearly at the sign change of `P_miss − P_fa`.
pub fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let r = brute_force_rates(scores, labels);
    let k = r.iter().position(|&(_, m, f)| m >= f).expect("+inf point crosses");
    let (_, m1, f1) = r[k];
    if m1 == f1 {
        return m1;
    }
    let (_, m0, f0) = r[k - 1];
    let a = (f0 - m0) / ((m1 - f1) + (f0 - m0));
    m0 + a * (m1 - m0)
}

pub fn brute_force_min_dcf(scores: &[f64], labels: &[bool], p: f64) -> f64 {
    brute_force_rates(scores, labels)
        .into_iter()
        .map(|(_, m, f)| m * p + f * (1.0 - p))
        .fold(f64::INFINITY, f64::min)
        / p.min(1.0 - p)
}

/// Random trial sets with heavy ties, for oracle comparison.
pub fn random_trials(rng: &mut ChaCha8Rng, max_len: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_len);
    let levels = rng.random_range(2..=n.max(2) * 2);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let base = rng.random_range(0..levels) as f64 / levels as f64;
            base + if l { 0.2 } else { 0.0 }
        })
        .collect();
    (scores, labels)
}

fn metric_oracle(_: &VerifyOptions) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (sc, lb) = random_trials(&mut rng, 200);
        let e = eer(&sc, &lb).map_err(s)?.0;
        let d = min_dcf(&sc, &lb, 0.05, 1.0, 1.0).map_err(s)?;
        worst = worst
            .max((e - brute_force_eer(&sc, &lb)).abs())
            .max((d - brute_force_min_dcf(&sc, &lb, 0.05)).abs());
    }
    ensure(worst < 1e-12, || format!("disagreement {worst:.3e}"))?;
    Ok(format!("100 instances, max disagreement {worst:.1e}"))
}

fn schedule_loss(_: &VerifyOptions) -> std::result::Result<String, String> {
    ensure(cosine_lr(0, 1000, 5e-4, 3e-6) == 5e-4, || "lr(0)".into())?;
    ensure(cosine_lr(1000, 1000, 5e-4, 3e-6) == 3e-6, || "lr(total)".into())?;
    let tl = target_logit(1.0, 0.3, 30.0);
    ensure((tl - 30.0 * 0.3f64.cos()).abs() < 1e-9, || format!("target logit {tl}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cos = uniform(&mut rng, &[5, 4], 1.0);
    let labels = [0, 3, 1, 1, 2];
    let mut ce = 0.0;
    for (row, &y) in cos.data().chunks(4).zip(&labels) {
        ce += row.iter().map(|v| v.exp()).sum::<f64>().ln() - row[y];
    }
    let d = (aam_loss_value(&cos, &labels, 0.0, 1.0) - ce / 5.0).abs();
    ensure(d < 1e-12, || format!("margin-free loss off by {d:.3e}"))?;
    Ok("lr endpoints exact; margin anchors hold".into())
}

fn gradients(_: &VerifyOptions) -> std::result::Result<String, String> {
    let reports = gradient_suite(0).map_err(s)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, r) in &reports {
        ok &= r.max_rel_err < GRAD_TOL;
        lines.push(format!("{name} {:.2e}", r.max_rel_err));
    }
    let text = lines.join(", ");
    ensure(ok, || text.clone())?;
    Ok(text)
}

fn tensor_err(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "forward",
            detail: other.to_string(),
        },
    }
}

/// Scalarizes `y` with fixed pseudo-random weights so every output element matters.
fn project(t: &Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = t.constant(uniform(&mut rng, &t.shape(y), 1.0));
    Ok(t.sum(t.mul(y, r)?))
}

fn check<F>(store: &mut ParamStore, seed: u64, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var>,
{
    let opts = GradCheckOptions {
        seed,
        eps,
        refinements: 2,
        ..GradCheckOptions::default()
    };
    Ok(finite_diff_check(store, |t, st| f(t, st).map_err(tensor_err), &opts)?)
}

/// Tiny instances of every block, each checked against central differences
/// with respect to its parameters and inputs.
pub fn gradient_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let micro = ModelConfig::micro();

    {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, &mut rng);
        let blk = ConvBlock::new(&mut b, "tcn", 4, 8, 2, true)?;
        let x = b.fan_in("input", vec![2, 4, 8], 1)?;
        let r = check(&mut store, seed, 1e-5, |t, st| {
            let s = Session::on_tape(t, st, Mode::Train);
            project(t, blk.forward(&s, s.p(x))?, seed)
        })?;
        out.push(("tcn-block", r));
    }
    {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, &mut rng);
        let blk = AfmsRes2Block::new(&mut b, "blk", (8, 8), (4, 3, 2), true)?;
        let x = b.fan_in("input", vec![2, 8, 6], 1)?;
        let r = check(&mut store, seed, 1e-5, |t, st| {
            let s = Session::on_tape(t, st, Mode::Train);
            project(t, blk.forward(&s, s.p(x))?, seed)
        })?;
        out.push(("afms-res2block", r));
    }
    {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, &mut rng);
        let blk = MraBlock::new(&mut b, "mra", &micro.backbone, 2, true)?;
        let x = b.fan_in("input", vec![2, 8, 8], 1)?;
        let r = check(&mut store, seed, 1e-5, |t, st| {
            let s = Session::on_tape(t, st, Mode::Train);
            project(t, blk.forward(&s, s.p(x))?, seed)
        })?;
        out.push(("mra-block", r));
    }
    {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, &mut rng);
        let gate = Gate::new(&mut b, "gate", 8, 4)?;
        let hs = [
            b.fan_in("h1", vec![2, 8, 5], 1)?,
            b.fan_in("h2", vec![2, 8, 5], 1)?,
            b.fan_in("h3", vec![2, 8, 5], 1)?,
        ];
        let r = check(&mut store, seed, 1e-5, |t, st| {
            let s = Session::on_tape(t, st, Mode::Train);
            project(t, gate.forward(&s, hs.map(|h| s.p(h)))?.o, seed)
        })?;
        out.push(("gate", r));
    }
    {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, &mut rng);
        let asp = Asp::new(&mut b, 6, 4, true)?;
        let x = b.fan_in("input", vec![2, 6, 7], 1)?;
        let r = check(&mut store, seed, 1e-5, |t, st| {
            let s = Session::on_tape(t, st, Mode::Eval);
            project(t, asp.forward(&s, s.p(x))?.pooled, seed)
        })?;
        out.push(("asp", r));
    }
    {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, &mut rng);
        let e = b.fan_in("embedding", vec![4, 6], 1)?;
        let w = b.fan_in("classes", vec![3, 6], 1)?;
        let labels = [0, 2, 1, 2];
        let r = check(&mut store, seed, 1e-5, |t, st| {
            let out = aam_softmax_loss(t, t.param(st, e), t.param(st, w), &labels, 0.3, 30.0)?;
            Ok(out.loss)
        })?;
        out.push(("aam-loss", r));
    }
    {
        let model = Model::assemble(&micro, seed)?;
        let mut store = model.store.clone();
        let wave = uniform(&mut rng, &[2, 1, 640], 0.5);
        // Batch statistics over two clips put kinks within 1e-5 of most points.
        let r = check(&mut store, seed, 1e-6, |t, st| {
            let s = Session::on_tape(t, st, Mode::Train);
            let x = t.constant(wave.clone());
            project(t, model.forward(&s, x)?, seed)
        })?;
        out.push(("micro-model", r));
    }
    Ok(out)
}
