//! Acceptance suite: one line per criterion, then a non-zero exit if any failed.
//!
//! Runs without the libtest harness so the report is printed under plain
//! `cargo test`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use mrrawnet::corpus::synth_corpus;
use mrrawnet::eval::{eer, evaluate, min_dcf, ScoreReport, DEFAULT_DURATIONS};
use mrrawnet::frontend::geometry::derive_geometry;
use mrrawnet::tensor::ops::basic::{softmax, sum_axis};
use mrrawnet::tensor::ops::norm::global_layer_norm;
use mrrawnet::tensor::{Mode, Tensor};
use mrrawnet::train::aam::aam_loss_value;
use mrrawnet::train::{classification_accuracy, cosine_lr, make_batch, target_logit, train_loop, BatchPolicy, NoAugment, TrainConfig};
use mrrawnet::verify::{self, VerifyOptions, GRAD_TOL};
use mrrawnet::{checkpoint, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Overfit schedule shared by criteria 7, 8 and 10.
const OVERFIT_STEPS: usize = 200;
const OVERFIT_LR: f64 = 1e-3;
const OVERFIT_BATCH: usize = 16;
const SPEAKERS: usize = 8;
const UTTS: usize = 12;
const HELDOUT: usize = 4;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

const MIN_TRAIN_ACC: f64 = 0.95;
const MAX_EER_FULL: f64 = 20.0;
const NORM_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-12;
const MIX_TOL: f64 = 0.02;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn criterion(id: usize, name: &'static str, budget_s: f64, f: impl FnOnce() -> Check) -> Line {
    let t = Instant::now();
    let r = f();
    let secs = t.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if secs > budget_s {
        passed = false;
        detail = format!("{detail}; over budget");
    }
    let line = Line {
        id,
        name,
        passed,
        detail: format!("{detail} [{secs:.1}s / {budget_s:.0}s]"),
    };
    println!("{} {:>2} {:<22} {}", if line.passed { "PASS" } else { "FAIL" }, line.id, line.name, line.detail);
    line
}

// ---- 1 -------------------------------------------------------------------

fn geometry() -> Check {
    let g = derive_geometry(50, 16, 4).map_err(e)?;
    ensure(g.hop == 160, || format!("S = {}", g.hop))?;
    for t in [16_000, 32_000, 48_000, 80_000] {
        for ex in &g.extractors {
            // Filterbank frames after the stride, then the last conv's stride.
            let frames = t / ex.stride_pf / ex.stride_last;
            ensure(frames == t / 160, || format!("extractor {} gives {frames} frames for T={t}", ex.index))?;
        }
    }
    ensure(g.frames(48_000) == Some(300), || format!("{:?} frames for 48000", g.frames(48_000)))?;
    let m = Model::assemble(&ModelConfig::micro(), 0).map_err(e)?;
    let trace = m.trace(&Tensor::zeros([1, 1, 48_000])).map_err(e)?;
    let (_, o1) = &trace[0];
    ensure(o1[2] == 300, || format!("micro o1 {o1:?}"))?;
    Ok("S=160, 300 frames for 48000 samples".into())
}

// ---- 2 -------------------------------------------------------------------

fn param_count() -> Check {
    let ours = Model::assemble(&ModelConfig::mr_rawnet(), 0).map_err(e)?.count_params().total;
    let base = Model::assemble(&ModelConfig::rawnet3_baseline(), 0).map_err(e)?.count_params().total;
    let (lo, hi) = (15.5e6 * 0.8, 15.5e6 * 1.2);
    ensure((lo..=hi).contains(&(ours as f64)), || format!("{ours} outside [{lo}, {hi}]"))?;
    ensure(ours < base, || format!("{ours} not below baseline {base}"))?;
    Ok(format!("{ours} < baseline {base}"))
}

// ---- 3 -------------------------------------------------------------------

fn gradients() -> Check {
    let want = ["tcn-block", "afms-res2block", "mra-block", "gate", "asp", "aam-loss", "micro-model"];
    let rep = verify::gradient_suite(0).map_err(e)?;
    let names: Vec<_> = rep.iter().map(|(n, _)| *n).collect();
    ensure(names == want, || format!("suite covers {names:?}"))?;
    let mut worst = 0.0f64;
    for (name, r) in &rep {
        ensure(r.max_rel_err < GRAD_TOL, || format!("{name}: {:.3e}", r.max_rel_err))?;
        worst = worst.max(r.max_rel_err);
    }
    Ok(format!("7 checks, max rel err {worst:.2e} < {GRAD_TOL:.0e}"))
}

// ---- 4 -------------------------------------------------------------------

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

fn normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut gate_err = 0.0f64;
    for cfg in [ModelConfig::micro(), ModelConfig::micro_wide()] {
        let m = Model::assemble(&cfg, 41).map_err(e)?;
        let c = cfg.backbone.channels;
        for blk in m.mra_blocks() {
            for mode in [Mode::Train, Mode::Eval] {
                let s = m.session(mode);
                let x = s.tape.constant(uniform(&mut rng, &[2, c, 12], 3.0));
                let a = s.tape.value(blk.forward_gated(&s, x).map_err(e)?.alpha);
                let n = a.numel() / 3;
                for j in 0..n {
                    let sum = a.data()[j] + a.data()[n + j] + a.data()[2 * n + j];
                    gate_err = gate_err.max((sum - 1.0).abs());
                }
            }
        }
    }
    ensure(gate_err <= NORM_TOL, || format!("gate weights sum off by {gate_err:.2e}"))?;

    let mut asp_err = 0.0f64;
    let m = Model::assemble(&ModelConfig::micro(), 42).map_err(e)?;
    let p = m.config.backbone.pool_channels;
    for l in [1, 7, 100] {
        let s = m.session(Mode::Eval);
        let x = s.tape.constant(uniform(&mut rng, &[2, p, l], 5.0));
        let w = s.tape.value(m.asp().forward(&s, x).map_err(e)?.weights);
        for row in w.data().chunks(l) {
            asp_err = asp_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(asp_err <= NORM_TOL, || format!("attention sums off by {asp_err:.2e}"))?;

    // Softmax: rows are distributions and a constant shift changes nothing.
    let mut sm_err = 0.0f64;
    for _ in 0..20 {
        let x = uniform(&mut rng, &[4, 3, 6], 30.0);
        for axis in 0..3 {
            let y = softmax(&x, axis).map_err(e)?;
            let z = softmax(&x.map(|v| v - 11.0), axis).map_err(e)?;
            sm_err = sm_err.max(y.max_abs_diff(&z));
            for v in sum_axis(&y, axis).map_err(e)?.data() {
                sm_err = sm_err.max((v - 1.0).abs());
            }
            ensure(y.data().iter().all(|v| *v >= 0.0), || "negative probability".into())?;
        }
    }
    ensure(sm_err <= NORM_TOL, || format!("softmax deviation {sm_err:.2e}"))?;

    // gLN with unit gain: zero mean, variance v/(v+eps) over (C,L).
    let mut gln_err = 0.0f64;
    for _ in 0..20 {
        let x = uniform(&mut rng, &[3, 5, 8], 4.0);
        let y = global_layer_norm(&x, &Tensor::ones([5]), &Tensor::zeros([5]), 1e-8).map_err(e)?;
        for (xr, yr) in x.data().chunks(40).zip(y.data().chunks(40)) {
            let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
            let var = |r: &[f64]| {
                let m = mean(r);
                r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64
            };
            let vx = var(xr);
            gln_err = gln_err.max(mean(yr).abs()).max((var(yr) - vx / (vx + 1e-8)).abs());
        }
    }
    ensure(gln_err < 1e-10, || format!("gLN deviation {gln_err:.2e}"))?;
    Ok(format!(
        "gate {gate_err:.1e}, ASP {asp_err:.1e}, softmax {sm_err:.1e}, gLN {gln_err:.1e}"
    ))
}

// ---- 5 -------------------------------------------------------------------

/// (P_miss, P_fa) at every distinct score threshold and at +inf, accepting `score >= t`.
fn enumerate_thresholds(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let nt = labels.iter().filter(|l| **l).count() as f64;
    let nn = labels.len() as f64 - nt;
    let mut ts: Vec<f64> = scores.to_vec();
    ts.push(f64::INFINITY);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let miss = scores.iter().zip(labels).filter(|(s, l)| **l && **s < t).count() as f64;
            let fa = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count() as f64;
            (miss / nt, fa / nn)
        })
        .collect()
}

fn oracle_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let pts = enumerate_thresholds(scores, labels);
    let k = pts.iter().position(|(m, f)| m >= f).expect("+inf point has miss 1");
    let (m1, f1) = pts[k];
    if m1 == f1 || k == 0 {
        return m1;
    }
    let (m0, f0) = pts[k - 1];
    let a = (f0 - m0) / ((f0 - m0) + (m1 - f1));
    m0 + a * (m1 - m0)
}

fn oracle_dcf(scores: &[f64], labels: &[bool], p: f64) -> f64 {
    let norm = p.min(1.0 - p);
    enumerate_thresholds(scores, labels)
        .into_iter()
        .map(|(m, f)| (p * m + (1.0 - p) * f) / norm)
        .fold(f64::INFINITY, f64::min)
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (mut worst_eer, mut worst_dcf) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..60);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&t| rng.random_range(0..levels) as f64 * 0.05 + if t { 0.6 } else { 0.0 })
            .collect();
        let (got, _) = eer(&scores, &labels).map_err(e)?;
        worst_eer = worst_eer.max((got - oracle_eer(&scores, &labels)).abs());
        let d = min_dcf(&scores, &labels, 0.05, 1.0, 1.0).map_err(e)?;
        worst_dcf = worst_dcf.max((d - oracle_dcf(&scores, &labels, 0.05)).abs());
    }
    ensure(worst_eer <= METRIC_TOL && worst_dcf <= METRIC_TOL, || {
        format!("EER off by {worst_eer:.2e}, minDCF off by {worst_dcf:.2e}")
    })?;

    let labels = [true, true, true, false, false, false];
    let perfect = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1];
    let (pe, _) = eer(&perfect, &labels).map_err(e)?;
    let pd = min_dcf(&perfect, &labels, 0.05, 1.0, 1.0).map_err(e)?;
    ensure(pe == 0.0 && pd == 0.0, || format!("perfect separation: EER {pe}, minDCF {pd}"))?;
    let flat = [0.4; 6];
    let fd = min_dcf(&flat, &labels, 0.05, 1.0, 1.0).map_err(e)?;
    ensure(fd == 1.0, || format!("all-equal scores: minDCF {fd}"))?;
    Ok(format!("100 instances, max diff EER {worst_eer:.1e} minDCF {worst_dcf:.1e}; hand cases exact"))
}

// ---- 6 -------------------------------------------------------------------

fn schedule_loss() -> Check {
    let total = 1000;
    let (first, last) = (cosine_lr(0, total, 5e-4, 3e-6), cosine_lr(total, total, 5e-4, 3e-6));
    ensure(first == 5e-4 && last == 3e-6, || format!("endpoints {first:e}, {last:e}"))?;
    let tl = target_logit(1.0, 0.3, 30.0);
    let want = 30.0 * 0.3f64.cos();
    ensure((tl - want).abs() < 1e-9, || format!("target logit {tl} vs {want}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (b, k) = (rng.random_range(1..6), rng.random_range(2..9));
        let cos = uniform(&mut rng, &[b, k], 1.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let mut ce = 0.0;
        for (row, &y) in cos.data().chunks(k).zip(&labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            ce += z.ln() - row[y];
        }
        ce /= b as f64;
        worst = worst.max((aam_loss_value(&cos, &labels, 0.0, 1.0) - ce).abs());
    }
    ensure(worst < 1e-12, || format!("m=0,s=1 differs from cross-entropy by {worst:.2e}"))?;
    Ok(format!("lr 5e-4 -> 3e-6 exact; target logit diff {:.1e}; CE diff {worst:.1e}", (tl - want).abs()))
}

// ---- 7, 8, 10 --------------------------------------------------------------

struct Run {
    acc: f64,
    report: ScoreReport,
    /// Every file written by training, by name.
    files: BTreeMap<String, Vec<u8>>,
    seconds: f64,
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        batch_size: OVERFIT_BATCH,
        epochs: 1,
        steps_per_epoch: Some(OVERFIT_STEPS),
        lr_max: OVERFIT_LR,
        ..TrainConfig::default()
    }
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("run directory")
        .map(|f| {
            let f = f.expect("dir entry");
            (f.file_name().to_string_lossy().into_owned(), std::fs::read(f.path()).expect("read output"))
        })
        .collect()
}

fn overfit(seed: u64) -> Result<Run, String> {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(e)?;
    let corpus = synth_corpus(SPEAKERS, UTTS, 1000 + seed).map_err(e)?;
    let mut model = Model::assemble(&ModelConfig::micro_wide(), seed).map_err(e)?;
    let out = train_loop(&mut model, &corpus, &overfit_config(), seed, Some(dir.path()), &NoAugment).map_err(e)?;
    let crop = 3 * model.config.sample_rate as usize;
    let acc = classification_accuracy(&model, &out.head, &corpus.utterances, crop).map_err(e)?;
    let reloaded = checkpoint::load(dir.path().join("model.mrrw")).map_err(e)?;
    let (trials, store) = corpus.heldout_trials(HELDOUT);
    let report = evaluate(&reloaded, &trials, &store, &DEFAULT_DURATIONS).map_err(e)?;
    Ok(Run {
        acc,
        report,
        files: read_dir(dir.path()),
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// One lazily trained run per seed; `RERUN` repeats seed 0.
static RUNS: [OnceLock<Result<Run, String>>; 5] = [const { OnceLock::new() }; 5];
static RERUN: OnceLock<Result<Run, String>> = OnceLock::new();

fn run(i: usize) -> Result<&'static Run, String> {
    RUNS[i].get_or_init(|| overfit(SEEDS[i])).as_ref().map_err(Clone::clone)
}

fn rerun() -> Result<&'static Run, String> {
    RERUN.get_or_init(|| overfit(SEEDS[0])).as_ref().map_err(Clone::clone)
}

fn eer_of(r: &Run, label: &str) -> Result<f64, String> {
    r.report.row(label).map(|row| row.eer).ok_or_else(|| format!("no {label} row"))
}

fn overfit_oracle() -> Check {
    let first = run(0)?;
    let full = eer_of(first, "full")?;
    ensure(first.acc >= MIN_TRAIN_ACC, || {
        format!("training accuracy {:.3} < {MIN_TRAIN_ACC}", first.acc)
    })?;
    ensure(full < MAX_EER_FULL, || format!("EER(full) {full:.2}% >= {MAX_EER_FULL}%"))?;
    let again = rerun()?;
    ensure(again.files == first.files && again.report == first.report, || "seed rerun differs".into())?;
    Ok(format!(
        "{OVERFIT_STEPS} steps: training accuracy {:.3}, held-out EER(full) {full:.2}%, {:.0}s per run; rerun identical",
        first.acc, first.seconds
    ))
}

fn duration_robustness() -> Check {
    for cfg in [ModelConfig::micro_wide(), ModelConfig::mr_rawnet()] {
        let m = Model::assemble(&cfg, 80).map_err(e)?;
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for secs in [1, 2, 3, 5] {
            let wave = uniform(&mut rng, &[1, 1, 16_000 * secs], 0.1);
            let emb = m.embed(&wave).map_err(e)?;
            ensure(emb.shape() == [1, cfg.head.embed_dim], || format!("{secs}s embedding {:?}", emb.shape()))?;
        }
    }
    let all = (0..SEEDS.len()).map(run).collect::<Result<Vec<_>, _>>()?;
    let n = all.len() as f64;
    let (mut full, mut one) = (0.0, 0.0);
    let mut per_seed = Vec::new();
    for r in &all {
        let (f, o) = (eer_of(r, "full")?, eer_of(r, "1s")?);
        per_seed.push(format!("{f:.1}/{o:.1}"));
        full += f / n;
        one += o / n;
    }
    ensure(one >= full, || format!("mean EER(1s) {one:.2}% < mean EER(full) {full:.2}%"))?;
    Ok(format!(
        "dimension fixed for 1/2/3/5 s; mean EER full {full:.2}% <= 1s {one:.2}% (per seed full/1s: {})",
        per_seed.join(" ")
    ))
}

// ---- 9 -------------------------------------------------------------------

fn batch_policy() -> Check {
    let policy = BatchPolicy::new(16_000, 160);
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let corpus = synth_corpus(2, 2, 91).map_err(e)?;
    let utts: Vec<_> = corpus.utterances.iter().collect();
    let draws = 10_000;
    let mut full = 0;
    for i in 0..draws {
        // Every hundredth draw goes through batch assembly as well.
        let len = if i % 100 == 0 {
            make_batch(&utts, &policy, 0.97, &NoAugment, &mut rng).len()
        } else {
            policy.draw_len(&mut rng)
        };
        ensure(len % 160 == 0, || format!("length {len} not a multiple of 160"))?;
        ensure((16_000..=48_000).contains(&len), || format!("length {len} out of range"))?;
        if len == 48_000 {
            full += 1;
        }
    }
    let share = full as f64 / draws as f64;
    ensure((share - 0.5).abs() <= MIX_TOL, || format!("full-length share {share:.4}"))?;
    Ok(format!("full-length share {:.2}% of {draws}; all lengths multiples of 160", share * 100.0))
}

// ---- 10 ------------------------------------------------------------------

fn determinism() -> Check {
    let (first, again) = (run(0)?, rerun()?);
    ensure(again.files == first.files, || {
        let diff: Vec<_> = again
            .files
            .iter()
            .filter(|(k, v)| first.files.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        format!("training outputs differ: {diff:?}")
    })?;
    let model = checkpoint::from_bytes(&first.files["model.mrrw"]).map_err(e)?;
    let corpus = synth_corpus(SPEAKERS, UTTS, 1000 + SEEDS[0]).map_err(e)?;
    let (trials, store) = corpus.heldout_trials(HELDOUT);
    let report = evaluate(&model, &trials, &store, &DEFAULT_DURATIONS).map_err(e)?;
    ensure(report.jsonl() == first.report.jsonl() && again.report.jsonl() == first.report.jsonl(), || {
        "evaluation report differs".into()
    })?;

    let opts = VerifyOptions {
        full: true,
        ..VerifyOptions::default()
    };
    let digest = |v: Vec<verify::SuiteResult>| -> Vec<(String, bool, String)> {
        v.into_iter().map(|r| (r.name.to_string(), r.passed, r.detail)).collect()
    };
    let (a, b) = (digest(verify::run(&opts)), digest(verify::run(&opts)));
    ensure(a == b, || "verify output differs".into())?;
    ensure(a.iter().all(|r| r.1), || format!("verify failed: {a:?}"))?;
    Ok(format!(
        "{} training files, report and {} verify suites identical on rerun",
        again.files.len(),
        a.len()
    ))
}

fn main() {
    let lines = [
        criterion(1, "geometry", 1.0, geometry),
        criterion(2, "parameter-count", 5.0, param_count),
        criterion(3, "gradient-suite", 300.0, gradients),
        criterion(4, "normalization", 30.0, normalization),
        criterion(5, "metric-oracle", 30.0, metric_oracle),
        criterion(6, "schedule-loss", 1.0, schedule_loss),
        criterion(7, "overfit-oracle", 900.0, overfit_oracle),
        criterion(8, "duration-robustness", 1200.0, duration_robustness),
        criterion(9, "batch-policy", 30.0, batch_policy),
        criterion(10, "determinism", 300.0, determinism),
    ];
    let failed: Vec<_> = lines.iter().filter(|l| !l.passed).map(|l| l.id.to_string()).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", lines.len());
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
