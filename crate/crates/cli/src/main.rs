mod run_config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mrrawnet::audio::write_wav;
use mrrawnet::corpus::SynthCorpus;
use mrrawnet::eval::{evaluate, load_wavs, parse_durations, parse_trials, Duration, ScoreReport, DEFAULT_DURATIONS};
use mrrawnet::tensor::Tensor;
use mrrawnet::train::{classification_accuracy, train_loop, NoAugment};
use mrrawnet::verify::{self, VerifyOptions};
use mrrawnet::{checkpoint, Model, ModelConfig};

use run_config::RunConfig;

#[derive(Parser)]
#[command(name = "mrrawnet", version, about = "Multi-resolution raw-waveform speaker embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the corpus, train, and write checkpoints plus a held-out trial set.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trial list at several crop durations.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Lines of `<0|1> <enroll.wav> <test.wav>`, paths relative to this file.
        #[arg(long)]
        trials: PathBuf,
        /// Comma list such as `full,5,2,1`.
        #[arg(long)]
        durations: Option<String>,
        /// Report directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Fast)]
        level: Level,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Parameter counts, config and feature shapes of a model.
    Info {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        checkpoint: Option<PathBuf>,
        /// Preset name or model TOML, for inspecting an untrained model.
        #[arg(long)]
        config: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Fast,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    GateSoftmax,
}

/// Failures caused by what the user asked for rather than by the run itself.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(r: anyhow::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| Usage(e).into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MRRW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().ok();
    }
    let r = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Eval {
            checkpoint,
            trials,
            durations,
            out,
        } => eval(&checkpoint, &trials, durations.as_deref(), out),
        Command::Verify { level, inject_fault } => verify(level, inject_fault),
        Command::Info { checkpoint, config } => info(checkpoint.as_deref(), config.as_deref()),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let resolved = usage(RunConfig::load(config))?;
    let mut run = resolved.run;
    if let Some(s) = seed {
        run.seed = s;
    }
    if let Some(o) = out {
        run.out = o;
    }
    let corpus = SynthCorpus::generate(&run.corpus)?;
    let mut model = Model::assemble(&resolved.model, run.seed)?;
    std::fs::create_dir_all(&run.out).with_context(|| format!("cannot create {}", run.out.display()))?;
    std::fs::write(run.out.join("run.toml"), toml::to_string(&run)?)?;

    let started = Instant::now();
    let outcome = train_loop(&mut model, &corpus, &run.train, run.seed, Some(&run.out), &NoAugment)?;
    let full = 3 * model.config.sample_rate as usize;
    let acc = classification_accuracy(&model, &outcome.head, &corpus.utterances, full)?;
    let heldout = run.out.join("heldout");
    write_trial_set(&corpus, run.eval.heldout_per_speaker, &heldout)?;
    let report = score(&model, &heldout.join("trials.txt"), &resolved.durations, &run.out)?;

    let last = outcome.log.last().expect("at least one step");
    println!("steps          {}", outcome.log.len());
    println!("final loss     {:.4}", last.loss);
    println!("train accuracy {:.4}", acc);
    println!("checkpoint     {}", run.out.join("model.mrrw").display());
    println!("trials         {}", heldout.join("trials.txt").display());
    println!();
    print!("{}", report.table());
    eprintln!("trained in {:.1}s", started.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}

fn write_trial_set(corpus: &SynthCorpus, per_speaker: usize, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let (trials, store) = corpus.heldout_trials(per_speaker);
    let mut keys: Vec<&String> = store.keys().collect();
    keys.sort();
    for k in keys {
        write_wav(dir.join(format!("{k}.wav")), &store[k], corpus.spec.sample_rate)?;
    }
    let mut text = String::new();
    for t in &trials {
        writeln!(text, "{} {}.wav {}.wav", u8::from(t.target), t.enroll, t.test)?;
    }
    std::fs::write(dir.join("trials.txt"), text)?;
    Ok(())
}

fn eval(ckpt: &Path, trials_path: &Path, durations: Option<&str>, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let durations = match durations {
        Some(d) => usage(parse_durations(d).map_err(Into::into))?,
        None => DEFAULT_DURATIONS.to_vec(),
    };
    let model = checkpoint::load(ckpt)?;
    let out = out.unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).to_path_buf());
    let report = score(&model, trials_path, &durations, &out)?;
    print!("{}", report.table());
    Ok(ExitCode::SUCCESS)
}

/// Evaluates a trial file and writes `report.txt` and `report.jsonl` into `out`.
fn score(model: &Model, trials_path: &Path, durations: &[Duration], out: &Path) -> anyhow::Result<ScoreReport> {
    let trials = parse_trials(trials_path)?;
    let base = trials_path.parent().unwrap_or(Path::new("."));
    let store = load_wavs(&trials, base, model.config.sample_rate)?;
    let report = evaluate(model, &trials, &store, durations)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    std::fs::write(out.join("report.txt"), report.table())?;
    std::fs::write(out.join("report.jsonl"), report.jsonl())?;
    Ok(report)
}

fn verify(level: Level, fault: Option<Fault>) -> anyhow::Result<ExitCode> {
    let opts = VerifyOptions {
        full: matches!(level, Level::Full),
        corrupt_gate: matches!(fault, Some(Fault::GateSoftmax)),
    };
    let results = verify::run(&opts);
    let mut failed = Vec::new();
    for r in &results {
        println!("{} {:<20} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        eprintln!("  {} took {:.2}s", r.name, r.seconds);
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("all {} suites passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn info(ckpt: Option<&Path>, config: Option<&str>) -> anyhow::Result<ExitCode> {
    let model = match (ckpt, config) {
        (Some(p), _) => checkpoint::load(p)?,
        (None, Some(c)) => {
            let cfg = match ModelConfig::preset(c) {
                Some(cfg) => cfg,
                None => {
                    let text = usage(std::fs::read_to_string(c).with_context(|| format!("cannot read model config {c}")))?;
                    usage(ModelConfig::from_toml(&text).map_err(Into::into))?
                }
            };
            Model::assemble(&cfg, 0)?
        }
        (None, None) => unreachable!("clap requires one of --checkpoint/--config"),
    };
    let count = model.count_params();
    println!("parameters");
    for (name, n) in &count.modules {
        println!("  {name:<10} {n:>12}");
    }
    println!("  {:<10} {:>12}", "total", count.total);
    println!();
    println!("config");
    for line in model.config.to_toml().lines() {
        println!("  {line}");
    }
    println!();
    let t = 3 * model.config.sample_rate as usize;
    println!("trace for a 3 s probe [1, 1, {t}]");
    for (name, shape) in model.trace(&Tensor::zeros([1, 1, t]))? {
        println!("  {name:<10} {shape:?}");
    }
    Ok(ExitCode::SUCCESS)
}
