use mrrawnet::audio::write_wav;
use mrrawnet::corpus::synth_corpus;
use mrrawnet::eval::{
    center_crop, cosine_score, evaluate, load_wavs, parse_trials, parse_trials_str, Duration, Evaluator, Trial,
    UtteranceStore, DEFAULT_DURATIONS,
};
use mrrawnet::{Error, Model, ModelConfig};
use std::path::Path;

fn micro() -> Model {
    Model::assemble(&ModelConfig::micro(), 7).unwrap()
}

fn small_set() -> (Vec<Trial>, UtteranceStore) {
    synth_corpus(3, 1, 21).unwrap().heldout_trials(2)
}

#[test]
fn crop_windows() {
    let x: Vec<f64> = (0..80_000).map(f64::from).collect();
    let c = center_crop(&x, 16_000, 160);
    assert!(!c.short);
    assert_eq!(c.samples.len(), 16_000);
    assert_eq!(c.samples[0], 32_000.0);
    assert_eq!(center_crop(&x, 80_000, 160).samples, x);
    let half = &x[..8_000];
    let c = center_crop(half, 16_000, 160);
    assert!(c.short);
    assert_eq!(c.samples, half);
}

#[test]
fn cache_matches_uncached_scores_bit_for_bit() {
    let model = micro();
    let (trials, store) = small_set();
    let durations = [Duration::Full, Duration::Seconds(1.0)];
    let mut ev = Evaluator::new(&model);
    let report = ev.evaluate(&trials, &store, &durations).unwrap();
    assert_eq!(ev.cached(), 2 * store.len());
    for (d, row) in durations.iter().zip(&report.rows) {
        let scores: Vec<f64> = trials
            .iter()
            .map(|t| {
                let a = Evaluator::embed_crop(&model, &store[&t.enroll], *d).unwrap().0;
                let b = Evaluator::embed_crop(&model, &store[&t.test], *d).unwrap().0;
                cosine_score(&a, &b).unwrap()
            })
            .collect();
        let labels: Vec<bool> = trials.iter().map(|t| t.target).collect();
        let (e, thr) = mrrawnet::eval::eer(&scores, &labels).unwrap();
        assert_eq!(row.eer, 100.0 * e);
        assert_eq!(row.threshold, thr);
    }
    let again = ev.evaluate(&trials, &store, &durations).unwrap();
    assert_eq!(again, report);
}

#[test]
fn duplicated_trials_and_row_count() {
    let model = micro();
    let (trials, store) = small_set();
    let once = evaluate(&model, &trials, &store, &DEFAULT_DURATIONS).unwrap();
    assert_eq!(once.rows.len(), 4);
    let labels: Vec<&str> = once.rows.iter().map(|r| r.duration.as_str()).collect();
    assert_eq!(labels, ["full", "5s", "2s", "1s"]);
    let doubled: Vec<Trial> = trials.iter().chain(&trials).cloned().collect();
    let twice = evaluate(&model, &doubled, &store, &DEFAULT_DURATIONS).unwrap();
    for (a, b) in once.rows.iter().zip(&twice.rows) {
        assert_eq!((a.eer, a.min_dcf, a.threshold), (b.eer, b.min_dcf, b.threshold));
        assert_eq!(b.trials, 2 * a.trials);
    }
    for r in &once.rows {
        assert!((0.0..=100.0).contains(&r.eer) && r.min_dcf >= 0.0);
    }
    assert_eq!(once.jsonl().lines().count(), 4);
    assert!(once.table().contains("full"));
}

#[test]
fn trial_file_format() {
    let p = Path::new("trials.txt");
    let t = parse_trials_str("1 a.wav b.wav\n\n0 a.wav c.wav\n", p).unwrap();
    assert_eq!(t.len(), 2);
    assert!(t[0].target && !t[1].target);
    assert_eq!((t[0].enroll.as_str(), t[0].test.as_str()), ("a.wav", "b.wav"));
    assert!(parse_trials_str("", p).unwrap().is_empty());
    match parse_trials_str("1 a b\n2 a b\n", p) {
        Err(Error::Trials { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(parse_trials_str("1 a\n", p).is_err());
}

#[test]
fn wav_round_trip_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let x: Vec<f64> = (0..3_200).map(|i| (i as f64 * 0.01).sin() * 0.5).collect();
    write_wav(dir.path().join("a.wav"), &x, 16_000).unwrap();
    write_wav(dir.path().join("b.wav"), &x, 16_000).unwrap();
    std::fs::write(dir.path().join("t.txt"), "1 a.wav b.wav\n0 a.wav missing.wav\n").unwrap();
    let trials = parse_trials(dir.path().join("t.txt")).unwrap();
    match load_wavs(&trials, dir.path(), 16_000) {
        Err(Error::UnknownKey(k)) => assert_eq!(k, "missing.wav"),
        other => panic!("{other:?}"),
    }
    let store = load_wavs(&trials[..1], dir.path(), 16_000).unwrap();
    let err = store["a.wav"].iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1.0 / 32_768.0, "quantization error {err}");
}
