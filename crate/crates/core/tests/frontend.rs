use mrrawnet::frontend::fbank::ParamFbank;
use mrrawnet::frontend::Mrfe;
use mrrawnet::nn::{Builder, Session};
use mrrawnet::tensor::{Mode, ParamStore, Tensor};
use mrrawnet::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mrfe(cfg: &ModelConfig) -> (Mrfe, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fe = Mrfe::new(&mut Builder::new(&mut store, &mut rng), cfg).unwrap();
    (fe, store)
}

fn noise(t: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    mrrawnet::verify::uniform(&mut rng, &[1, 1, t], 0.5)
}

#[test]
fn extractor_lengths_follow_the_hop() {
    let mut cfg = ModelConfig::micro();
    cfg.mrfe.n = 4;
    let (fe, store) = mrfe(&cfg);
    let s = Session::new(&store, Mode::Eval);
    let x = s.tape.constant(noise(48_000));
    let first = fe.extractors[0].forward(&s, x, None, true).unwrap();
    assert_eq!(s.shape(first.y), vec![1, cfg.mrfe.f2, 300]);
    assert_eq!(s.shape(first.skip.unwrap())[2], 1200);
    let g4 = fe.extractors[3].geom;
    assert_eq!((g4.stride_pf, g4.stride_last), (160, 1));
    let o1 = fe.forward(&s, x).unwrap();
    assert_eq!(s.shape(o1), vec![1, 4 * cfg.mrfe.f2, 300]);

    let x1 = s.tape.constant(noise(16_000));
    assert_eq!(s.shape(fe.forward(&s, x1).unwrap())[2], 100);
}

#[test]
fn single_extractor_output_is_its_own_features() {
    let mut cfg = ModelConfig::micro();
    cfg.mrfe.n = 1;
    let (fe, store) = mrfe(&cfg);
    let s = Session::new(&store, Mode::Eval);
    let x = s.tape.constant(noise(3_200));
    let o1 = s.tape.value(fe.forward(&s, x).unwrap());
    let y1 = s.tape.value(fe.extractors[0].forward(&s, x, None, false).unwrap().y);
    assert_eq!(o1.data(), y1.data());
}

#[test]
fn zero_waveform_gives_zero_features_without_biases() {
    let mut cfg = ModelConfig::micro();
    cfg.conv_bias = false;
    let (fe, store) = mrfe(&cfg);
    for mode in [Mode::Train, Mode::Eval] {
        let s = Session::new(&store, mode);
        let x = s.tape.constant(Tensor::zeros([2, 1, 3_200]));
        let y = s.tape.value(fe.forward(&s, x).unwrap());
        assert!(y.data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn pure_tone_excites_its_own_band() {
    let sr = 16_000u32;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fb = ParamFbank::new(&mut Builder::new(&mut store, &mut rng), "fb", 8, (401, 1), sr, false).unwrap();
    let lo = store.param(fb.lo).value.data().to_vec();
    let bw = store.param(fb.bw).value.data().to_vec();
    for k in 1..8 {
        let f = (lo[k] + bw[k] / 2.0) * sr as f64;
        let tone = Tensor::from_fn([1, 1, 4_000], |i| (2.0 * std::f64::consts::PI * f * i as f64 / sr as f64).sin());
        let s = Session::new(&store, Mode::Eval);
        let x = s.tape.constant(tone);
        let y = s.tape.value(fb.forward(&s, x).unwrap());
        let energy: Vec<f64> = y.data().chunks(4_000).map(|c| c[500..3_500].iter().map(|v| v * v).sum()).collect();
        let best = (0..8).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        assert_eq!(best, k, "tone {f:.0} Hz, energies {energy:?}");
        for (j, e) in energy.iter().enumerate() {
            if j != k {
                assert!(energy[k] > 2.0 * e, "band {j} too close: {energy:?}");
            }
        }
    }
}
