use mrrawnet::corpus::Utterance;
use mrrawnet::train::{make_batch, BatchPolicy, NoAugment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn monte_carlo_mix_and_alignment() {
    let policy = BatchPolicy::new(16_000, 160);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut full = 0;
    for _ in 0..10_000 {
        let len = policy.draw_len(&mut rng);
        assert_eq!(len % 160, 0, "length {len}");
        assert!((16_000..=48_000).contains(&len));
        full += usize::from(len == 48_000);
    }
    let frac = full as f64 / 10_000.0;
    assert!((frac - 0.5).abs() <= 0.02, "full-length fraction {frac}");
}

#[test]
fn random_lengths_cover_the_range() {
    let policy = BatchPolicy::new(16_000, 160);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lens: Vec<usize> = (0..2_000).map(|_| policy.draw_len(&mut rng)).filter(|&l| l < 48_000).collect();
    let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
    assert!((mean - 32_000.0).abs() < 1_000.0, "mean {mean}");
    assert!(lens.iter().any(|&l| l < 20_000) && lens.iter().any(|&l| l > 44_000));
}

#[test]
fn batches_are_reproducible_and_rectangular() {
    let utts: Vec<Utterance> = (0..4)
        .map(|i| Utterance {
            key: format!("u{i}"),
            speaker: i,
            samples: (0..20_000 + 10_000 * i).map(|t| ((t * (i + 3)) % 17) as f64 / 17.0).collect(),
        })
        .collect();
    let refs: Vec<&Utterance> = utts.iter().collect();
    let policy = BatchPolicy::new(16_000, 160);
    let draw = |seed| make_batch(&refs, &policy, 0.97, &NoAugment, &mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = (draw(3), draw(3));
    assert_eq!(a.wave.data(), b.wave.data());
    assert_eq!(a.labels, vec![0, 1, 2, 3]);
    let len = a.wave.shape()[2];
    assert_eq!(a.wave.shape(), [4, 1, len]);
    for w in &a.wrapped {
        let u = utts.iter().find(|u| &u.key == w).unwrap();
        assert!(u.samples.len() < len);
    }
    let c = (0..20).map(draw).find(|b| b.wave.shape()[2] == 48_000).unwrap();
    assert_eq!(c.wrapped, vec!["u0", "u1", "u2"]);
}
