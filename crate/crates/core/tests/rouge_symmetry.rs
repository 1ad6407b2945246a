use qalign_core::decision::rouge1_f1;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let words = ["the", "cat", "sat", "on", "a", "mat", "The", "dog", "ran", "mat."];
    let n = rng.gen_range(0..12);
    (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
}

#[test]
fn rouge_is_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let (a, b) = (random_text(&mut rng), random_text(&mut rng));
        let (ab, ba) = (rouge1_f1(&a, &b), rouge1_f1(&b, &a));
        assert!((ab - ba).abs() < 1e-12, "{a:?} {b:?}");
        assert!((0.0..=1.0).contains(&ab));
        assert!((rouge1_f1(&a, &a) - 1.0).abs() < 1e-12);
    }
}
