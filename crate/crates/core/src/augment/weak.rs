use rand::Rng;

/// Token dropout over whitespace tokens. At least one token always survives;
/// `drop_probability == 0` returns the input untouched.
///
/// Consumes exactly one uniform draw per token, plus one more when every
/// token was dropped.
pub fn weak_augment<R: Rng + ?Sized>(text: &str, drop_probability: f64, rng: &mut R) -> String {
    assert!(
        (0.0..0.5).contains(&drop_probability),
        "drop probability must lie in [0, 0.5), got {drop_probability}"
    );
    if drop_probability == 0.0 {
        return text.to_string();
    }
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return text.to_string();
    }
    let kept: Vec<&str> = tokens
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= drop_probability)
        .collect();
    if kept.is_empty() {
        return tokens[rng.random_range(0..tokens.len())].to_string();
    }
    kept.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let text = "  keep   exact\tspacing ";
        assert_eq!(weak_augment(text, 0.0, &mut rng), text);
    }

    #[test]
    fn dropout_replays_the_rng() {
        let text = "a b c d e f g h i j";
        let out = weak_augment(text, 0.1, &mut ChaCha8Rng::seed_from_u64(2024));

        let mut replay = ChaCha8Rng::seed_from_u64(2024);
        let expected: Vec<&str> = text.split(' ').filter(|_| replay.random::<f64>() >= 0.1).collect();
        assert_eq!(out, expected.join(" "));
        assert_eq!(out, weak_augment(text, 0.1, &mut ChaCha8Rng::seed_from_u64(2024)));

        // mean kept count over many seeds is close to 9
        let total: usize = (0..2000)
            .map(|s| {
                weak_augment(text, 0.1, &mut ChaCha8Rng::seed_from_u64(s))
                    .split(' ')
                    .count()
            })
            .sum();
        let mean = total as f64 / 2000.0;
        assert!((mean - 9.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn single_token_is_always_kept() {
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(weak_augment("word", 0.4, &mut rng), "word");
        }
    }

    #[test]
    #[should_panic]
    fn rejects_large_probability() {
        weak_augment("a b", 0.5, &mut ChaCha8Rng::seed_from_u64(0));
    }
}
