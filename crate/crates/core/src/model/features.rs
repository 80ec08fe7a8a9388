use std::collections::BTreeMap;

/// Sparse, L2-normalized bag of hashed unigrams and bigrams.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub dim: usize,
    /// Strictly increasing, each `< dim`.
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn empty(dim: usize) -> Self {
        FeatureVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Featurizes `text` into a `dim`-dimensional hashed space.
///
/// `dim` must be a power of two no smaller than 2^10.
pub fn vectorize(text: &str, dim: usize) -> FeatureVector {
    assert!(
        dim.is_power_of_two() && dim >= 1 << 10,
        "feature dimension must be a power of two >= 1024, got {dim}"
    );
    let tokens = tokenize(text);
    let mask = dim as u64 - 1;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut bump = |s: &str| {
        *counts.entry((fnv1a_64(s.as_bytes()) & mask) as u32).or_default() += 1.0;
    };
    for t in &tokens {
        bump(t);
    }
    for pair in tokens.windows(2) {
        bump(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let (indices, values) = counts.into_iter().map(|(i, c)| (i, c / norm)).unzip();
    FeatureVector { dim, indices, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: usize = 1 << 16;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_text_gives_empty_vector() {
        let v = vectorize("", D);
        assert!(v.is_empty());
        assert!(vectorize("  ...  ", D).is_empty());
    }

    #[test]
    fn repeated_token() {
        // "a" -> 0xaf63dc4c8601ec8c, low 16 bits 0xec8c.
        // "a a" -> computed below with a separate byte loop.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in b"a a" {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let uni = 0xec8cu32;
        let bi = (h % D as u64) as u32;
        assert_ne!(uni, bi);

        let v = vectorize("a a", D);
        let norm = 5f64.sqrt();
        let mut expected = vec![(uni, 2.0 / norm), (bi, 1.0 / norm)];
        expected.sort_by_key(|e| e.0);
        let got: Vec<(u32, f64)> = v.iter().collect();
        assert_eq!(got.len(), 2);
        for ((gi, gv), (ei, ev)) in got.iter().zip(&expected) {
            assert_eq!(gi, ei);
            assert!((gv - ev).abs() < 1e-15);
        }
    }

    #[test]
    fn case_and_punctuation_are_ignored() {
        assert_eq!(vectorize("Make, a CAKE!", D), vectorize("make a cake", D));
    }

    #[test]
    fn deterministic() {
        let t = "how do I bake sourdough bread at home";
        assert_eq!(vectorize(t, D), vectorize(t, D));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sorted_indices_and_unit_norm(text in "[a-zA-Z ,.!?]{0,80}") {
                let v = vectorize(&text, 1 << 12);
                prop_assert!(v.indices.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(v.indices.iter().all(|&i| (i as usize) < v.dim));
                let norm: f64 = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
                if v.is_empty() {
                    prop_assert_eq!(norm, 0.0);
                } else {
                    prop_assert!((norm - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
