//! Tokenization and signed feature hashing.
//!
//! Tokens are lowercased runs of alphanumeric characters at least two
//! characters long. Each token is hashed twice with seeded FNV-1a: once to
//! pick a bucket, once to pick a sign. Signed counts accumulate per bucket
//! and the result is L2 normalized.

use num_traits::Float;

use crate::corpus::Article;
use crate::trainer::TrainError;

/// Bodies are cut to this many characters before tokenization (and before
/// prompt construction).
pub const BODY_CHAR_LIMIT: usize = 50_000;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seed for the bucket hash (plain FNV-1a).
pub const BUCKET_HASH_SEED: u64 = 0;
/// Seed for the sign hash.
pub const SIGN_HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercase, split on non-alphanumeric characters, drop tokens shorter
/// than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}

/// Prefix of `text` holding at most `limit` characters, on a char boundary.
pub fn truncate_chars(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((byte_idx, _)) => &text[..byte_idx],
        None => text,
    }
}

/// Sparse L2-normalized feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    dim: usize,
    entries: Vec<(u32, T)>,
}

impl<T: Float> FeatureVector<T> {
    /// Build from raw entries, validating order, range, and finiteness.
    pub fn new(dim: usize, entries: Vec<(u32, T)>) -> Result<Self, TrainError> {
        if dim < 2 {
            return Err(TrainError::InvalidInput(
                "feature dim must be >= 2".to_string(),
            ));
        }
        let mut prev: Option<u32> = None;
        for &(idx, value) in &entries {
            if idx as usize >= dim {
                return Err(TrainError::InvalidInput(format!(
                    "feature index {idx} out of range for dim {dim}"
                )));
            }
            if let Some(p) = prev {
                if idx <= p {
                    return Err(TrainError::InvalidInput(
                        "feature indices must be strictly increasing".to_string(),
                    ));
                }
            }
            if !value.is_finite() {
                return Err(TrainError::InvalidInput(
                    "feature values must be finite".to_string(),
                ));
            }
            prev = Some(idx);
        }
        Ok(FeatureVector { dim, entries })
    }

    pub fn empty(dim: usize) -> Self {
        FeatureVector {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, T)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn l2_norm(&self) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |s, &(_, v)| s + v * v)
            .sqrt()
    }

    /// Dot product against a dense row of length `dim`.
    pub fn dot(&self, row: &[T]) -> T {
        debug_assert_eq!(row.len(), self.dim);
        self.entries
            .iter()
            .fold(T::zero(), |s, &(i, v)| s + v * row[i as usize])
    }
}

/// Hash tokens into `dim` signed buckets and L2 normalize.
///
/// Deterministic: identical token sequences produce identical vectors.
/// Buckets whose signed counts cancel to zero are dropped; if everything
/// cancels the vector is empty (the zero vector).
pub fn featurize<T: Float>(tokens: &[String], dim: usize) -> FeatureVector<T> {
    assert!(dim >= 2, "feature dim must be >= 2");
    let mut counts: std::collections::BTreeMap<u32, i64> = std::collections::BTreeMap::new();
    for token in tokens {
        let bytes = token.as_bytes();
        let bucket = (fnv1a(bytes, BUCKET_HASH_SEED) % dim as u64) as u32;
        let sign = if fnv1a(bytes, SIGN_HASH_SEED) & 1 == 0 {
            1
        } else {
            -1
        };
        *counts.entry(bucket).or_insert(0) += sign;
    }
    let mut entries: Vec<(u32, T)> = counts
        .into_iter()
        .filter(|&(_, c)| c != 0)
        .map(|(i, c)| (i, T::from(c).unwrap()))
        .collect();
    let norm = entries
        .iter()
        .fold(T::zero(), |s, &(_, v)| s + v * v)
        .sqrt();
    if norm > T::zero() {
        for entry in &mut entries {
            entry.1 = entry.1 / norm;
        }
    }
    FeatureVector { dim, entries }
}

/// Featurize an article: title tokens plus body tokens, body truncated to
/// [`BODY_CHAR_LIMIT`] characters first.
pub fn encode_article<T: Float>(article: &Article, dim: usize) -> FeatureVector<T> {
    let mut tokens = tokenize(&article.title);
    tokens.extend(tokenize(truncate_chars(&article.body, BODY_CHAR_LIMIT)));
    featurize(&tokens, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_lowercases_splits_and_drops_short() {
        assert_eq!(
            tokenize("The U.S. Fed raised rates, again-and-AGAIN!"),
            ["the", "fed", "raised", "rates", "again", "and", "again"]
        );
        assert_eq!(tokenize("a b c"), Vec::<String>::new());
        assert_eq!(tokenize("x1 1x 2020"), ["x1", "1x", "2020"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_handles_unicode() {
        assert_eq!(tokenize("Écran café—menu"), ["écran", "café", "menu"]);
    }

    #[test]
    fn truncate_respects_char_boundaries() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("abc", 10), "abc");
        assert_eq!(truncate_chars("abc", 0), "");
    }

    #[test]
    fn featurize_is_unit_norm_and_deterministic() {
        let tokens = tokenize("senate passes the partisan budget bill in a late vote");
        let a: FeatureVector<f64> = featurize(&tokens, 1 << 10);
        let b: FeatureVector<f64> = featurize(&tokens, 1 << 10);
        assert_eq!(a, b);
        assert!((a.l2_norm() - 1.0).abs() < 1e-12);
        assert!(a.nnz() > 0);
        let mut prev = None;
        for &(i, v) in a.entries() {
            assert!((i as usize) < 1 << 10);
            assert!(v.is_finite());
            if let Some(p) = prev {
                assert!(i > p);
            }
            prev = Some(i);
        }
    }

    #[test]
    fn featurize_empty_is_zero_vector() {
        let v: FeatureVector<f64> = featurize(&[], 1 << 10);
        assert_eq!(v.nnz(), 0);
        assert_eq!(v.l2_norm(), 0.0);
    }

    #[test]
    fn repeated_tokens_scale_before_normalization() {
        let once = featurize::<f64>(&["budget".to_string()], 1 << 10);
        let thrice = featurize::<f64>(
            &[
                "budget".to_string(),
                "budget".to_string(),
                "budget".to_string(),
            ],
            1 << 10,
        );
        // A single token normalizes to +/-1 either way.
        assert_eq!(once.entries()[0].0, thrice.entries()[0].0);
        assert!((once.entries()[0].1.abs() - 1.0).abs() < 1e-12);
        assert!((thrice.entries()[0].1.abs() - 1.0).abs() < 1e-12);
        assert_eq!(once.entries()[0].1.signum(), thrice.entries()[0].1.signum());
    }

    #[test]
    fn new_validates_entries() {
        assert!(FeatureVector::<f64>::new(8, vec![(0, 1.0), (3, -1.0)]).is_ok());
        assert!(FeatureVector::<f64>::new(8, vec![(3, 1.0), (3, 1.0)]).is_err());
        assert!(FeatureVector::<f64>::new(8, vec![(4, 1.0), (2, 1.0)]).is_err());
        assert!(FeatureVector::<f64>::new(8, vec![(9, 1.0)]).is_err());
        assert!(FeatureVector::<f64>::new(8, vec![(1, f64::NAN)]).is_err());
    }

    #[test]
    fn f32_and_f64_agree_on_structure() {
        let tokens = tokenize("markets rallied on the earnings surprise");
        let a: FeatureVector<f32> = featurize(&tokens, 1 << 12);
        let b: FeatureVector<f64> = featurize(&tokens, 1 << 12);
        assert_eq!(a.nnz(), b.nnz());
        for (&(ia, va), &(ib, vb)) in a.entries().iter().zip(b.entries()) {
            assert_eq!(ia, ib);
            assert!((va as f64 - vb).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn featurize_invariants(words in proptest::collection::vec("[a-z]{2,8}", 0..50)) {
            let tokens: Vec<String> = words;
            let v: FeatureVector<f64> = featurize(&tokens, 1 << 10);
            if v.nnz() > 0 {
                prop_assert!((v.l2_norm() - 1.0).abs() < 1e-9);
            }
            let again: FeatureVector<f64> = featurize(&tokens, 1 << 10);
            prop_assert_eq!(v, again);
        }

        #[test]
        fn token_order_does_not_change_vector(words in proptest::collection::vec("[a-z]{2,8}", 1..30)) {
            let mut reversed = words.clone();
            reversed.reverse();
            let a: FeatureVector<f64> = featurize(&words, 1 << 10);
            let b: FeatureVector<f64> = featurize(&reversed, 1 << 10);
            prop_assert_eq!(a, b);
        }
    }
}
