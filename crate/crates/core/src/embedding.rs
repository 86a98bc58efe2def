//! The character embedding table E, with optional standalone skip-gram
//! pretraining. The same table serves decoder input lookup, memory targets
//! and the memory-blend logit term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_bound, kernels, DiffError, Scalar, Tensor};
use crate::corpus::{Poem, Vocabulary, NUM_SPECIALS};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding dimension must be at least 1")]
    ZeroDim,
    #[error("corpus must be non-empty")]
    EmptyCorpus,
    #[error("id sequence must be non-empty")]
    EmptyIds,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// |V| × d table of character embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<S> {
    weights: Tensor<S>,
}

impl<S: Scalar> EmbeddingTable<S> {
    pub fn from_tensor(weights: Tensor<S>) -> Result<Self, EmbeddingError> {
        if weights.rank() != 2 || weights.shape()[1] == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self { weights })
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor<S> {
        &self.weights
    }

    pub fn row(&self, id: u32) -> &[S] {
        self.weights.row(id as usize).expect("id within vocabulary")
    }
}

/// Seeded Glorot-uniform initialization.
pub fn init_embedding_table<S: Scalar>(
    vocab_size: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable<S>, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = glorot_bound(vocab_size, dim);
    let data: Vec<S> = (0..vocab_size * dim)
        .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Ok(EmbeddingTable {
        weights: Tensor::new(vec![vocab_size, dim], data)?,
    })
}

/// Skip-gram with negative sampling settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 2,
            negatives: 4,
            epochs: 5,
            learning_rate: 0.05,
        }
    }
}

/// Trains character embeddings with skip-gram + negative sampling over
/// within-line context windows. Deterministic given (corpus, cfg, seed).
pub fn pretrain_embeddings<S: Scalar>(
    corpus: &[Poem],
    vocab: &Vocabulary,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<EmbeddingTable<S>, EmbeddingError> {
    if corpus.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    if cfg.dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let v = vocab.size();
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Noise distribution: unigram counts raised to 3/4 over non-special ids.
    let mut counts = vec![0f64; v];
    let mut lines: Vec<Vec<usize>> = Vec::new();
    for poem in corpus {
        for line in &poem.lines {
            let ids: Vec<usize> = line.iter().map(|&c| vocab.encode_char(c) as usize).collect();
            for &id in &ids {
                counts[id] += 1.0;
            }
            lines.push(ids);
        }
    }
    let mut noise_cdf = vec![0f64; v];
    let mut total = 0.0;
    for id in NUM_SPECIALS..v {
        total += counts[id].powf(0.75);
        noise_cdf[id] = total;
    }
    if total <= 0.0 {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let draw_negative = |rng: &mut ChaCha8Rng| -> usize {
        let x = rng.gen_range(0.0..total);
        noise_cdf
            .iter()
            .position(|&c| c > x)
            .unwrap_or(v - 1)
    };

    let bound = glorot_bound(v, d);
    let mut input: Vec<f64> = (0..v * d).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut output: Vec<f64> = vec![0.0; v * d];

    let lr = cfg.learning_rate;
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());

    for _epoch in 0..cfg.epochs {
        for line in &lines {
            for (i, &center) in line.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(line.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let ctx = line[j];
                    // one positive plus cfg.negatives noise samples
                    let mut grad_center = vec![0.0f64; d];
                    let mut targets: Vec<(usize, f64)> = Vec::with_capacity(cfg.negatives + 1);
                    targets.push((ctx, 1.0));
                    for _ in 0..cfg.negatives {
                        targets.push((draw_negative(&mut rng), 0.0));
                    }
                    for (tid, label) in targets {
                        let (cv, ov) = (&input[center * d..(center + 1) * d], &output[tid * d..(tid + 1) * d]);
                        let score = sigmoid(kernels::dot(cv, ov));
                        let g = score - label;
                        for k in 0..d {
                            grad_center[k] += g * output[tid * d + k];
                            output[tid * d + k] -= lr * g * input[center * d + k];
                        }
                    }
                    for k in 0..d {
                        input[center * d + k] -= lr * grad_center[k];
                    }
                }
            }
        }
    }

    let data: Vec<S> = input.into_iter().map(S::from_f64).collect();
    Ok(EmbeddingTable {
        weights: Tensor::new(vec![v, d], data)?,
    })
}

/// Arithmetic mean of the embedding rows for `ids`.
pub fn average_embedding<S: Scalar>(
    table: &EmbeddingTable<S>,
    ids: &[u32],
) -> Result<Vec<S>, EmbeddingError> {
    if ids.is_empty() {
        return Err(EmbeddingError::EmptyIds);
    }
    let d = table.dim();
    let mut acc = vec![S::zero(); d];
    for &id in ids {
        for (a, &x) in acc.iter_mut().zip(table.row(id)) {
            *a = *a + x;
        }
    }
    let inv = S::one() / S::from_f64(ids.len() as f64);
    for a in &mut acc {
        *a = *a * inv;
    }
    Ok(acc)
}

/// Cosine similarity u·v / (‖u‖‖v‖); 0 when either norm is below 1e-12 so
/// untrained rows cannot poison memory reads.
pub fn cosine_similarity<S: Scalar>(u: &[S], v: &[S]) -> Result<S, EmbeddingError> {
    if u.len() != v.len() || u.is_empty() {
        return Err(EmbeddingError::DimMismatch(u.len(), v.len()));
    }
    let nu = kernels::norm(u);
    let nv = kernels::norm(v);
    let tiny = S::from_f64(1e-12);
    if nu < tiny || nv < tiny {
        return Ok(S::zero());
    }
    Ok(kernels::dot(u, v) / (nu * nv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_embedding_table::<f64>(7, 4, 1).unwrap();
        let b = init_embedding_table::<f64>(7, 4, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights().shape(), &[7, 4]);
        let c = init_embedding_table::<f64>(7, 4, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_dim_is_rejected() {
        assert!(matches!(
            init_embedding_table::<f64>(7, 0, 1).unwrap_err(),
            EmbeddingError::ZeroDim
        ));
    }

    #[test]
    fn average_of_single_id_is_that_row() {
        let table = init_embedding_table::<f64>(6, 3, 9).unwrap();
        let avg = average_embedding(&table, &[4]).unwrap();
        assert_eq!(avg.as_slice(), table.row(4));
    }

    #[test]
    fn average_of_opposite_rows_is_zero() {
        let t = EmbeddingTable::from_tensor(
            Tensor::matrix(2, 2, vec![1.0f64, -2.0, -1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let avg = average_embedding(&t, &[0, 1]).unwrap();
        assert_eq!(avg, vec![0.0, 0.0]);
    }

    #[test]
    fn average_of_unit_rows() {
        let t = EmbeddingTable::from_tensor(
            Tensor::matrix(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(average_embedding(&t, &[0, 1]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_guard() {
        assert_eq!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn pretraining_separates_cooccurring_pairs() {
        // a,b always adjacent; c,d always adjacent; the pairs never cross.
        let mut poems = Vec::new();
        for _ in 0..30 {
            poems.push(Poem::from_lines("", &["甲乙甲乙甲", "丙丁丙丁丙"]));
        }
        let vocab = build_vocabulary(&poems);
        let cfg = PretrainConfig {
            dim: 8,
            window: 2,
            negatives: 3,
            epochs: 15,
            learning_rate: 0.05,
        };
        let table = pretrain_embeddings::<f64>(&poems, &vocab, &cfg, 11).unwrap();
        assert_eq!(table.vocab_size(), vocab.size());
        assert_eq!(table.dim(), 8);

        let a = vocab.encode_char('甲');
        let b = vocab.encode_char('乙');
        let c = vocab.encode_char('丙');
        let ab = cosine_similarity(table.row(a), table.row(b)).unwrap();
        let ac = cosine_similarity(table.row(a), table.row(c)).unwrap();
        assert!(ab > ac, "cos(a,b)={ab} should exceed cos(a,c)={ac}");

        let again = pretrain_embeddings::<f64>(&poems, &vocab, &cfg, 11).unwrap();
        assert_eq!(table, again);
    }

    #[test]
    fn pretraining_rejects_empty_corpus() {
        let vocab = build_vocabulary(&[]);
        let err =
            pretrain_embeddings::<f64>(&[], &vocab, &PretrainConfig::default(), 0).unwrap_err();
        assert!(matches!(err, EmbeddingError::EmptyCorpus));
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Cosine is bounded, symmetric, and scale-invariant in u for a > 0.
            #[test]
            fn cosine_properties(
                u in proptest::collection::vec(-10.0f64..10.0, 2..6),
                scale in 0.001f64..100.0,
            ) {
                let v: Vec<f64> = u.iter().rev().cloned().collect();
                let c = cosine_similarity(&u, &v).unwrap();
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
                let c_sym = cosine_similarity(&v, &u).unwrap();
                prop_assert!((c - c_sym).abs() < 1e-12);

                let su: Vec<f64> = u.iter().map(|&x| x * scale).collect();
                let c_scaled = cosine_similarity(&su, &v).unwrap();
                prop_assert!((c - c_scaled).abs() < 1e-9);
            }

            /// average_embedding is permutation-invariant.
            #[test]
            fn average_permutation_invariant(ids in proptest::collection::vec(0u32..6, 1..10)) {
                let table = init_embedding_table::<f64>(6, 4, 3).unwrap();
                let fwd = average_embedding(&table, &ids).unwrap();
                let mut rev = ids.clone();
                rev.reverse();
                let bwd = average_embedding(&table, &rev).unwrap();
                for (a, b) in fwd.iter().zip(&bwd) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
