//! Tape-side construction of the teacher-forced loss, plus the training
//! loop and perplexity.
//!
//! Every step mirrors the pure functions in the parent module exactly (same
//! kernels, same accumulation order), so a forward pass here produces
//! bit-identical values to pure inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adadelta_step, AdaDeltaConfig, AdaDeltaState, DiffError, Scalar, Tape, Tensor, ValueId,
};
use crate::corpus::{TrainingPair, BOS, EOS};

use super::{GruWeights, ModelParams, Seq2SeqError};

pub(crate) struct TapedGru {
    w_reset: ValueId,
    u_reset: ValueId,
    b_reset: ValueId,
    w_update: ValueId,
    u_update: ValueId,
    b_update: ValueId,
    w_cand: ValueId,
    u_cand: ValueId,
    b_cand: ValueId,
}

impl TapedGru {
    fn register<S: Scalar>(tape: &mut Tape<S>, g: &GruWeights<S>, ids: &mut Vec<ValueId>) -> Self {
        let mut leaf = |t: &Tensor<S>| {
            let id = tape.leaf(t.clone());
            ids.push(id);
            id
        };
        Self {
            w_reset: leaf(&g.w_reset),
            u_reset: leaf(&g.u_reset),
            b_reset: leaf(&g.b_reset),
            w_update: leaf(&g.w_update),
            u_update: leaf(&g.u_update),
            b_update: leaf(&g.b_update),
            w_cand: leaf(&g.w_cand),
            u_cand: leaf(&g.u_cand),
            b_cand: leaf(&g.b_cand),
        }
    }
}

pub(crate) struct TapedModel {
    pub embedding: ValueId,
    enc_fwd: TapedGru,
    enc_bwd: TapedGru,
    w_init: ValueId,
    attn_state: ValueId,
    attn_encoder: ValueId,
    attn_score: ValueId,
    dec: TapedGru,
    w_out: ValueId,
    /// All leaves in the canonical parameter order.
    pub param_ids: Vec<ValueId>,
}

impl TapedModel {
    /// Registers every parameter as a leaf, in canonical order.
    pub(crate) fn register<S: Scalar>(tape: &mut Tape<S>, params: &ModelParams<S>) -> Self {
        let mut ids = Vec::new();
        let embedding = tape.leaf(params.embedding.clone());
        ids.push(embedding);
        let enc_fwd = TapedGru::register(tape, &params.enc_fwd, &mut ids);
        let enc_bwd = TapedGru::register(tape, &params.enc_bwd, &mut ids);
        let mut leaf = |t: &Tensor<S>| {
            let id = tape.leaf(t.clone());
            ids.push(id);
            id
        };
        let w_init = leaf(&params.w_init);
        let attn_state = leaf(&params.attn_state);
        let attn_encoder = leaf(&params.attn_encoder);
        let attn_score = leaf(&params.attn_score);
        let dec = TapedGru::register(tape, &params.dec, &mut ids);
        let w_out = {
            let id = tape.leaf(params.w_out.clone());
            ids.push(id);
            id
        };
        Self {
            embedding,
            enc_fwd,
            enc_bwd,
            w_init,
            attn_state,
            attn_encoder,
            attn_score,
            dec,
            w_out,
            param_ids: ids,
        }
    }

    /// Rebuilds the structure over leaves already registered in canonical
    /// order (the gradient-check path registers leaves itself).
    pub(crate) fn from_ids(ids: &[ValueId]) -> Self {
        assert_eq!(ids.len(), 33, "canonical parameter count");
        let gru = |o: usize| TapedGru {
            w_reset: ids[o],
            u_reset: ids[o + 1],
            b_reset: ids[o + 2],
            w_update: ids[o + 3],
            u_update: ids[o + 4],
            b_update: ids[o + 5],
            w_cand: ids[o + 6],
            u_cand: ids[o + 7],
            b_cand: ids[o + 8],
        };
        Self {
            embedding: ids[0],
            enc_fwd: gru(1),
            enc_bwd: gru(10),
            w_init: ids[19],
            attn_state: ids[20],
            attn_encoder: ids[21],
            attn_score: ids[22],
            dec: gru(23),
            w_out: ids[32],
            param_ids: ids.to_vec(),
        }
    }

    fn gru_cell<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        gru: &TapedGru,
        x: ValueId,
        h: ValueId,
    ) -> Result<ValueId, DiffError> {
        let gate = |tape: &mut Tape<S>, w, u, b| -> Result<ValueId, DiffError> {
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h, u)?;
            let sum = tape.add(xw, hu)?;
            tape.add(sum, b)
        };
        let r_pre = gate(tape, gru.w_reset, gru.u_reset, gru.b_reset)?;
        let r = tape.sigmoid(r_pre)?;
        let z_pre = gate(tape, gru.w_update, gru.u_update, gru.b_update)?;
        let z = tape.sigmoid(z_pre)?;
        let rh = tape.mul(r, h)?;
        let xn = tape.matmul(x, gru.w_cand)?;
        let rhn = tape.matmul(rh, gru.u_cand)?;
        let n_sum = tape.add(xn, rhn)?;
        let n_pre = tape.add(n_sum, gru.b_cand)?;
        let n = tape.tanh(n_pre)?;
        let keep = tape.affine(z, -S::one(), S::one())?;
        let kh = tape.mul(keep, h)?;
        let zn = tape.mul(z, n)?;
        tape.add(kh, zn)
    }

    /// Encoder states stacked as an N × 2·d_hidden matrix node.
    fn encode_matrix<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ModelParams<S>,
        keyword_ids: &[u32],
    ) -> Result<ValueId, DiffError> {
        let n = keyword_ids.len();
        let d_h = params.dims.d_hidden;

        let mut fwd = Vec::with_capacity(n);
        let mut h = tape.constant(Tensor::zeros(vec![d_h]));
        for &id in keyword_ids {
            let x = tape.embed_lookup(self.embedding, id as usize)?;
            h = self.gru_cell(tape, &self.enc_fwd, x, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![None; n];
        let mut hb = tape.constant(Tensor::zeros(vec![d_h]));
        for (i, &id) in keyword_ids.iter().enumerate().rev() {
            let x = tape.embed_lookup(self.embedding, id as usize)?;
            hb = self.gru_cell(tape, &self.enc_bwd, x, hb)?;
            bwd[i] = Some(hb);
        }

        let mut flat = None;
        for (f, b) in fwd.into_iter().zip(bwd) {
            let hi = tape.concat(f, b.expect("filled"))?;
            flat = Some(match flat {
                None => hi,
                Some(acc) => tape.concat(acc, hi)?,
            });
        }
        tape.reshape(flat.expect("non-empty input"), vec![n, 2 * d_h])
    }

    /// s_0 = tanh(W_init · mean(h_i)).
    fn initial_state<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        n: usize,
        h_matrix: ValueId,
    ) -> Result<ValueId, DiffError> {
        let ones = tape.constant(Tensor::vector(vec![S::one(); n]));
        let sums = tape.matmul(ones, h_matrix)?;
        let mean = tape.affine(sums, S::one() / S::from_f64(n as f64), S::zero())?;
        let proj = tape.matmul(mean, self.w_init)?;
        tape.tanh(proj)
    }

    /// Attention + GRU update + output distribution for one decode step.
    /// Returns (s_t, probs).
    fn step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        y_prev: u32,
        s_prev: ValueId,
        h_matrix: ValueId,
        h_proj: ValueId,
        n: usize,
        d_attn: usize,
    ) -> Result<(ValueId, ValueId), DiffError> {
        let s_proj = tape.matmul(s_prev, self.attn_state)?;
        let mut scores = None;
        for i in 0..n {
            let row = tape.slice(h_proj, i, 1)?;
            let hw = tape.reshape(row, vec![d_attn])?;
            let sum = tape.add(s_proj, hw)?;
            let t = tape.tanh(sum)?;
            let prod = tape.mul(self.attn_score, t)?;
            let e = tape.reduce_sum(prod)?;
            scores = Some(match scores {
                None => tape.reshape(e, vec![1])?,
                Some(acc) => tape.concat(acc, e)?,
            });
        }
        let alpha = tape.softmax(scores.expect("n >= 1"))?;
        let context = tape.matmul(alpha, h_matrix)?;
        let emb = tape.embed_lookup(self.embedding, y_prev as usize)?;
        let dec_in = tape.concat(emb, context)?;
        let s_t = self.gru_cell(tape, &self.dec, dec_in, s_prev)?;
        let out_scores = tape.matmul(s_t, self.w_out)?;
        let probs = tape.softmax(out_scores)?;
        Ok((s_t, probs))
    }

    /// Teacher-forced cross-entropy over a training pair.
    pub(crate) fn sequence_loss_graph<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ModelParams<S>,
        pair: &TrainingPair,
    ) -> Result<ValueId, Seq2SeqError> {
        validate_pair(params, pair)?;
        let n = pair.keywords.len();
        let h_matrix = self.encode_matrix(tape, params, &pair.keywords)?;
        let h_proj = tape.matmul(h_matrix, self.attn_encoder)?;
        let mut s = self.initial_state(tape, n, h_matrix)?;

        let mut total: Option<ValueId> = None;
        for t in 1..pair.target.len() {
            let y_prev = pair.target[t - 1];
            let (s_t, probs) =
                self.step(tape, y_prev, s, h_matrix, h_proj, n, params.dims.d_attn)?;
            s = s_t;
            let l = tape.cross_entropy(probs, pair.target[t] as usize)?;
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        Ok(total.expect("target has at least one step"))
    }
}

fn validate_pair<S: Scalar>(
    params: &ModelParams<S>,
    pair: &TrainingPair,
) -> Result<(), Seq2SeqError> {
    if pair.keywords.is_empty() {
        return Err(Seq2SeqError::EmptyInput);
    }
    for &id in pair.keywords.iter().chain(&pair.target) {
        if id as usize >= params.dims.vocab {
            return Err(Seq2SeqError::InvalidTokenId {
                id,
                vocab: params.dims.vocab,
            });
        }
    }
    if pair.target.len() < 2 {
        return Err(Seq2SeqError::InvalidTarget(
            "target must hold BOS plus at least one step".into(),
        ));
    }
    if pair.target[0] != BOS {
        return Err(Seq2SeqError::InvalidTarget("target must start with BOS".into()));
    }
    if *pair.target.last().unwrap() != EOS {
        return Err(Seq2SeqError::InvalidTarget("target must end with EOS".into()));
    }
    Ok(())
}

/// Teacher-forced loss Σ_t −ln z_t\[target_t\] for one pair.
pub fn sequence_loss<S: Scalar>(
    params: &ModelParams<S>,
    pair: &TrainingPair,
) -> Result<S, Seq2SeqError> {
    let mut tape = Tape::new();
    let model = TapedModel::register(&mut tape, params);
    let loss = model.sequence_loss_graph(&mut tape, params, pair)?;
    Ok(tape.value(loss).scalar_value().expect("loss is scalar"))
}

/// Summed gradients (canonical parameter order) and summed loss over a batch.
/// Gradients from disjoint shards may be added together; the result matches
/// a single-shard computation up to floating-point reassociation.
pub fn batch_gradients<S: Scalar>(
    params: &ModelParams<S>,
    pairs: &[TrainingPair],
) -> Result<(Vec<Tensor<S>>, f64), Seq2SeqError> {
    let mut grads: Vec<Tensor<S>> = params
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let mut total_loss = 0.0f64;
    for pair in pairs {
        let mut tape = Tape::new();
        let model = TapedModel::register(&mut tape, params);
        let loss = model.sequence_loss_graph(&mut tape, params, pair)?;
        total_loss += tape.value(loss).scalar_value().expect("scalar").as_f64();
        let g = tape.backward(loss)?;
        for (acc, &id) in grads.iter_mut().zip(&model.param_ids) {
            if let Some(contrib) = g.get(id) {
                for (a, &c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                    *a = *a + c;
                }
            }
        }
    }
    Ok((grads, total_loss))
}

/// Minibatch training settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep the embedding table fixed during training.
    pub freeze_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            seed: 0,
            freeze_embeddings: false,
        }
    }
}

/// Per-epoch mean loss curve.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Minibatch gradient descent with AdaDelta step sizing. Deterministic given
/// the seed; `epochs = 0` leaves the model unchanged with an empty curve.
pub fn train<S: Scalar>(
    params: &mut ModelParams<S>,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<TrainReport, Seq2SeqError> {
    if pairs.is_empty() {
        return Err(Seq2SeqError::EmptyPairs);
    }
    let batch_size = cfg.batch_size.max(1);
    let mut state = AdaDeltaState::new(&params.params(), AdaDeltaConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (batch_no, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<TrainingPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (mut grads, loss) = batch_gradients(params, &batch)?;
            if !loss.is_finite() {
                return Err(Seq2SeqError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            epoch_loss += loss;
            if cfg.freeze_embeddings {
                grads[0] = Tensor::zeros(params.embedding.shape().to_vec());
            }
            let mut slots = params.params_mut();
            adadelta_step(&mut slots, &grads, &mut state).map_err(|e| match e {
                DiffError::NonFinite { .. } => Seq2SeqError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                },
                other => Seq2SeqError::Diff(other),
            })?;
        }
        report.epoch_losses.push(epoch_loss / pairs.len() as f64);
    }
    Ok(report)
}

/// exp(total cross-entropy / total predicted tokens).
pub fn perplexity<S: Scalar>(
    params: &ModelParams<S>,
    pairs: &[TrainingPair],
) -> Result<f64, Seq2SeqError> {
    if pairs.is_empty() {
        return Err(Seq2SeqError::EmptyPairs);
    }
    let mut total = 0.0f64;
    let mut tokens = 0usize;
    for pair in pairs {
        total += sequence_loss(params, pair)?.as_f64();
        tokens += pair.target.len() - 1;
    }
    Ok((total / tokens as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BOS, EOS};
    use crate::seq2seq::{
        attention_context, attention_weights, decoder_step, encode, init_state, output_logits,
        ModelDims,
    };

    fn tiny_dims() -> ModelDims {
        ModelDims {
            vocab: 9,
            d_embed: 4,
            d_hidden: 3,
            d_state: 6,
            d_attn: 3,
        }
    }

    fn pair() -> TrainingPair {
        TrainingPair {
            keywords: vec![5, 7],
            target: vec![BOS, 5, 6, 7, 8, EOS],
        }
    }

    #[test]
    fn uniform_model_loss_is_length_times_log_vocab() {
        let mut p = ModelParams::<f64>::init(tiny_dims(), 0);
        for t in p.params_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let pr = pair();
        let loss = sequence_loss(&p, &pr).unwrap();
        let steps = (pr.target.len() - 1) as f64;
        assert!((loss - steps * 9.0f64.ln()).abs() < 1e-9);
        // and perplexity of the uniform model is |V|
        let ppl = perplexity(&p, &[pr]).unwrap();
        assert!((ppl - 9.0).abs() < 1e-9);
    }

    #[test]
    fn loss_is_nonnegative() {
        let p = ModelParams::<f64>::init(tiny_dims(), 3);
        assert!(sequence_loss(&p, &pair()).unwrap() >= 0.0);
    }

    #[test]
    fn taped_forward_matches_pure_inference_bitwise() {
        let p = ModelParams::<f64>::init(tiny_dims(), 11);
        let pr = pair();
        let taped = sequence_loss(&p, &pr).unwrap();

        // Pure teacher-forced replication through the inference path.
        let hs = encode(&p, &pr.keywords).unwrap();
        let mut s = init_state(&p, &hs).unwrap();
        let mut pure = 0.0f64;
        for t in 1..pr.target.len() {
            let alpha = attention_weights(&p, &s, &hs).unwrap();
            let ctx = attention_context(&alpha, &hs);
            s = decoder_step(&p, pr.target[t - 1], &s, &ctx).unwrap();
            let z = output_logits(&p, &s);
            pure += -(z[pr.target[t] as usize].ln());
        }
        assert_eq!(taped, pure, "taped and pure paths must agree exactly");
    }

    #[test]
    fn invalid_targets_are_rejected() {
        let p = ModelParams::<f64>::init(tiny_dims(), 3);
        let no_bos = TrainingPair {
            keywords: vec![5],
            target: vec![5, EOS],
        };
        assert!(matches!(
            sequence_loss(&p, &no_bos),
            Err(Seq2SeqError::InvalidTarget(_))
        ));
        let no_eos = TrainingPair {
            keywords: vec![5],
            target: vec![BOS, 5],
        };
        assert!(matches!(
            sequence_loss(&p, &no_eos),
            Err(Seq2SeqError::InvalidTarget(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences_on_tiny_model() {
        use crate::autodiff::finite_difference_check;
        let dims = ModelDims {
            vocab: 6,
            d_embed: 2,
            d_hidden: 2,
            d_state: 3,
            d_attn: 2,
        };
        let p = ModelParams::<f64>::init(dims, 5);
        let pr = TrainingPair {
            keywords: vec![5],
            target: vec![BOS, 5, EOS],
        };
        let tensors: Vec<Tensor<f64>> = p.params().into_iter().cloned().collect();
        let pr_copy = pr.clone();
        let err = finite_difference_check(
            move |tape: &mut Tape<f64>, ids: &[ValueId]| {
                // The graph reads parameter values from the leaves; `p` only
                // supplies dims and validation.
                let model = TapedModel::from_ids(ids);
                model
                    .sequence_loss_graph(tape, &p, &pr_copy)
                    .map_err(|e| match e {
                        Seq2SeqError::Diff(d) => d,
                        other => DiffError::InvalidArgument(other.to_string()),
                    })
            },
            &tensors,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn shard_sums_match_full_batch() {
        let p = ModelParams::<f64>::init(tiny_dims(), 17);
        let pairs: Vec<TrainingPair> = (0..6)
            .map(|i| TrainingPair {
                keywords: vec![5 + (i % 3) as u32],
                target: vec![BOS, 5 + (i % 4) as u32, 6, EOS],
            })
            .collect();
        let (full, full_loss) = batch_gradients(&p, &pairs).unwrap();
        let (a, la) = batch_gradients(&p, &pairs[..3]).unwrap();
        let (b, lb) = batch_gradients(&p, &pairs[3..]).unwrap();
        assert!((full_loss - (la + lb)).abs() < 1e-9);
        for ((f, ga), gb) in full.iter().zip(&a).zip(&b) {
            for ((fv, &av), &bv) in f.data().iter().zip(ga.data()).zip(gb.data()) {
                assert!((fv - (av + bv)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let mut p = ModelParams::<f64>::init(tiny_dims(), 3);
        let before = p.clone();
        let report = train(&mut p, &[pair()], &TrainConfig { epochs: 0, ..Default::default() })
            .unwrap();
        assert!(report.epoch_losses.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn single_pair_training_reduces_loss_deterministically() {
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            seed: 9,
            freeze_embeddings: false,
        };
        let mut p1 = ModelParams::<f64>::init(tiny_dims(), 3);
        let initial = sequence_loss(&p1, &pair()).unwrap();
        let report = train(&mut p1, &[pair()], &cfg).unwrap();
        let final_loss = sequence_loss(&p1, &pair()).unwrap();
        assert!(final_loss < initial, "{final_loss} !< {initial}");
        assert_eq!(report.epoch_losses.len(), 30);

        // bitwise determinism in 64-bit mode
        let mut p2 = ModelParams::<f64>::init(tiny_dims(), 3);
        train(&mut p2, &[pair()], &cfg).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn frozen_embeddings_stay_fixed() {
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 9,
            freeze_embeddings: true,
        };
        let mut p = ModelParams::<f64>::init(tiny_dims(), 3);
        let before = p.embedding.clone();
        train(&mut p, &[pair()], &cfg).unwrap();
        assert_eq!(p.embedding, before);
        assert_ne!(p.w_out, ModelParams::<f64>::init(tiny_dims(), 3).w_out);
    }

    #[test]
    fn perplexity_is_monotone_in_loss() {
        let p0 = ModelParams::<f64>::init(tiny_dims(), 3);
        let mut p1 = p0.clone();
        train(&mut p1, &[pair()], &TrainConfig { epochs: 20, ..Default::default() }).unwrap();
        let l0 = sequence_loss(&p0, &pair()).unwrap();
        let l1 = sequence_loss(&p1, &pair()).unwrap();
        let ppl0 = perplexity(&p0, &[pair()]).unwrap();
        let ppl1 = perplexity(&p1, &[pair()]).unwrap();
        assert_eq!(l1 < l0, ppl1 < ppl0);
    }
}
