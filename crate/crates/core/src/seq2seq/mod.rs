//! Attention-based GRU encoder/decoder over characters.
//!
//! The encoder is a bi-directional GRU over keyword characters; the decoder
//! updates s_t = f_d(y_{t−1}, s_{t−1}, Σ α_{t,i} h_i) with additive
//! attention scores e_i = v·tanh(W_s·s_{t−1} + W_h·h_i), and the output
//! distribution is softmax(s_t·W). Inference here is pure; training builds
//! the same arithmetic on the reverse-mode tape (see [`graph`]), through the
//! shared kernels, so both paths agree bit-for-bit.

mod checkpoint;
mod graph;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use graph::{batch_gradients, perplexity, sequence_loss, train, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_bound, kernels, DiffError, Scalar, Tensor};
use crate::corpus::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum Seq2SeqError {
    #[error("input sequence must be non-empty")]
    EmptyInput,
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    InvalidTokenId { id: TokenId, vocab: usize },
    #[error("invalid training target: {0}")]
    InvalidTarget(String),
    #[error("training requires at least one pair")]
    EmptyPairs,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    DimMismatch {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Model dimensions. `d_hidden` is per encoder direction, so encoder states
/// have length `2·d_hidden`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_embed: usize,
    pub d_hidden: usize,
    pub d_state: usize,
    pub d_attn: usize,
}

impl ModelDims {
    /// Desk-scale defaults.
    pub fn new(vocab: usize) -> Self {
        Self {
            vocab,
            d_embed: 32,
            d_hidden: 32,
            d_state: 64,
            d_attn: 32,
        }
    }
}

/// One GRU cell's weights: reset/update gates and candidate state, each with
/// an input map, a recurrent map and a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights<S> {
    pub w_reset: Tensor<S>,
    pub u_reset: Tensor<S>,
    pub b_reset: Tensor<S>,
    pub w_update: Tensor<S>,
    pub u_update: Tensor<S>,
    pub b_update: Tensor<S>,
    pub w_cand: Tensor<S>,
    pub u_cand: Tensor<S>,
    pub b_cand: Tensor<S>,
}

impl<S: Scalar> GruWeights<S> {
    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mat = |fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let bound = glorot_bound(fan_in, fan_out);
            let data: Vec<S> = (0..fan_in * fan_out)
                .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            Tensor::new(vec![fan_in, fan_out], data).expect("sized data")
        };
        Self {
            w_reset: mat(input, hidden, rng),
            u_reset: mat(hidden, hidden, rng),
            b_reset: Tensor::zeros(vec![hidden]),
            w_update: mat(input, hidden, rng),
            u_update: mat(hidden, hidden, rng),
            b_update: Tensor::zeros(vec![hidden]),
            w_cand: mat(input, hidden, rng),
            u_cand: mat(hidden, hidden, rng),
            b_cand: Tensor::zeros(vec![hidden]),
        }
    }

    fn hidden(&self) -> usize {
        self.b_reset.len()
    }
}

/// All trainable parameters, including the shared embedding table E.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub dims: ModelDims,
    /// vocab × d_embed character embeddings.
    pub embedding: Tensor<S>,
    pub enc_fwd: GruWeights<S>,
    pub enc_bwd: GruWeights<S>,
    /// 2·d_hidden × d_state map from the mean encoder state to s_0.
    pub w_init: Tensor<S>,
    /// d_state × d_attn attention projection of the decoder state (W_s).
    pub attn_state: Tensor<S>,
    /// 2·d_hidden × d_attn attention projection of encoder states (W_h).
    pub attn_encoder: Tensor<S>,
    /// d_attn scoring vector (v).
    pub attn_score: Tensor<S>,
    /// Decoder GRU over inputs concat(E[y_prev], context).
    pub dec: GruWeights<S>,
    /// d_state × vocab output projection (W).
    pub w_out: Tensor<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Seeded Glorot-uniform initialization; biases start at zero.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = |fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let bound = glorot_bound(fan_in, fan_out);
            let data: Vec<S> = (0..fan_in * fan_out)
                .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            Tensor::new(vec![fan_in, fan_out], data).expect("sized data")
        };
        let vec_init = |len: usize, rng: &mut ChaCha8Rng| {
            let bound = glorot_bound(len, 1);
            let data: Vec<S> = (0..len)
                .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            Tensor::vector(data)
        };
        Self {
            dims,
            embedding: mat(dims.vocab, dims.d_embed, &mut rng),
            enc_fwd: GruWeights::init(dims.d_embed, dims.d_hidden, &mut rng),
            enc_bwd: GruWeights::init(dims.d_embed, dims.d_hidden, &mut rng),
            w_init: mat(2 * dims.d_hidden, dims.d_state, &mut rng),
            attn_state: mat(dims.d_state, dims.d_attn, &mut rng),
            attn_encoder: mat(2 * dims.d_hidden, dims.d_attn, &mut rng),
            attn_score: vec_init(dims.d_attn, &mut rng),
            dec: GruWeights::init(dims.d_embed + 2 * dims.d_hidden, dims.d_state, &mut rng),
            w_out: mat(dims.d_state, dims.vocab, &mut rng),
        }
    }

    /// Canonical parameter order shared by the optimizer, gradients and
    /// checkpoints.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        for prefix in ["enc_fwd", "enc_bwd"] {
            for field in GRU_FIELDS {
                names.push(format!("{prefix}.{field}"));
            }
        }
        names.extend(
            ["w_init", "attn.w_s", "attn.w_h", "attn.v"]
                .iter()
                .map(|s| s.to_string()),
        );
        for field in GRU_FIELDS {
            names.push(format!("dec.{field}"));
        }
        names.push("w_out".to_string());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut out = vec![&self.embedding];
        out.extend(gru_params(&self.enc_fwd));
        out.extend(gru_params(&self.enc_bwd));
        out.extend([&self.w_init, &self.attn_state, &self.attn_encoder, &self.attn_score]);
        out.extend(gru_params(&self.dec));
        out.push(&self.w_out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.embedding];
        out.extend(gru_params_mut(&mut self.enc_fwd));
        out.extend(gru_params_mut(&mut self.enc_bwd));
        out.extend([
            &mut self.w_init,
            &mut self.attn_state,
            &mut self.attn_encoder,
            &mut self.attn_score,
        ]);
        out.extend(gru_params_mut(&mut self.dec));
        out.push(&mut self.w_out);
        out
    }

    pub fn embedding_row(&self, id: TokenId) -> Result<&[S], Seq2SeqError> {
        self.embedding
            .row(id as usize)
            .ok_or(Seq2SeqError::InvalidTokenId {
                id,
                vocab: self.dims.vocab,
            })
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let gru = |g: &GruWeights<S>| GruWeights {
            w_reset: g.w_reset.cast(),
            u_reset: g.u_reset.cast(),
            b_reset: g.b_reset.cast(),
            w_update: g.w_update.cast(),
            u_update: g.u_update.cast(),
            b_update: g.b_update.cast(),
            w_cand: g.w_cand.cast(),
            u_cand: g.u_cand.cast(),
            b_cand: g.b_cand.cast(),
        };
        ModelParams {
            dims: self.dims,
            embedding: self.embedding.cast(),
            enc_fwd: gru(&self.enc_fwd),
            enc_bwd: gru(&self.enc_bwd),
            w_init: self.w_init.cast(),
            attn_state: self.attn_state.cast(),
            attn_encoder: self.attn_encoder.cast(),
            attn_score: self.attn_score.cast(),
            dec: gru(&self.dec),
            w_out: self.w_out.cast(),
        }
    }
}

pub(crate) const GRU_FIELDS: [&str; 9] = [
    "w_reset", "u_reset", "b_reset", "w_update", "u_update", "b_update", "w_cand", "u_cand",
    "b_cand",
];

fn gru_params<S>(g: &GruWeights<S>) -> Vec<&Tensor<S>> {
    vec![
        &g.w_reset, &g.u_reset, &g.b_reset, &g.w_update, &g.u_update, &g.b_update, &g.w_cand,
        &g.u_cand, &g.b_cand,
    ]
}

fn gru_params_mut<S>(g: &mut GruWeights<S>) -> Vec<&mut Tensor<S>> {
    vec![
        &mut g.w_reset,
        &mut g.u_reset,
        &mut g.b_reset,
        &mut g.w_update,
        &mut g.u_update,
        &mut g.b_update,
        &mut g.w_cand,
        &mut g.u_cand,
        &mut g.b_cand,
    ]
}

/// Decoder state: the d_state vector s_t plus the step index.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<S> {
    pub s: Vec<S>,
    pub step: usize,
}

impl<S: Scalar> DecoderState<S> {
    pub fn new(s: Vec<S>) -> Self {
        Self { s, step: 0 }
    }
}

/// Standard GRU cell: r/z gates, candidate state, h' = (1−z)⊙h + z⊙n.
pub(crate) fn gru_cell<S: Scalar>(w: &GruWeights<S>, x: &[S], h: &[S]) -> Vec<S> {
    let hidden = w.hidden();
    let input = x.len();
    let gate = |wm: &Tensor<S>, um: &Tensor<S>, b: &Tensor<S>, hv: &[S]| {
        let xi = kernels::vecmat(x, wm.data(), input, hidden);
        let hi = kernels::vecmat(hv, um.data(), hidden, hidden);
        kernels::add(&kernels::add(&xi, &hi), b.data())
    };
    let r = kernels::sigmoid_vec(&gate(&w.w_reset, &w.u_reset, &w.b_reset, h));
    let z = kernels::sigmoid_vec(&gate(&w.w_update, &w.u_update, &w.b_update, h));
    let rh = kernels::mul(&r, h);
    let n = kernels::tanh_vec(&gate(&w.w_cand, &w.u_cand, &w.b_cand, &rh));
    let keep = kernels::affine(&z, -S::one(), S::one()); // 1 − z
    kernels::add(&kernels::mul(&keep, h), &kernels::mul(&z, &n))
}

fn check_ids<S: Scalar>(params: &ModelParams<S>, ids: &[TokenId]) -> Result<(), Seq2SeqError> {
    for &id in ids {
        if id as usize >= params.dims.vocab {
            return Err(Seq2SeqError::InvalidTokenId {
                id,
                vocab: params.dims.vocab,
            });
        }
    }
    Ok(())
}

/// Bi-directional encoding: h_i = concat(forward state i, backward state i).
pub fn encode<S: Scalar>(
    params: &ModelParams<S>,
    keyword_ids: &[TokenId],
) -> Result<Vec<Vec<S>>, Seq2SeqError> {
    if keyword_ids.is_empty() {
        return Err(Seq2SeqError::EmptyInput);
    }
    check_ids(params, keyword_ids)?;
    let n = keyword_ids.len();
    let d_h = params.dims.d_hidden;

    let mut fwd = Vec::with_capacity(n);
    let mut h = vec![S::zero(); d_h];
    for &id in keyword_ids {
        h = gru_cell(&params.enc_fwd, params.embedding_row(id)?, &h);
        fwd.push(h.clone());
    }
    let mut bwd = vec![Vec::new(); n];
    let mut hb = vec![S::zero(); d_h];
    for (i, &id) in keyword_ids.iter().enumerate().rev() {
        hb = gru_cell(&params.enc_bwd, params.embedding_row(id)?, &hb);
        bwd[i] = hb.clone();
    }

    Ok(fwd
        .into_iter()
        .zip(bwd)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect())
}

/// s_0 = tanh(W_init · mean(h_i)).
pub fn init_state<S: Scalar>(
    params: &ModelParams<S>,
    encoder_states: &[Vec<S>],
) -> Result<DecoderState<S>, Seq2SeqError> {
    if encoder_states.is_empty() {
        return Err(Seq2SeqError::EmptyInput);
    }
    let width = 2 * params.dims.d_hidden;
    let flat = stack(encoder_states);
    let ones = vec![S::one(); encoder_states.len()];
    let sums = kernels::vecmat(&ones, &flat, encoder_states.len(), width);
    let mean = kernels::affine(&sums, S::one() / S::from_f64(encoder_states.len() as f64), S::zero());
    let s0 = kernels::tanh_vec(&kernels::vecmat(
        &mean,
        params.w_init.data(),
        width,
        params.dims.d_state,
    ));
    Ok(DecoderState::new(s0))
}

pub(crate) fn stack<S: Scalar>(rows: &[Vec<S>]) -> Vec<S> {
    let mut flat = Vec::with_capacity(rows.len() * rows.first().map_or(0, Vec::len));
    for r in rows {
        flat.extend_from_slice(r);
    }
    flat
}

/// Attention weights α over the encoder states given the previous decoder
/// state: e_i = v·tanh(W_s·s + W_h·h_i), α = softmax(e).
pub fn attention_weights<S: Scalar>(
    params: &ModelParams<S>,
    s_prev: &DecoderState<S>,
    encoder_states: &[Vec<S>],
) -> Result<Vec<S>, Seq2SeqError> {
    if encoder_states.is_empty() {
        return Err(Seq2SeqError::EmptyInput);
    }
    if s_prev.s.len() != params.dims.d_state {
        return Err(Seq2SeqError::DimMismatch {
            what: "decoder state",
            found: s_prev.s.len(),
            expected: params.dims.d_state,
        });
    }
    let d_a = params.dims.d_attn;
    let width = 2 * params.dims.d_hidden;
    let s_proj = kernels::vecmat(&s_prev.s, params.attn_state.data(), params.dims.d_state, d_a);
    let mut scores = Vec::with_capacity(encoder_states.len());
    for h in encoder_states {
        let h_proj = kernels::vecmat(h, params.attn_encoder.data(), width, d_a);
        let t = kernels::tanh_vec(&kernels::add(&s_proj, &h_proj));
        scores.push(kernels::dot(params.attn_score.data(), &t));
    }
    Ok(kernels::softmax(&scores))
}

/// Context vector Σ α_i h_i.
pub fn attention_context<S: Scalar>(alpha: &[S], encoder_states: &[Vec<S>]) -> Vec<S> {
    let width = encoder_states.first().map_or(0, Vec::len);
    let flat = stack(encoder_states);
    kernels::vecmat(alpha, &flat, encoder_states.len(), width)
}

/// One decoder update: GRU over concat(E[y_prev], context) and state s_prev.
pub fn decoder_step<S: Scalar>(
    params: &ModelParams<S>,
    y_prev: TokenId,
    s_prev: &DecoderState<S>,
    context: &[S],
) -> Result<DecoderState<S>, Seq2SeqError> {
    if context.len() != 2 * params.dims.d_hidden {
        return Err(Seq2SeqError::DimMismatch {
            what: "context",
            found: context.len(),
            expected: 2 * params.dims.d_hidden,
        });
    }
    if s_prev.s.len() != params.dims.d_state {
        return Err(Seq2SeqError::DimMismatch {
            what: "decoder state",
            found: s_prev.s.len(),
            expected: params.dims.d_state,
        });
    }
    let mut input = params.embedding_row(y_prev)?.to_vec();
    input.extend_from_slice(context);
    Ok(DecoderState {
        s: gru_cell(&params.dec, &input, &s_prev.s),
        step: s_prev.step + 1,
    })
}

/// Pre-softmax output scores s_t·W over the vocabulary.
pub fn output_scores<S: Scalar>(params: &ModelParams<S>, state: &DecoderState<S>) -> Vec<S> {
    kernels::vecmat(
        &state.s,
        params.w_out.data(),
        params.dims.d_state,
        params.dims.vocab,
    )
}

/// Output distribution z_t = softmax(s_t·W) over the whole character set.
pub fn output_logits<S: Scalar>(params: &ModelParams<S>, state: &DecoderState<S>) -> Vec<S> {
    kernels::softmax(&output_scores(params, state))
}
