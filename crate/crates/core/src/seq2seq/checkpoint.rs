//! Checkpoint files: every parameter tensor by canonical name, plus the
//! vocabulary and a dims echo, in one container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor};
use crate::container::{ContainerError, TensorContainer};
use crate::corpus::Vocabulary;

use super::{ModelDims, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct VocabManifest {
    chars: String,
}

/// A trained model bundled with its vocabulary.
#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub params: ModelParams<S>,
    pub vocab: Vocabulary,
}

pub fn checkpoint_to_container<S: Scalar>(
    params: &ModelParams<S>,
    vocab: &Vocabulary,
) -> Result<TensorContainer, CheckpointError> {
    let mut c = TensorContainer::new();
    c.insert_json("model_config", &params.dims)?;
    c.insert_json(
        "vocab",
        &VocabManifest {
            chars: vocab.chars().iter().collect(),
        },
    )?;
    for (name, tensor) in params.param_names().iter().zip(params.params()) {
        c.insert_tensor(name, tensor.cast::<f32>())?;
    }
    Ok(c)
}

pub fn checkpoint_from_container<S: Scalar>(
    container: &TensorContainer,
) -> Result<Checkpoint<S>, CheckpointError> {
    let dims: ModelDims = container.json("model_config")?;
    let manifest: VocabManifest = container.json("vocab")?;
    let vocab = Vocabulary::from_chars(manifest.chars.chars());

    // Template gives the expected shapes; values are then overwritten.
    let mut params = ModelParams::<S>::init(dims, 0);
    for (name, slot) in params
        .param_names()
        .iter()
        .zip(params.params_mut().into_iter())
    {
        let stored: &Tensor<f32> = container.tensor(name)?;
        if stored.shape() != slot.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: slot.shape().to_vec(),
                found: stored.shape().to_vec(),
            });
        }
        *slot = stored.cast();
    }
    Ok(Checkpoint { params, vocab })
}

pub fn save_checkpoint<S: Scalar>(
    params: &ModelParams<S>,
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    checkpoint_to_container(params, vocab)?.save(path)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<S>, CheckpointError> {
    checkpoint_from_container(&TensorContainer::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Poem};

    fn fixture() -> (ModelParams<f32>, Vocabulary) {
        let vocab = build_vocabulary(&[Poem::from_lines("", &["红豆生南国"])]);
        let dims = ModelDims {
            vocab: vocab.size(),
            d_embed: 4,
            d_hidden: 3,
            d_state: 5,
            d_attn: 2,
        };
        (ModelParams::init(dims, 7), vocab)
    }

    #[test]
    fn round_trip_preserves_params_and_vocab() {
        let (params, vocab) = fixture();
        let c = checkpoint_to_container(&params, &vocab).unwrap();
        let bytes = c.to_bytes();
        let restored = checkpoint_from_container::<f32>(
            &TensorContainer::from_bytes(&bytes).unwrap(),
        )
        .unwrap();
        assert_eq!(restored.params, params);
        assert_eq!(restored.vocab, vocab);
        // and the file-level round trip is byte-identical
        let again = checkpoint_to_container(&restored.params, &restored.vocab).unwrap();
        assert_eq!(again.to_bytes(), bytes);
    }

    #[test]
    fn f64_params_survive_via_f32_storage() {
        let (params, vocab) = fixture();
        let p64: ModelParams<f64> = params.cast();
        let c = checkpoint_to_container(&p64, &vocab).unwrap();
        let restored = checkpoint_from_container::<f64>(&c).unwrap();
        // f32 storage round-trips f32-representable values exactly
        assert_eq!(restored.params.cast::<f32>(), params);
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let (params, vocab) = fixture();
        let mut c = TensorContainer::new();
        let mut dims = params.dims;
        dims.d_state = 11; // header claims a different geometry
        c.insert_json("model_config", &dims).unwrap();
        c.insert_json(
            "vocab",
            &VocabManifest {
                chars: vocab.chars().iter().collect(),
            },
        )
        .unwrap();
        for (name, tensor) in params.param_names().iter().zip(params.params()) {
            c.insert_tensor(name, tensor.cast::<f32>()).unwrap();
        }
        let err = checkpoint_from_container::<f32>(&c).unwrap_err();
        assert!(matches!(err, CheckpointError::ShapeMismatch { .. }));
    }

    #[test]
    fn missing_tensor_is_detected() {
        let (params, vocab) = fixture();
        let mut c = TensorContainer::new();
        c.insert_json("model_config", &params.dims).unwrap();
        c.insert_json(
            "vocab",
            &VocabManifest {
                chars: vocab.chars().iter().collect(),
            },
        )
        .unwrap();
        let err = checkpoint_from_container::<f32>(&c).unwrap_err();
        assert!(matches!(
            err,
            CheckpointError::Container(ContainerError::MissingEntry(_))
        ));
    }
}
