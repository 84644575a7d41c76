use serde::{Deserialize, Serialize};

use super::{Hyperparameters, ModelFamily, TrainedModel};
use crate::error::{Error, Result};
use crate::lexicon::Alphabet;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON checkpoint. Parameters are stored as flat row-major
/// arrays with their shapes; floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub family: ModelFamily,
    pub alphabet_hash: String,
    pub seed: u64,
    pub split_seed: u64,
    pub hyperparameters: Hyperparameters,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(
        model: TrainedModel,
        alphabet: &Alphabet,
        hyperparameters: Hyperparameters,
        seed: u64,
        split_seed: u64,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            family: model.family(),
            alphabet_hash: alphabet.fingerprint(),
            seed,
            split_seed,
            hyperparameters,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(header.version));
        }
        Ok(serde_json::from_str(text)?)
    }

    /// Fails unless the checkpoint was trained on exactly this alphabet.
    pub fn verify(&self, alphabet: &Alphabet) -> Result<()> {
        let found = alphabet.fingerprint();
        if found != self.alphabet_hash {
            return Err(Error::AlphabetMismatch {
                expected: self.alphabet_hash.clone(),
                found,
            });
        }
        Ok(())
    }
}
