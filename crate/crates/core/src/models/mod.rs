//! The model families: Laplace unigram, position-specific unigram,
//! prefix trie, forward/backward LSTM, and the cloze and position-only
//! masked transformers.
//!
//! Neural models predict over `n + 1` classes where class `n` is the
//! terminal (end-of-word going forward, beginning-of-word going backward);
//! the masked models predict over the `n` surface classes only.

mod attention;
mod checkpoint;
mod counts;
mod recurrent;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::lexicon::Word;
use crate::numerics::AdamConfig;

pub use attention::{AttentionVariant, MaskedAttentionLM};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use counts::{PositionalUnigramModel, TrieModel, UnigramModel};
pub use recurrent::RecurrentLM;
pub use train::{train, EpochLog, TrainedModel, TrainingLog};

/// Reading direction of a sequential model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// The word's segment ids in reading order.
    pub fn orient(self, word: &Word) -> Vec<u32> {
        match self {
            Direction::Forward => word.ids().to_vec(),
            Direction::Backward => word.ids().iter().rev().copied().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    ForwardLstm,
    BackwardLstm,
    Cloze,
    Position,
    Unigram,
    Trie,
    BackwardTrie,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 7] = [
        ModelFamily::ForwardLstm,
        ModelFamily::BackwardLstm,
        ModelFamily::Cloze,
        ModelFamily::Position,
        ModelFamily::Unigram,
        ModelFamily::Trie,
        ModelFamily::BackwardTrie,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::ForwardLstm => "forward-lstm",
            ModelFamily::BackwardLstm => "backward-lstm",
            ModelFamily::Cloze => "cloze",
            ModelFamily::Position => "position",
            ModelFamily::Unigram => "unigram",
            ModelFamily::Trie => "trie",
            ModelFamily::BackwardTrie => "backward-trie",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(
            self,
            ModelFamily::ForwardLstm
                | ModelFamily::BackwardLstm
                | ModelFamily::Cloze
                | ModelFamily::Position
        )
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                format!("unknown model {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub recurrent_layers: usize,
    pub dropout: f64,
    pub attention_layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: AdamConfig,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            hidden_dim: 256,
            recurrent_layers: 2,
            dropout: 0.3,
            attention_layers: 3,
            heads: 4,
            model_dim: 64,
            ff_dim: 256,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            optimizer: AdamConfig::default(),
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidArgument(m.to_owned()));
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return bad("layer widths must be positive");
        }
        if self.recurrent_layers == 0 || self.attention_layers == 0 {
            return bad("layer counts must be positive");
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad("model_dim must be a positive multiple of heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}
