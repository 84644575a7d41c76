use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AttentionVariant, Direction, Hyperparameters, MaskedAttentionLM, ModelFamily, RecurrentLM,
    TrieModel, UnigramModel,
};
use crate::error::{Error, Result};
use crate::lexicon::{SplitLexicon, Word};
use crate::numerics::{Graph, OptimizerState, ParamSet, Tensor, Var};

/// A model ready for surprisal computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainedModel {
    Unigram(UnigramModel),
    Trie(TrieModel),
    Recurrent(RecurrentLM),
    Attention(MaskedAttentionLM),
}

impl TrainedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            TrainedModel::Unigram(_) => ModelFamily::Unigram,
            TrainedModel::Trie(t) => match t.direction() {
                Direction::Forward => ModelFamily::Trie,
                Direction::Backward => ModelFamily::BackwardTrie,
            },
            TrainedModel::Recurrent(m) => match m.direction() {
                Direction::Forward => ModelFamily::ForwardLstm,
                Direction::Backward => ModelFamily::BackwardLstm,
            },
            TrainedModel::Attention(m) => match m.variant() {
                AttentionVariant::Cloze => ModelFamily::Cloze,
                AttentionVariant::PositionOnly => ModelFamily::Position,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nats: f64,
    pub dev_nats: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (`None` for count models).
    pub best_epoch: Option<usize>,
    pub best_dev_nats: Option<f64>,
}

/// Networks trainable by [`fit_words`].
pub(crate) trait Neural {
    type Example: Clone;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn examples(&self, words: &[Word]) -> Vec<Self::Example>;
    /// Summed nats over the batch's targets and the number of targets.
    fn batch_loss(&self, g: &mut Graph, batch: &[Self::Example], rng: Option<&mut ChaCha8Rng>) -> (Var, usize);
}

/// Inverted dropout; identity at inference (`rng` is `None`) or rate 0.
pub(crate) fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let shape = g.value(x).shape().to_vec();
            let keep = 1.0 - rate;
            let mut mask = Tensor::zeros(&shape);
            for m in mask.data_mut() {
                if rng.gen::<f64>() < keep {
                    *m = 1.0 / keep;
                }
            }
            g.mul_const(x, mask)
        }
        _ => x,
    }
}

const EVAL_BATCH: usize = 256;

/// Mean nats per target over `examples`, without dropout.
fn evaluate<M: Neural>(model: &M, examples: &[M::Example]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for chunk in examples.chunks(EVAL_BATCH) {
        let mut g = Graph::new(model.params());
        let (loss, n) = model.batch_loss(&mut g, chunk, None);
        total += g.value(loss).data()[0];
        count += n;
    }
    total / count.max(1) as f64
}

/// Minibatch training with early stopping on dev loss; the parameters of
/// the best dev epoch are restored on return. Without dev words the train
/// loss drives early stopping.
pub(crate) fn fit_words<M: Neural>(
    model: &mut M,
    train: &[Word],
    dev: &[Word],
    hp: &Hyperparameters,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingLog> {
    hp.validate()?;
    let train_ex = model.examples(train);
    let dev_ex = model.examples(dev);
    if train_ex.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut opt = OptimizerState::new(model.params(), hp.optimizer);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ParamSet, usize)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    for epoch in 1..=hp.max_epochs {
        order.shuffle(rng);
        let mut train_total = 0.0;
        let mut train_count = 0;
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<M::Example> = chunk.iter().map(|&i| train_ex[i].clone()).collect();
            let grads = {
                let mut g = Graph::new(model.params());
                let (loss, n) = model.batch_loss(&mut g, &batch, Some(rng));
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                train_total += value;
                train_count += n;
                let mean = g.scale(loss, 1.0 / n as f64);
                g.backward(mean).params()
            };
            opt.step(model.params_mut(), &grads)?;
        }
        let train_nats = train_total / train_count as f64;
        let dev_nats = if dev_ex.is_empty() {
            train_nats
        } else {
            evaluate(model, &dev_ex)
        };
        if !dev_nats.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log.epochs.push(EpochLog {
            epoch,
            train_nats,
            dev_nats,
        });
        if best.as_ref().is_none_or(|(b, _, _)| dev_nats < *b) {
            best = Some((dev_nats, model.params().clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                break;
            }
        }
    }
    let (dev, params, epoch) = best.expect("at least one epoch");
    *model.params_mut() = params;
    log.best_epoch = Some(epoch);
    log.best_dev_nats = Some(dev);
    Ok(log)
}

/// Fits one model family on `split.train`, using `split.dev` for early
/// stopping. `seed` governs initialization, shuffling and dropout only.
pub fn train(
    family: ModelFamily,
    split: &SplitLexicon,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<(TrainedModel, TrainingLog)> {
    let lex = &split.train;
    let alphabet = lex.alphabet();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dev = split.dev.words();
    Ok(match family {
        ModelFamily::Unigram => (
            TrainedModel::Unigram(UnigramModel::fit(lex, false)),
            TrainingLog::default(),
        ),
        ModelFamily::Trie | ModelFamily::BackwardTrie => {
            let dir = if family == ModelFamily::Trie {
                Direction::Forward
            } else {
                Direction::Backward
            };
            (
                TrainedModel::Trie(TrieModel::fit(lex, dir)),
                TrainingLog::default(),
            )
        }
        ModelFamily::ForwardLstm | ModelFamily::BackwardLstm => {
            let dir = if family == ModelFamily::ForwardLstm {
                Direction::Forward
            } else {
                Direction::Backward
            };
            hp.validate()?;
            let mut m = RecurrentLM::new(alphabet, dir, hp, &mut rng);
            let log = fit_words(&mut m, lex.words(), dev, hp, &mut rng)?;
            (TrainedModel::Recurrent(m), log)
        }
        ModelFamily::Cloze | ModelFamily::Position => {
            let variant = if family == ModelFamily::Cloze {
                AttentionVariant::Cloze
            } else {
                AttentionVariant::PositionOnly
            };
            hp.validate()?;
            let mut m = MaskedAttentionLM::new(alphabet, variant, hp, &mut rng);
            let log = fit_words(&mut m, lex.words(), dev, hp, &mut rng)?;
            (TrainedModel::Attention(m), log)
        }
    })
}
