use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{dropout, Neural};
use super::Hyperparameters;
use crate::error::{Error, Result};
use crate::lexicon::{Alphabet, Word};
use crate::numerics::{softmax, Graph, ParamSet, SeqLayout, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionVariant {
    /// One position masked, the rest of the word visible.
    Cloze,
    /// Every segment masked: only position and length remain.
    PositionOnly,
}

/// Pre-norm transformer encoder over `[BOW, w1..wL, EOW]` with sinusoidal
/// positions, predicting masked segments over the surface symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedAttentionLM {
    variant: AttentionVariant,
    surface: usize,
    model_dim: usize,
    heads: usize,
    layers: usize,
    ff_dim: usize,
    dropout: f64,
    params: ParamSet,
}

/// A token sequence with masks already applied and the `(row, class)`
/// pairs to predict.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct MaskedExample {
    tokens: Vec<u32>,
    targets: Vec<(usize, u32)>,
}

const PER_LAYER: usize = 13;

impl MaskedAttentionLM {
    pub fn new<R: Rng>(alphabet: &Alphabet, variant: AttentionVariant, hp: &Hyperparameters, rng: &mut R) -> Self {
        let n = alphabet.surface_len();
        let (d, f) = (hp.model_dim, hp.ff_dim);
        let lin = |rows: usize, cols: usize, rng: &mut R| {
            Tensor::uniform(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
        };
        let mut params = ParamSet::new();
        params.push("embedding", Tensor::uniform(&[alphabet.input_vocab(), d], 1.0, rng));
        for l in 0..hp.attention_layers {
            params.push(format!("layer{l}.ln1.gain"), Tensor::filled(&[d], 1.0));
            params.push(format!("layer{l}.ln1.shift"), Tensor::zeros(&[d]));
            params.push(format!("layer{l}.wq"), lin(d, d, rng));
            params.push(format!("layer{l}.wk"), lin(d, d, rng));
            params.push(format!("layer{l}.wv"), lin(d, d, rng));
            params.push(format!("layer{l}.wo"), lin(d, d, rng));
            params.push(format!("layer{l}.bo"), Tensor::zeros(&[d]));
            params.push(format!("layer{l}.ln2.gain"), Tensor::filled(&[d], 1.0));
            params.push(format!("layer{l}.ln2.shift"), Tensor::zeros(&[d]));
            params.push(format!("layer{l}.ff1.w"), lin(d, f, rng));
            params.push(format!("layer{l}.ff1.b"), Tensor::zeros(&[f]));
            params.push(format!("layer{l}.ff2.w"), lin(f, d, rng));
            params.push(format!("layer{l}.ff2.b"), Tensor::zeros(&[d]));
        }
        params.push("final_ln.gain", Tensor::filled(&[d], 1.0));
        params.push("final_ln.shift", Tensor::zeros(&[d]));
        params.push("out.w", lin(d, n, rng));
        params.push("out.b", Tensor::zeros(&[n]));
        Self {
            variant,
            surface: n,
            model_dim: d,
            heads: hp.heads,
            layers: hp.attention_layers,
            ff_dim: f,
            dropout: hp.dropout,
            params,
        }
    }

    pub fn variant(&self) -> AttentionVariant {
        self.variant
    }

    pub fn classes(&self) -> usize {
        self.surface
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn eow(&self) -> u32 {
        self.surface as u32
    }

    fn bow(&self) -> u32 {
        self.surface as u32 + 1
    }

    fn mask(&self) -> u32 {
        self.surface as u32 + 2
    }

    fn frame(&self, ids: impl Iterator<Item = u32>) -> Vec<u32> {
        let mut tokens = vec![self.bow()];
        tokens.extend(ids);
        tokens.push(self.eow());
        tokens
    }

    fn cloze_example(&self, word: &Word, t: usize) -> MaskedExample {
        let mask = self.mask();
        let tokens = self.frame(
            word.ids()
                .iter()
                .enumerate()
                .map(|(i, &s)| if i + 1 == t { mask } else { s }),
        );
        MaskedExample {
            tokens,
            targets: vec![(t, word.at(t))],
        }
    }

    fn position_example(&self, word: &Word) -> MaskedExample {
        let tokens = self.frame(std::iter::repeat_n(self.mask(), word.len()));
        let targets = word.ids().iter().enumerate().map(|(i, &s)| (i + 1, s)).collect();
        MaskedExample { tokens, targets }
    }

    fn all_masked(&self, length: usize) -> MaskedExample {
        MaskedExample {
            tokens: self.frame(std::iter::repeat_n(self.mask(), length)),
            targets: (1..=length).map(|t| (t, 0)).collect(),
        }
    }

    pub(crate) fn word_examples(&self, word: &Word) -> Vec<MaskedExample> {
        match self.variant {
            AttentionVariant::Cloze => (1..=word.len()).map(|t| self.cloze_example(word, t)).collect(),
            AttentionVariant::PositionOnly => vec![self.position_example(word)],
        }
    }

    /// Final hidden states, `(seqs * seq_len) x model_dim`, and the padded
    /// sequence length.
    fn encode(&self, g: &mut Graph, batch: &[MaskedExample], mut rng: Option<&mut ChaCha8Rng>) -> (Var, usize) {
        let d = self.model_dim;
        let t = batch.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
        let mut idx = Vec::with_capacity(batch.len() * t);
        let mut pos = Tensor::zeros(&[batch.len() * t, d]);
        for (s, e) in batch.iter().enumerate() {
            for p in 0..t {
                idx.push(e.tokens.get(p).copied().unwrap_or(self.mask()) as usize);
                positional_encoding(p, pos.row_mut(s * t + p));
            }
        }
        let layout = SeqLayout {
            seqs: batch.len(),
            seq_len: t,
            lens: batch.iter().map(|e| e.tokens.len()).collect(),
        };
        let emb = g.param(0);
        let x = g.rows(emb, idx);
        let pos = g.input(pos);
        let x = g.add(x, pos);
        let mut x = dropout(g, x, self.dropout, rng.as_deref_mut());
        for l in 0..self.layers {
            let p = |i: usize| 1 + PER_LAYER * l + i;
            let (g1, b1) = (g.param(p(0)), g.param(p(1)));
            let a = g.layer_norm(x, g1, b1);
            let (wq, wk, wv) = (g.param(p(2)), g.param(p(3)), g.param(p(4)));
            let q = g.matmul(a, wq);
            let k = g.matmul(a, wk);
            let v = g.matmul(a, wv);
            let att = g.attention(q, k, v, layout.clone(), self.heads);
            let (wo, bo) = (g.param(p(5)), g.param(p(6)));
            let o = g.matmul(att, wo);
            let o = g.add_row(o, bo);
            let o = dropout(g, o, self.dropout, rng.as_deref_mut());
            x = g.add(x, o);

            let (g2, b2) = (g.param(p(7)), g.param(p(8)));
            let a = g.layer_norm(x, g2, b2);
            let (w1, c1, w2, c2) = (g.param(p(9)), g.param(p(10)), g.param(p(11)), g.param(p(12)));
            let f = g.matmul(a, w1);
            let f = g.add_row(f, c1);
            let f = g.relu(f);
            let f = g.matmul(f, w2);
            let f = g.add_row(f, c2);
            let f = dropout(g, f, self.dropout, rng.as_deref_mut());
            x = g.add(x, f);
        }
        let base = 1 + PER_LAYER * self.layers;
        let (gf, bf) = (g.param(base), g.param(base + 1));
        (g.layer_norm(x, gf, bf), t)
    }

    /// Logits for every target row of the batch, in batch order.
    fn target_logits(&self, g: &mut Graph, batch: &[MaskedExample], rng: Option<&mut ChaCha8Rng>) -> Var {
        let (h, t) = self.encode(g, batch, rng);
        let rows = batch
            .iter()
            .enumerate()
            .flat_map(|(s, e)| e.targets.iter().map(move |&(p, _)| s * t + p))
            .collect();
        let h = g.rows(h, rows);
        let base = 1 + PER_LAYER * self.layers;
        let (w, b) = (g.param(base + 2), g.param(base + 3));
        let y = g.matmul(h, w);
        g.add_row(y, b)
    }

    fn predict(&self, batch: &[MaskedExample]) -> Vec<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let logits = self.target_logits(&mut g, batch, None);
        let v = g.value(logits);
        (0..v.rows()).map(|i| softmax(v.row(i))).collect()
    }

    /// Summed nats over every masked target of `words` and the count.
    pub fn loss(&self, g: &mut Graph, words: &[Word], rng: Option<&mut ChaCha8Rng>) -> (Var, usize) {
        let batch: Vec<MaskedExample> = words.iter().flat_map(|w| self.word_examples(w)).collect();
        self.batch_loss(g, &batch, rng)
    }

    /// Distribution of segment `t` (1-based) given the rest of the word.
    pub fn cloze_distribution(&self, word: &Word, t: usize) -> Result<Vec<f64>> {
        if t == 0 || t > word.len() {
            return Err(Error::PositionOutOfRange {
                position: t,
                length: word.len(),
            });
        }
        Ok(self.predict(&[self.cloze_example(word, t)]).pop().expect("one row"))
    }

    /// Distribution of segment `t` given only `t` and the word length.
    pub fn position_only_distribution(&self, t: usize, length: usize) -> Result<Vec<f64>> {
        if t == 0 || t > length {
            return Err(Error::PositionOutOfRange { position: t, length });
        }
        let mut rows = self.predict(&[self.all_masked(length)]);
        Ok(rows.swap_remove(t - 1))
    }

    /// Per-position distributions for each word under this model's variant:
    /// `L` distributions per word, position 1 first.
    pub fn batch_distributions(&self, words: &[Word]) -> Vec<Vec<Vec<f64>>> {
        match self.variant {
            AttentionVariant::PositionOnly => {
                let mut by_length = std::collections::BTreeMap::new();
                for w in words {
                    by_length
                        .entry(w.len())
                        .or_insert_with(|| self.predict(&[self.all_masked(w.len())]));
                }
                words.iter().map(|w| by_length[&w.len()].clone()).collect()
            }
            AttentionVariant::Cloze => {
                const CHUNK: usize = 256;
                let examples: Vec<MaskedExample> = words.iter().flat_map(|w| self.word_examples(w)).collect();
                let mut rows = Vec::with_capacity(examples.len());
                for chunk in examples.chunks(CHUNK) {
                    rows.extend(self.predict(chunk));
                }
                let mut rows = rows.into_iter();
                words
                    .iter()
                    .map(|w| rows.by_ref().take(w.len()).collect())
                    .collect()
            }
        }
    }
}

fn positional_encoding(p: usize, row: &mut [f64]) {
    let d = row.len();
    for i in (0..d).step_by(2) {
        let angle = p as f64 / 10000f64.powf(i as f64 / d as f64);
        row[i] = angle.sin();
        if i + 1 < d {
            row[i + 1] = angle.cos();
        }
    }
}

impl Neural for MaskedAttentionLM {
    type Example = MaskedExample;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn examples(&self, words: &[Word]) -> Vec<MaskedExample> {
        words.iter().flat_map(|w| self.word_examples(w)).collect()
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[MaskedExample], rng: Option<&mut ChaCha8Rng>) -> (Var, usize) {
        let logits = self.target_logits(g, batch, rng);
        let targets: Vec<Option<usize>> = batch
            .iter()
            .flat_map(|e| e.targets.iter().map(|&(_, y)| Some(y as usize)))
            .collect();
        let count = targets.len();
        (g.softmax_xent(logits, targets), count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradient_check;
    use rand::SeedableRng;

    fn alphabet(n: usize) -> Alphabet {
        Alphabet::new((0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect()).unwrap()
    }

    fn tiny(variant: AttentionVariant, seed: u64) -> MaskedAttentionLM {
        let hp = Hyperparameters {
            model_dim: 4,
            heads: 2,
            attention_layers: 2,
            ff_dim: 6,
            dropout: 0.0,
            ..Hyperparameters::default()
        };
        MaskedAttentionLM::new(&alphabet(3), variant, &hp, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn word(ids: &[u32]) -> Word {
        Word::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn cloze_normalizes_and_checks_range() {
        let m = tiny(AttentionVariant::Cloze, 1);
        let w = word(&[0, 1, 2, 1]);
        for t in 1..=4 {
            let p = m.cloze_distribution(&w, t).unwrap();
            assert_eq!(p.len(), 3);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(m.cloze_distribution(&w, 0).is_err());
        assert!(m.cloze_distribution(&w, 5).is_err());
    }

    #[test]
    fn cloze_hides_masked_symbol() {
        let m = tiny(AttentionVariant::Cloze, 2);
        let a = m.cloze_distribution(&word(&[0, 1, 2]), 2).unwrap();
        let b = m.cloze_distribution(&word(&[0, 2, 2]), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cloze_is_order_sensitive() {
        let m = tiny(AttentionVariant::Cloze, 3);
        let a = m.cloze_distribution(&word(&[0, 1, 2, 1]), 4).unwrap();
        let b = m.cloze_distribution(&word(&[2, 1, 0, 1]), 4).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn position_only_depends_on_position_and_length() {
        let m = tiny(AttentionVariant::PositionOnly, 4);
        let words = vec![word(&[0, 1, 2]), word(&[2, 2, 2]), word(&[1])];
        let d = m.batch_distributions(&words);
        assert_eq!(d[0], d[1]);
        assert_eq!(d[0][1], m.position_only_distribution(2, 3).unwrap());
        assert_eq!(d[2].len(), 1);
        assert!((d[2][0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.position_only_distribution(4, 3).is_err());
    }

    #[test]
    fn cloze_batching_matches_single_queries() {
        let m = tiny(AttentionVariant::Cloze, 5);
        let words = vec![word(&[0, 1, 2, 1, 0]), word(&[2]), word(&[1, 0])];
        let d = m.batch_distributions(&words);
        for (w, dw) in words.iter().zip(&d) {
            assert_eq!(dw.len(), w.len());
            for t in 1..=w.len() {
                let single = m.cloze_distribution(w, t).unwrap();
                for (x, y) in single.iter().zip(&dw[t - 1]) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let words = vec![word(&[0, 1, 2]), word(&[2, 0])];
        for variant in [AttentionVariant::Cloze, AttentionVariant::PositionOnly] {
            let m = tiny(variant, 6);
            let err = gradient_check(m.params(), |g| m.loss(g, &words, None).0, 1e-5);
            assert!(err < 1e-4, "{variant:?}: {err}");
        }
    }
}
