use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{dropout, Neural};
use super::{Direction, Hyperparameters};
use crate::error::{Error, Result};
use crate::lexicon::{Alphabet, Word};
use crate::numerics::{softmax, Graph, ParamSet, Tensor, Var};

/// Character-level LSTM language model reading left-to-right or
/// right-to-left. Inputs are `[BOW, w1..wL]` in reading order and targets
/// `[w1..wL, terminal]`; the initial hidden and cell states are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentLM {
    direction: Direction,
    surface: usize,
    embedding_dim: usize,
    hidden_dim: usize,
    layers: usize,
    dropout: f64,
    params: ParamSet,
}

/// One training sequence: input ids and target classes, equal length.
pub(crate) type Sequence = (Vec<u32>, Vec<u32>);

impl RecurrentLM {
    pub fn new<R: Rng>(alphabet: &Alphabet, direction: Direction, hp: &Hyperparameters, rng: &mut R) -> Self {
        let n = alphabet.surface_len();
        let (d, h, k) = (hp.embedding_dim, hp.hidden_dim, hp.recurrent_layers);
        let mut params = ParamSet::new();
        params.push("embedding", Tensor::uniform(&[alphabet.input_vocab(), d], 1.0, rng));
        for l in 0..k {
            let input = if l == 0 { d } else { h };
            params.push(
                format!("lstm{l}.wx"),
                Tensor::uniform(&[input, 4 * h], 1.0 / (input as f64).sqrt(), rng),
            );
            params.push(
                format!("lstm{l}.wh"),
                Tensor::uniform(&[h, 4 * h], 1.0 / (h as f64).sqrt(), rng),
            );
            let mut bias = Tensor::zeros(&[4 * h]);
            bias.data_mut()[h..2 * h].fill(1.0);
            params.push(format!("lstm{l}.b"), bias);
        }
        params.push("out.w", Tensor::uniform(&[h, n + 1], 1.0 / (h as f64).sqrt(), rng));
        params.push("out.b", Tensor::zeros(&[n + 1]));
        Self {
            direction,
            surface: n,
            embedding_dim: d,
            hidden_dim: h,
            layers: k,
            dropout: hp.dropout,
            params,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Output classes: surface symbols plus the terminal.
    pub fn classes(&self) -> usize {
        self.surface + 1
    }

    pub fn terminal_class(&self) -> usize {
        self.surface
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn output_weight_ids(&self) -> (usize, usize) {
        (1 + 3 * self.layers, 2 + 3 * self.layers)
    }

    fn bow(&self) -> u32 {
        self.surface as u32 + 1
    }

    pub(crate) fn sequence(&self, word: &Word) -> Sequence {
        let ids = self.direction.orient(word);
        let mut input = Vec::with_capacity(ids.len() + 1);
        input.push(self.bow());
        input.extend_from_slice(&ids);
        let mut target = ids;
        target.push(self.surface as u32);
        (input, target)
    }

    /// Logits per time step. `inputs` must be sorted by length, longest
    /// first; step `s` has one row per sequence longer than `s`, so padded
    /// positions are never computed.
    fn unroll(&self, g: &mut Graph, inputs: &[&[u32]], mut rng: Option<&mut ChaCha8Rng>) -> Vec<Var> {
        debug_assert!(inputs.windows(2).all(|w| w[0].len() >= w[1].len()));
        let hd = self.hidden_dim;
        let steps = inputs.first().map_or(0, |s| s.len());
        let emb = g.param(0);
        let (ow, ob) = self.output_weight_ids();
        let (ow, ob) = (g.param(ow), g.param(ob));
        let mut active = inputs.len();
        let mut h: Vec<Var> = (0..self.layers)
            .map(|_| g.input(Tensor::zeros(&[active, hd])))
            .collect();
        let mut c = h.clone();
        let mut logits = Vec::with_capacity(steps);
        for s in 0..steps {
            let now = inputs.iter().take_while(|seq| seq.len() > s).count();
            if now < active {
                let keep: Vec<usize> = (0..now).collect();
                for l in 0..self.layers {
                    h[l] = g.rows(h[l], keep.clone());
                    c[l] = g.rows(c[l], keep.clone());
                }
                active = now;
            }
            let idx = inputs[..active].iter().map(|seq| seq[s] as usize).collect();
            let mut x = g.rows(emb, idx);
            x = dropout(g, x, self.dropout, rng.as_deref_mut());
            for l in 0..self.layers {
                let wx = g.param(1 + 3 * l);
                let wh = g.param(2 + 3 * l);
                let bias = g.param(3 + 3 * l);
                let zx = g.matmul(x, wx);
                let zh = g.matmul(h[l], wh);
                let z = g.add(zx, zh);
                let z = g.add_row(z, bias);
                let i = g.cols(z, 0, hd);
                let i = g.sigmoid(i);
                let f = g.cols(z, hd, hd);
                let f = g.sigmoid(f);
                let cand = g.cols(z, 2 * hd, hd);
                let cand = g.tanh(cand);
                let o = g.cols(z, 3 * hd, hd);
                let o = g.sigmoid(o);
                let keep = g.mul(f, c[l]);
                let write = g.mul(i, cand);
                c[l] = g.add(keep, write);
                let tc = g.tanh(c[l]);
                h[l] = g.mul(o, tc);
                x = dropout(g, h[l], self.dropout, rng.as_deref_mut());
            }
            let y = g.matmul(x, ow);
            logits.push(g.add_row(y, ob));
        }
        logits
    }

    /// Summed nats over all targets of `words` and the number of targets.
    pub fn loss(&self, g: &mut Graph, words: &[Word], rng: Option<&mut ChaCha8Rng>) -> (Var, usize) {
        let seqs: Vec<Sequence> = words.iter().map(|w| self.sequence(w)).collect();
        self.sequence_loss(g, &seqs, rng)
    }

    fn sequence_loss(&self, g: &mut Graph, seqs: &[Sequence], rng: Option<&mut ChaCha8Rng>) -> (Var, usize) {
        let mut order: Vec<&Sequence> = seqs.iter().collect();
        order.sort_by_key(|(i, _)| std::cmp::Reverse(i.len()));
        let inputs: Vec<&[u32]> = order.iter().map(|(i, _)| i.as_slice()).collect();
        let logits = self.unroll(g, &inputs, rng);
        let mut total = None;
        let mut count = 0;
        for (s, lg) in logits.into_iter().enumerate() {
            let targets: Vec<Option<usize>> = order
                .iter()
                .take_while(|(_, t)| t.len() > s)
                .map(|(_, t)| Some(t[s] as usize))
                .collect();
            count += targets.len();
            let l = g.softmax_xent(lg, targets);
            total = Some(match total {
                Some(t) => g.add(t, l),
                None => l,
            });
        }
        (total.expect("non-empty batch"), count)
    }

    /// Predictive distributions over the `n + 1` classes for every target
    /// of `word` in reading order (`L + 1` of them).
    pub fn step_distributions(&self, word: &Word) -> Result<Vec<Vec<f64>>> {
        if word.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(self.batch_distributions(std::slice::from_ref(word)).pop().expect("one word"))
    }

    pub fn batch_distributions(&self, words: &[Word]) -> Vec<Vec<Vec<f64>>> {
        const CHUNK: usize = 256;
        let mut order: Vec<usize> = (0..words.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(words[i].len()));
        let mut out = vec![Vec::new(); words.len()];
        for chunk in order.chunks(CHUNK) {
            let seqs: Vec<Sequence> = chunk.iter().map(|&i| self.sequence(&words[i])).collect();
            let inputs: Vec<&[u32]> = seqs.iter().map(|(i, _)| i.as_slice()).collect();
            let mut g = Graph::new(&self.params);
            let logits = self.unroll(&mut g, &inputs, None);
            for (b, (&i, (input, _))) in chunk.iter().zip(&seqs).enumerate() {
                out[i] = logits[..input.len()]
                    .iter()
                    .map(|&lg| softmax(g.value(lg).row(b)))
                    .collect();
            }
        }
        out
    }
}

impl Neural for RecurrentLM {
    type Example = Sequence;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn examples(&self, words: &[Word]) -> Vec<Sequence> {
        words.iter().map(|w| self.sequence(w)).collect()
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[Sequence], rng: Option<&mut ChaCha8Rng>) -> (Var, usize) {
        self.sequence_loss(g, batch, rng)
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

    fn tiny(n: usize, direction: Direction, seed: u64) -> RecurrentLM {
        let hp = Hyperparameters {
            embedding_dim: 3,
            hidden_dim: 4,
            recurrent_layers: 2,
            dropout: 0.0,
            ..Hyperparameters::default()
        };
        RecurrentLM::new(&alphabet(n), direction, &hp, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn word(ids: &[u32]) -> Word {
        Word::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn distributions_normalize() {
        let m = tiny(4, Direction::Forward, 1);
        let d = m.step_distributions(&word(&[0, 1, 2])).unwrap();
        assert_eq!(d.len(), 4);
        for p in &d {
            assert_eq!(p.len(), 5);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_output_is_uniform() {
        let mut m = tiny(4, Direction::Backward, 2);
        let (w, b) = m.output_weight_ids();
        m.params_mut().get_mut(w).data_mut().fill(0.0);
        m.params_mut().get_mut(b).data_mut().fill(0.0);
        for p in m.step_distributions(&word(&[3, 1])).unwrap() {
            for x in p {
                assert!((-x.log2() - 5f64.log2()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batching_matches_single_words() {
        let m = tiny(4, Direction::Forward, 3);
        let words = vec![word(&[0, 1, 2, 3, 0]), word(&[2]), word(&[1, 1])];
        let batch = m.batch_distributions(&words);
        for (w, d) in words.iter().zip(&batch) {
            let single = m.step_distributions(w).unwrap();
            assert_eq!(single.len(), d.len());
            for (a, b) in single.iter().zip(d) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_reads_reversed_string() {
        let f = tiny(4, Direction::Forward, 4);
        let mut b = f.clone();
        b.direction = Direction::Backward;
        let w = word(&[0, 1, 3]);
        assert_eq!(
            f.step_distributions(&w.reversed()).unwrap(),
            b.step_distributions(&w).unwrap()
        );
        assert_eq!(b.sequence(&w), (vec![5, 3, 1, 0], vec![3, 1, 0, 4]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let words = vec![word(&[0, 1, 2]), word(&[2, 0]), word(&[1])];
        for seed in 0..3 {
            let m = tiny(3, Direction::Forward, seed);
            let err = gradient_check(m.params(), |g| m.loss(g, &words, None).0, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
