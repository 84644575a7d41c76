//! Count-based models: Laplace unigram, position-specific unigram and the
//! maximum-likelihood prefix trie.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Direction;
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, Word};

/// Laplace-smoothed unigram over `classes` symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnigramModel {
    counts: Vec<u64>,
    total: u64,
}

impl UnigramModel {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    /// Counts every surface segment and, with `include_terminal`, one
    /// end-of-word per word (class id `n`).
    pub fn fit(lexicon: &Lexicon, include_terminal: bool) -> Self {
        let n = lexicon.alphabet().surface_len();
        let mut counts = vec![0; n + usize::from(include_terminal)];
        for w in lexicon.words() {
            for &id in w.ids() {
                counts[id as usize] += 1;
            }
            if include_terminal {
                counts[n] += 1;
            }
        }
        Self::from_counts(counts)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn prob(&self, symbol: u32) -> Result<f64> {
        let c = self
            .counts
            .get(symbol as usize)
            .ok_or(Error::SymbolOutOfRange(symbol as usize))?;
        Ok((*c as f64 + 1.0) / (self.total as f64 + self.classes() as f64))
    }

    pub fn distribution(&self) -> Vec<f64> {
        let denom = self.total as f64 + self.classes() as f64;
        self.counts.iter().map(|&c| (c as f64 + 1.0) / denom).collect()
    }
}

/// Per-position Laplace-smoothed unigrams over surface symbols, with the
/// fraction of words long enough to have each position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalUnigramModel {
    classes: usize,
    n_words: u64,
    counts: Vec<Vec<u64>>,
}

impl PositionalUnigramModel {
    pub fn fit(lexicon: &Lexicon) -> Self {
        let classes = lexicon.alphabet().surface_len();
        let max_len = lexicon.words().iter().map(Word::len).max().unwrap_or(0);
        let mut counts = vec![vec![0; classes]; max_len];
        for w in lexicon.words() {
            for (i, &id) in w.ids().iter().enumerate() {
                counts[i][id as usize] += 1;
            }
        }
        Self {
            classes,
            n_words: lexicon.len() as u64,
            counts,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn max_position(&self) -> usize {
        self.counts.len()
    }

    /// Number of words that have position `t` (1-based).
    pub fn support(&self, t: usize) -> u64 {
        self.counts
            .get(t.wrapping_sub(1))
            .map_or(0, |c| c.iter().sum())
    }

    pub fn coverage(&self, t: usize) -> f64 {
        if self.n_words == 0 {
            0.0
        } else {
            self.support(t) as f64 / self.n_words as f64
        }
    }

    pub fn distribution(&self, t: usize) -> Result<Vec<f64>> {
        let row = self
            .counts
            .get(t.wrapping_sub(1))
            .ok_or(Error::PositionOutOfRange {
                position: t,
                length: self.counts.len(),
            })?;
        let denom = row.iter().sum::<u64>() as f64 + self.classes as f64;
        Ok(row.iter().map(|&c| (c as f64 + 1.0) / denom).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrieNode {
    count: u64,
    children: BTreeMap<u32, usize>,
}

/// Maximum-likelihood prefix tree rooted at the beginning-of-word symbol.
/// Every word path ends in an end-of-word child, so the probabilities of
/// the training types sum to one and every other string gets zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrieModel {
    direction: Direction,
    terminal: u32,
    nodes: Vec<TrieNode>,
}

impl TrieModel {
    pub fn fit(lexicon: &Lexicon, direction: Direction) -> Self {
        let terminal = lexicon.alphabet().eow_id();
        let mut trie = Self {
            direction,
            terminal,
            nodes: vec![TrieNode {
                count: 0,
                children: BTreeMap::new(),
            }],
        };
        for w in lexicon.words() {
            let ids = direction.orient(w);
            trie.insert(ids.iter().copied().chain(std::iter::once(terminal)));
        }
        trie
    }

    fn insert(&mut self, path: impl Iterator<Item = u32>) {
        let mut node = 0;
        self.nodes[0].count += 1;
        for sym in path {
            let next = match self.nodes[node].children.get(&sym) {
                Some(&c) => c,
                None => {
                    self.nodes.push(TrieNode {
                        count: 0,
                        children: BTreeMap::new(),
                    });
                    let c = self.nodes.len() - 1;
                    self.nodes[node].children.insert(sym, c);
                    c
                }
            };
            self.nodes[next].count += 1;
            node = next;
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn terminal(&self) -> u32 {
        self.terminal
    }

    /// Number of training types (the root count).
    pub fn n_words(&self) -> u64 {
        self.nodes[0].count
    }

    fn walk(&self, prefix: &[u32]) -> Option<usize> {
        prefix
            .iter()
            .try_fold(0, |node, sym| self.nodes[node].children.get(sym).copied())
    }

    /// `count(prefix + symbol) / count(prefix)`; the prefix is in the
    /// model's reading direction and excludes the start symbol.
    pub fn prob(&self, prefix: &[u32], symbol: u32) -> Result<f64> {
        let node = self.walk(prefix).ok_or(Error::UnobservedPrefix)?;
        let n = &self.nodes[node];
        Ok(n.children
            .get(&symbol)
            .map_or(0.0, |&c| self.nodes[c].count as f64 / n.count as f64))
    }

    /// Probability of each target along the word in reading order: the
    /// segments then the terminal. Zero entries mark unseen continuations.
    pub fn step_probs(&self, word: &Word) -> Vec<f64> {
        let ids = self.direction.orient(word);
        let mut out = Vec::with_capacity(ids.len() + 1);
        let mut node = Some(0);
        for sym in ids.iter().copied().chain(std::iter::once(self.terminal)) {
            match node {
                Some(n) => {
                    let parent = &self.nodes[n];
                    match parent.children.get(&sym) {
                        Some(&c) => {
                            out.push(self.nodes[c].count as f64 / parent.count as f64);
                            node = Some(c);
                        }
                        None => {
                            out.push(0.0);
                            node = None;
                        }
                    }
                }
                None => out.push(0.0),
            }
        }
        out
    }

    pub fn word_prob(&self, word: &Word) -> f64 {
        self.step_probs(word).iter().product()
    }

    pub fn contains(&self, word: &Word) -> bool {
        self.word_prob(word) > 0.0
    }

    /// Plug-in conditional entropy (bits) of the symbol at depth `t`
    /// (1-based) given the `t - 1` preceding ones, weighting each prefix by
    /// its share of the training types. Prefixes that already ended
    /// contribute nothing.
    pub fn plugin_conditional_entropy(&self, t: usize) -> f64 {
        let n = self.n_words() as f64;
        let mut frontier = vec![0usize];
        for _ in 1..t {
            frontier = frontier
                .iter()
                .flat_map(|&i| {
                    self.nodes[i]
                        .children
                        .iter()
                        .filter(|(&sym, _)| sym != self.terminal)
                        .map(|(_, &c)| c)
                })
                .collect();
        }
        frontier
            .iter()
            .map(|&i| {
                let node = &self.nodes[i];
                let h: f64 = node
                    .children
                    .values()
                    .map(|&c| {
                        let p = self.nodes[c].count as f64 / node.count as f64;
                        -p * p.log2()
                    })
                    .sum();
                node.count as f64 / n * h
            })
            .sum()
    }

    /// Number of distinct prefixes of length `t - 1` (the conditioning
    /// contexts at depth `t`).
    pub fn prefixes_at_depth(&self, t: usize) -> usize {
        let mut frontier = vec![0usize];
        for _ in 1..t {
            frontier = frontier
                .iter()
                .flat_map(|&i| {
                    self.nodes[i]
                        .children
                        .iter()
                        .filter(|(&sym, _)| sym != self.terminal)
                        .map(|(_, &c)| c)
                })
                .collect();
        }
        frontier.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(words: &[&str]) -> Lexicon {
        let segmented: Vec<Vec<String>> = words
            .iter()
            .map(|w| w.chars().map(|c| c.to_string()).collect())
            .collect();
        Lexicon::from_segmented("t", &segmented).unwrap()
    }

    #[test]
    fn unigram_laplace() {
        let m = UnigramModel::from_counts(vec![3, 1]);
        assert!((m.prob(0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let s = -m.prob(0).unwrap().log2();
        assert!((s - 1.5f64.log2()).abs() < 1e-12 && (s - 0.585).abs() < 1e-3);

        let m = UnigramModel::from_counts(vec![3, 1, 0]);
        assert!((m.prob(2).unwrap() - 1.0 / 7.0).abs() < 1e-15);

        let m = UnigramModel::from_counts(vec![0; 4]);
        assert_eq!(m.prob(3).unwrap(), 0.25);
        assert_eq!(-m.prob(3).unwrap().log2(), 2.0);

        assert!(m.prob(4).is_err());
    }

    #[test]
    fn unigram_fit_counts_terminals() {
        let l = lex(&["ab", "b"]);
        let m = UnigramModel::fit(&l, true);
        // a:1 b:2 eow:2, total 5, classes 3
        assert_eq!(m.classes(), 3);
        assert!((m.prob(2).unwrap() - 3.0 / 8.0).abs() < 1e-15);
        let s: f64 = m.distribution().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn positional_counts_and_coverage() {
        let l = lex(&["ab", "ba", "abb", "a"]);
        let m = PositionalUnigramModel::fit(&l);
        assert_eq!(m.coverage(1), 1.0);
        assert_eq!(m.coverage(2), 0.75);
        assert_eq!(m.coverage(3), 0.25);
        assert_eq!(m.coverage(4), 0.0);
        // position 1: a:3 b:1 -> (4/6, 2/6)
        let d = m.distribution(1).unwrap();
        assert!((d[0] - 4.0 / 6.0).abs() < 1e-15);
        for t in 1..=3 {
            let s: f64 = m.distribution(t).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!(m.distribution(4).is_err());
    }

    #[test]
    fn trie_count_ratios() {
        let l = lex(&["ab", "ac"]);
        let (a, b, c, d) = (0, 1, 2, 3);
        let t = TrieModel::fit(&l, Direction::Forward);
        assert_eq!(t.prob(&[], a).unwrap(), 1.0);
        assert_eq!(t.prob(&[a], b).unwrap(), 0.5);
        let bits: Vec<f64> = t.step_probs(&l.words()[0]).iter().map(|p| -p.log2()).collect();
        assert_eq!(bits, vec![0.0, 1.0, 0.0]);
        let _ = c;
        assert_eq!(t.prob(&[a], d).unwrap(), 0.0);
        assert!(matches!(t.prob(&[b], a), Err(Error::UnobservedPrefix)));
    }

    #[test]
    fn trie_single_word_is_deterministic() {
        let l = lex(&["ab"]);
        let t = TrieModel::fit(&l, Direction::Forward);
        assert!(t.step_probs(&l.words()[0]).iter().all(|&p| p == 1.0));
    }

    #[test]
    fn trie_closed_lexicon() {
        let l = lex(&["abc", "ab", "ba", "bca", "c", "cab"]);
        for dir in [Direction::Forward, Direction::Backward] {
            let t = TrieModel::fit(&l, dir);
            let total: f64 = l.words().iter().map(|w| t.word_prob(w)).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let unseen = Word::new(vec![0, 0]).unwrap();
            assert_eq!(t.word_prob(&unseen), 0.0);
            assert!(!t.contains(&unseen));
        }
    }

    #[test]
    fn trie_node_counts_sum_to_children() {
        let l = lex(&["abc", "ab", "abd", "b", "bd"]);
        let t = TrieModel::fit(&l, Direction::Forward);
        assert_eq!(t.n_words(), 5);
        for node in &t.nodes {
            if !node.children.is_empty() {
                let s: u64 = node.children.values().map(|&c| t.nodes[c].count).sum();
                assert_eq!(s, node.count);
            }
        }
    }

    #[test]
    fn trie_plugin_entropy() {
        // depth 1: a,a,b,b -> 1 bit. depth 2 after a: {b, c} -> 1 bit,
        // after b: {a, eow}... words: ab ac ba b
        let l = lex(&["ab", "ac", "ba", "b"]);
        let t = TrieModel::fit(&l, Direction::Forward);
        assert!((t.plugin_conditional_entropy(1) - 1.0).abs() < 1e-12);
        assert!((t.plugin_conditional_entropy(2) - 1.0).abs() < 1e-12);
        assert_eq!(t.prefixes_at_depth(2), 2);
    }
}
