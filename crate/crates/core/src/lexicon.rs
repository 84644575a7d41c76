//! Wordlists, alphabets and train/dev/test splits.
//!
//! A [`Lexicon`] is a set of word *types* over an [`Alphabet`]. Surface
//! symbols get ids `0..n`; the specials follow them: end-of-word is `n`,
//! beginning-of-word `n + 1`, mask `n + 2`. Model output layers use the
//! first `n + 1` ids, so the terminal class always sits right after the
//! surface symbols.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;
use unicode_script::{Script, UnicodeScript};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

pub const EOW_LABEL: &str = "<eow>";
pub const BOW_LABEL: &str = "<bow>";
pub const MASK_LABEL: &str = "<mask>";

const RESERVED: [&str; 3] = [EOW_LABEL, BOW_LABEL, MASK_LABEL];

/// Minimum number of types [`split`] accepts.
pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Alphabet {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, s) in symbols.iter().enumerate() {
            if RESERVED.contains(&s.as_str()) {
                return Err(Error::ReservedSymbol(s.clone()));
            }
            if index.insert(s.clone(), id as u32).is_some() {
                return Err(Error::DuplicateSymbol(s.clone()));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Builds a sorted alphabet from whatever segments were observed.
    pub fn from_observed<'a, I>(segments: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut symbols: Vec<String> = segments
            .into_iter()
            .collect::<HashSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect();
        symbols.sort();
        Self::new(symbols)
    }

    /// Number of surface symbols, excluding all specials.
    pub fn surface_len(&self) -> usize {
        self.symbols.len()
    }

    /// `|Σ|` counting end-of-word as a symbol.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn eow_id(&self) -> u32 {
        self.symbols.len() as u32
    }

    pub fn bow_id(&self) -> u32 {
        self.symbols.len() as u32 + 1
    }

    pub fn mask_id(&self) -> u32 {
        self.symbols.len() as u32 + 2
    }

    /// Size of an embedding table covering surface symbols and all specials.
    pub fn input_vocab(&self) -> usize {
        self.symbols.len() + 3
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> &str {
        let n = self.symbols.len() as u32;
        match id {
            i if i < n => &self.symbols[i as usize],
            i if i == n => EOW_LABEL,
            i if i == n + 1 => BOW_LABEL,
            _ => MASK_LABEL,
        }
    }

    /// Stable hash of the symbol inventory, used to pair checkpoints with lexicons.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.symbols {
            hasher.update(s.as_bytes());
            hasher.update([0x1f]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A nonempty sequence of surface-symbol ids. Positions are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<u32>);

impl Word {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty word".into()));
        }
        Ok(Self(ids))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    /// Segment at 1-based position `t`.
    pub fn at(&self, t: usize) -> u32 {
        self.0[t - 1]
    }

    pub fn reversed(&self) -> Word {
        Word(self.0.iter().rev().copied().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LexiconFile", into = "LexiconFile")]
pub struct Lexicon {
    language: String,
    alphabet: Alphabet,
    words: Vec<Word>,
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    language: String,
    symbols: Vec<String>,
    words: Vec<Vec<u32>>,
}

impl TryFrom<LexiconFile> for Lexicon {
    type Error = Error;

    fn try_from(file: LexiconFile) -> Result<Self> {
        let alphabet = Alphabet::new(file.symbols)?;
        let words = file
            .words
            .into_iter()
            .map(Word::new)
            .collect::<Result<Vec<_>>>()?;
        Lexicon::new(file.language, alphabet, words)
    }
}

impl From<Lexicon> for LexiconFile {
    fn from(lex: Lexicon) -> Self {
        LexiconFile {
            language: lex.language,
            symbols: lex.alphabet.symbols,
            words: lex.words.into_iter().map(|w| w.0).collect(),
        }
    }
}

impl Lexicon {
    /// Validates ids and keeps the first occurrence of every repeated type.
    pub fn new(language: impl Into<String>, alphabet: Alphabet, words: Vec<Word>) -> Result<Self> {
        let n = alphabet.surface_len();
        let mut seen = HashSet::with_capacity(words.len());
        let mut kept = Vec::with_capacity(words.len());
        for w in words {
            if let Some(&bad) = w.ids().iter().find(|&&id| id as usize >= n) {
                return Err(Error::SymbolOutOfRange(bad as usize));
            }
            if seen.insert(w.clone()) {
                kept.push(w);
            }
        }
        Ok(Self {
            language: language.into(),
            alphabet,
            words: kept,
        })
    }

    /// Builds a lexicon (and its alphabet) from already segmented words.
    pub fn from_segmented<S: AsRef<str>>(language: &str, words: &[Vec<S>]) -> Result<Self> {
        let alphabet =
            Alphabet::from_observed(words.iter().flat_map(|w| w.iter().map(AsRef::as_ref)))?;
        let words = words
            .iter()
            .map(|w| {
                Word::new(
                    w.iter()
                        .map(|s| alphabet.id(s.as_ref()).expect("symbol observed above"))
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(language, alphabet, words)
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn render(&self, word: &Word) -> String {
        word.ids()
            .iter()
            .map(|&id| self.alphabet.symbol(id))
            .collect()
    }

    /// Same alphabet and language, different words.
    pub fn with_words(&self, words: Vec<Word>) -> Result<Self> {
        Self::new(self.language.clone(), self.alphabet.clone(), words)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentationMode {
    /// Extended grapheme clusters after NFC normalization.
    Graphemes,
    /// Segments separated by single spaces (IPA token lists).
    SpaceSeparated,
}

fn segment(text: &str, mode: SegmentationMode) -> Vec<String> {
    match mode {
        SegmentationMode::Graphemes => {
            let normalized: String = text.nfc().collect();
            normalized.graphemes(true).map(str::to_owned).collect()
        }
        SegmentationMode::SpaceSeparated => text
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect(),
    }
}

/// Parses one word per line, with an optional `word<TAB>frequency` column
/// that is ignored (lexicons hold types, not tokens).
pub fn parse_wordlist(text: &str, mode: SegmentationMode, language: &str) -> Result<Lexicon> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let form = line.split('\t').next().unwrap_or_default();
        let segs = segment(form.trim_end_matches('\r'), mode);
        if segs.is_empty() {
            return Err(Error::EmptyLine { line: i + 1 });
        }
        words.push(segs);
    }
    Lexicon::from_segmented(language, &words)
}

pub fn parse_script(name: &str) -> Result<Script> {
    Script::from_full_name(name)
        .or_else(|| Script::from_short_name(name))
        .ok_or_else(|| Error::UnknownScript(name.to_owned()))
}

fn is_letter(c: char) -> bool {
    c.is_alphabetic() || c.script() == Script::Inherited
}

/// Counts lowercased letter-run tokens whose characters all belong to
/// `script` (combining marks are allowed), and returns the `max_types` most
/// frequent with their counts. Ties are broken lexicographically.
pub fn extract_types(corpus: &str, script: Script, max_types: usize) -> Result<Vec<(String, u64)>> {
    if corpus.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut token = String::new();
    let mut flush = |token: &mut String| {
        if !token.is_empty() {
            let keep = token
                .chars()
                .all(|c| c.script() == script || c.script() == Script::Inherited)
                && token.chars().any(|c| c.script() == script);
            if keep {
                let lowered: String = token.to_lowercase().nfc().collect();
                *counts.entry(lowered).or_default() += 1;
            }
            token.clear();
        }
    };
    for c in corpus.chars() {
        if is_letter(c) {
            token.push(c);
        } else {
            flush(&mut token);
        }
    }
    flush(&mut token);

    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_types);
    if ranked.is_empty() {
        return Err(Error::NoTypes);
    }
    Ok(ranked)
}

/// Builds a grapheme-segmented lexicon from raw running text.
pub fn extract_lexicon(
    corpus: &str,
    script: Script,
    max_types: usize,
    language: &str,
) -> Result<Lexicon> {
    let types = extract_types(corpus, script, max_types)?;
    let words: Vec<Vec<String>> = types
        .iter()
        .map(|(t, _)| segment(t, SegmentationMode::Graphemes))
        .collect();
    Lexicon::from_segmented(language, &words)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLexicon {
    pub train: Lexicon,
    pub dev: Lexicon,
    pub test: Lexicon,
}

/// Train/dev/test sizes for `n` types: the partition closest (in squared
/// error) to 80/10/10 with dev and test each the floor or ceiling of a
/// tenth. Ties favour a larger train set, then a larger dev set.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = n as f64 / 10.0;
    let (lo, hi) = (n / 10, n.div_ceil(10));
    let sse = |train: usize, dev: usize, test: usize| {
        (train as f64 - 8.0 * tenth).powi(2)
            + (dev as f64 - tenth).powi(2)
            + (test as f64 - tenth).powi(2)
    };
    let mut best = (n - 2 * lo, lo, lo);
    for dev in [hi, lo] {
        for test in [lo, hi] {
            let train = n - dev - test;
            let (e, e_best) = (sse(train, dev, test), sse(best.0, best.1, best.2));
            if e < e_best - 1e-9 || ((e - e_best).abs() <= 1e-9 && (train, dev) > (best.0, best.1))
            {
                best = (train, dev, test);
            }
        }
    }
    best
}

pub fn split(lexicon: &Lexicon, seed: u64) -> Result<SplitLexicon> {
    let n = lexicon.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::LexiconTooSmall {
            got: n,
            need: MIN_SPLIT_SIZE,
        });
    }
    let (n_train, n_dev, _) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| {
        lexicon.with_words(idx.iter().map(|&i| lexicon.words[i].clone()).collect())
    };
    Ok(SplitLexicon {
        train: take(&order[..n_train])?,
        dev: take(&order[n_train..n_train + n_dev])?,
        test: take(&order[n_train + n_dev..])?,
    })
}
