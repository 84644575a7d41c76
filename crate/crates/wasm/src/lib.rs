//! Browser bindings for the demo page in `web/`. Each entry point takes
//! numbers or text and returns JSON for the page to draw.

use std::fmt::Display;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use lexinfo::analysis::positional_kl;
use lexinfo::lexicon::{parse_wordlist, Lexicon, SegmentationMode};
use lexinfo::models::{Direction, PositionalUnigramModel, TrieModel, UnigramModel};
use lexinfo::synthlab::{bias_experiment_mean, generate, GeneratorKind, GeneratorSpec, LengthDist};
use lexinfo::{Error, Result};

const MIN_COVERAGE: f64 = 0.75;
// Keeps a stray input from freezing the tab.
const MAX_DRAWS: usize = 100_000;
const MAX_SEEDS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositionRow {
    pub position: usize,
    pub coverage: f64,
    /// KL from the global unigram to this position's unigram.
    pub kl_bits: f64,
    /// Entropy of this position's unigram.
    pub entropy_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Profile {
    pub language: String,
    pub n_types: usize,
    pub mean_length: f64,
    pub argmax_kl: usize,
    pub positions: Vec<PositionRow>,
    /// Plug-in trie conditional entropy by depth, reading left to right.
    pub forward_bits: Vec<f64>,
    /// The same reading right to left; depth 1 is the last segment.
    pub backward_bits: Vec<f64>,
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.log2()).sum::<f64>()
}

/// Positional statistics over the positions that at least three quarters
/// of the words reach.
pub fn profile(lex: &Lexicon) -> Result<Profile> {
    let pos = PositionalUnigramModel::fit(lex);
    let kl = positional_kl(&pos, &UnigramModel::fit(lex, false), MIN_COVERAGE)?;
    let positions = kl
        .points
        .iter()
        .map(|p| {
            Ok(PositionRow {
                position: p.position,
                coverage: p.coverage,
                kl_bits: p.kl_bits,
                entropy_bits: entropy_bits(&pos.distribution(p.position)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let depth = positions.iter().map(|p| p.position).max().unwrap_or(0);
    let by_depth = |dir| {
        let trie = TrieModel::fit(lex, dir);
        (1..=depth).map(|t| trie.plugin_conditional_entropy(t)).collect()
    };
    let total: usize = lex.words().iter().map(|w| w.len()).sum();
    Ok(Profile {
        language: lex.language().to_owned(),
        n_types: lex.len(),
        mean_length: total as f64 / lex.len() as f64,
        argmax_kl: kl.argmax,
        positions,
        forward_bits: by_depth(Direction::Forward),
        backward_bits: by_depth(Direction::Backward),
    })
}

fn check_size(n: usize, seeds: usize) -> Result<()> {
    if n > MAX_DRAWS || seeds > MAX_SEEDS {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_DRAWS} words and {MAX_SEEDS} seeds in the browser"
        )));
    }
    Ok(())
}

/// Mean plug-in entropy by depth over `seeds` iid lexicons, as JSON.
pub fn bias_curve_json(sigma: usize, length: usize, n: usize, seeds: usize, seed: u64) -> Result<String> {
    check_size(n, seeds)?;
    let report = bias_experiment_mean(&GeneratorSpec::iid(sigma, length, n, seed), length, seeds)?;
    Ok(serde_json::to_string(&report)?)
}

/// Profile of a generated lexicon. `kind` is `iid`, `doubled`, `harmony`
/// or `harmony-onsets` (harmony with a first-onset-only consonant set).
pub fn synthetic_profile_json(kind: &str, sigma: usize, n: usize, seed: u64) -> Result<String> {
    check_size(n, 1)?;
    let kind = match kind {
        "iid" => GeneratorKind::IidUniform {
            alphabet_size: sigma,
            length: LengthDist::Uniform { min: 3, max: 8 },
        },
        "doubled" => GeneratorKind::DoubledHalf {
            alphabet_size: sigma,
            half_length: LengthDist::Uniform { min: 2, max: 4 },
        },
        "harmony" | "harmony-onsets" => GeneratorKind::VowelHarmony {
            min_syllables: 2,
            max_syllables: 4,
            initial_onsets: (kind == "harmony-onsets")
                .then(|| ["b", "d", "g", "m"].map(String::from).to_vec()),
        },
        other => return Err(Error::InvalidGenerator(format!("unknown kind {other:?}"))),
    };
    let lex = generate(&GeneratorSpec { kind, n, seed })?;
    Ok(serde_json::to_string(&profile(&lex)?)?)
}

/// Profile of a pasted wordlist (one word per line).
pub fn wordlist_profile_json(text: &str, language: &str, space_separated: bool) -> Result<String> {
    let mode = if space_separated {
        SegmentationMode::SpaceSeparated
    } else {
        SegmentationMode::Graphemes
    };
    let lex = parse_wordlist(text.trim(), mode, language)?;
    Ok(serde_json::to_string(&profile(&lex)?)?)
}

fn js(e: impl Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn bias_curve(sigma: usize, length: usize, n: usize, seeds: usize, seed: u32) -> Result<String, JsError> {
    bias_curve_json(sigma, length, n, seeds, seed.into()).map_err(js)
}

#[wasm_bindgen]
pub fn synthetic_profile(kind: &str, sigma: usize, n: usize, seed: u32) -> Result<String, JsError> {
    synthetic_profile_json(kind, sigma, n, seed.into()).map_err(js)
}

#[wasm_bindgen]
pub fn wordlist_profile(text: &str, language: &str, space_separated: bool) -> Result<String, JsError> {
    wordlist_profile_json(text, language, space_separated).map_err(js)
}
