//! Synthetic languages with known information structure, the plug-in
//! trie bias experiment and the mutual-information symmetry check.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Alphabet, Lexicon, Word};
use crate::models::{Direction, TrieModel};
use crate::numerics::NATS_TO_BITS;

pub const HARMONY_CONSONANTS: [&str; 4] = ["p", "t", "k", "s"];
pub const HARMONY_VOWEL_CLASSES: [[&str; 2]; 2] = [["a", "o"], ["e", "i"]];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthDist {
    Fixed(usize),
    /// Uniform over `min..=max`.
    Uniform { min: usize, max: usize },
}

impl LengthDist {
    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            LengthDist::Fixed(n) => n,
            LengthDist::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }

    fn valid(&self) -> bool {
        match *self {
            LengthDist::Fixed(n) => n >= 1,
            LengthDist::Uniform { min, max } => min >= 1 && min <= max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Every segment uniform over the alphabet, independently.
    IidUniform { alphabet_size: usize, length: LengthDist },
    /// An iid first half followed by a copy of it.
    DoubledHalf { alphabet_size: usize, half_length: LengthDist },
    /// CV syllables over p/t/k/s with all vowels of a word drawn from one
    /// class, {a, o} or {e, i}. `initial_onsets`, when set, replaces the
    /// consonant inventory of the first syllable only.
    VowelHarmony {
        min_syllables: usize,
        max_syllables: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_onsets: Option<Vec<String>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    /// Number of draws; duplicates collapse into one type.
    pub n: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn iid(alphabet_size: usize, length: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::IidUniform {
                alphabet_size,
                length: LengthDist::Fixed(length),
            },
            n,
            seed,
        }
    }

    pub fn doubled(alphabet_size: usize, half_length: LengthDist, n: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::DoubledHalf {
                alphabet_size,
                half_length,
            },
            n,
            seed,
        }
    }

    pub fn harmony(n: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::VowelHarmony {
                min_syllables: 2,
                max_syllables: 4,
                initial_onsets: None,
            },
            n,
            seed,
        }
    }

    pub fn language(&self) -> &'static str {
        match self.kind {
            GeneratorKind::IidUniform { .. } => "iid",
            GeneratorKind::DoubledHalf { .. } => "doubled",
            GeneratorKind::VowelHarmony { .. } => "harmony",
        }
    }
}

/// Symbol names for an abstract alphabet: letters while they last.
fn abstract_symbols(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| {
            if size <= 26 {
                ((b'a' + i as u8) as char).to_string()
            } else {
                format!("s{i}")
            }
        })
        .collect()
}

pub fn generate(spec: &GeneratorSpec) -> Result<Lexicon> {
    if spec.n == 0 {
        return Err(Error::InvalidGenerator("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (alphabet, words) = match &spec.kind {
        GeneratorKind::IidUniform {
            alphabet_size,
            length,
        } => {
            let k = *alphabet_size;
            if k < 2 || !length.valid() {
                return Err(Error::InvalidGenerator(
                    "iid-uniform needs at least 2 symbols and positive lengths".into(),
                ));
            }
            let words = (0..spec.n)
                .map(|_| {
                    let l = length.sample(&mut rng);
                    (0..l).map(|_| rng.gen_range(0..k as u32)).collect()
                })
                .collect();
            (Alphabet::new(abstract_symbols(k))?, words)
        }
        GeneratorKind::DoubledHalf {
            alphabet_size,
            half_length,
        } => {
            let k = *alphabet_size;
            if k < 2 || !half_length.valid() {
                return Err(Error::InvalidGenerator(
                    "doubled-half needs at least 2 symbols and positive lengths".into(),
                ));
            }
            let words = (0..spec.n)
                .map(|_| {
                    let l = half_length.sample(&mut rng);
                    let half: Vec<u32> = (0..l).map(|_| rng.gen_range(0..k as u32)).collect();
                    doubled(&half)
                })
                .collect();
            (Alphabet::new(abstract_symbols(k))?, words)
        }
        GeneratorKind::VowelHarmony {
            min_syllables,
            max_syllables,
            initial_onsets,
        } => harmony_words(spec.n, *min_syllables, *max_syllables, initial_onsets.as_deref(), &mut rng)?,
    };
    let words = words.into_iter().map(Word::new).collect::<Result<Vec<_>>>()?;
    Lexicon::new(spec.language(), alphabet, words)
}

/// `half` followed by a copy of itself.
pub fn doubled<T: Clone>(half: &[T]) -> Vec<T> {
    let mut w = half.to_vec();
    w.extend_from_slice(half);
    w
}

fn harmony_words(
    n: usize,
    min_syl: usize,
    max_syl: usize,
    onsets: Option<&[String]>,
    rng: &mut ChaCha8Rng,
) -> Result<(Alphabet, Vec<Vec<u32>>)> {
    if min_syl < 1 || min_syl > max_syl {
        return Err(Error::InvalidGenerator("syllable range must be 1 <= min <= max".into()));
    }
    if onsets.is_some_and(|o| o.is_empty()) {
        return Err(Error::InvalidGenerator("initial onset inventory is empty".into()));
    }
    let mut symbols: Vec<String> = HARMONY_CONSONANTS.iter().map(|s| s.to_string()).collect();
    symbols.extend(HARMONY_VOWEL_CLASSES.iter().flatten().map(|s| s.to_string()));
    for o in onsets.unwrap_or_default() {
        if !symbols.contains(o) {
            symbols.push(o.clone());
        }
    }
    let alphabet = Alphabet::new(symbols)?;
    let id = |s: &str| alphabet.id(s).expect("inventory symbol");
    let consonants: Vec<u32> = HARMONY_CONSONANTS.iter().map(|s| id(s)).collect();
    let classes: Vec<Vec<u32>> = HARMONY_VOWEL_CLASSES
        .iter()
        .map(|c| c.iter().map(|s| id(s)).collect())
        .collect();
    let initial: Vec<u32> = match onsets {
        Some(o) => o.iter().map(|s| id(s)).collect(),
        None => consonants.clone(),
    };
    let words = (0..n)
        .map(|_| {
            let class = &classes[rng.gen_range(0..2)];
            let syllables = rng.gen_range(min_syl..=max_syl);
            let mut w = Vec::with_capacity(2 * syllables);
            for s in 0..syllables {
                let inv = if s == 0 { &initial } else { &consonants };
                w.push(*inv.choose(rng).expect("non-empty"));
                w.push(*class.choose(rng).expect("non-empty"));
            }
            w
        })
        .collect();
    Ok((alphabet, words))
}

pub fn is_harmony_vowel(segment: &str) -> bool {
    HARMONY_VOWEL_CLASSES.iter().flatten().any(|v| *v == segment)
}

/// First-order bias of the plug-in conditional entropy at depth `t` with
/// `n` samples, as `|Σ|^(t-1) (|Σ| - 1) log2(e) / n` bits.
pub fn analytic_bias(sigma: usize, t: usize, n: usize) -> f64 {
    (sigma as f64).powi(t as i32 - 1) * (sigma as f64 - 1.0) * NATS_TO_BITS / n as f64
}

/// Expected number of words sharing one prefix of length `t - 1`.
pub fn expected_prefix_count(sigma: usize, t: usize, n: usize) -> f64 {
    n as f64 / (sigma as f64).powi(t as i32 - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub depth: usize,
    pub true_bits: f64,
    pub plugin_bits: f64,
    pub analytic_bias_bits: f64,
    /// Mean number of words per observed conditioning prefix.
    pub prefix_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub alphabet_size: usize,
    /// Types the trie was fit on.
    pub n_types: usize,
    pub rows: Vec<BiasRow>,
}

fn iid_params(spec: &GeneratorSpec) -> Result<(usize, usize)> {
    match spec.kind {
        GeneratorKind::IidUniform {
            alphabet_size,
            length: LengthDist::Fixed(l),
        } => Ok((alphabet_size, l)),
        _ => Err(Error::InvalidGenerator(
            "the bias experiment needs an iid-uniform spec with a fixed length".into(),
        )),
    }
}

/// Plug-in trie conditional entropy per depth on one iid lexicon, against
/// the true `log2 |Σ|` and the first-order bias.
pub fn bias_experiment(spec: &GeneratorSpec, max_depth: usize) -> Result<BiasReport> {
    let (k, len) = iid_params(spec)?;
    if max_depth == 0 || max_depth > len {
        return Err(Error::InvalidArgument(format!(
            "max_depth must be in 1..={len}"
        )));
    }
    let lex = generate(spec)?;
    let trie = TrieModel::fit(&lex, Direction::Forward);
    let n = lex.len();
    let rows = (1..=max_depth)
        .map(|t| BiasRow {
            depth: t,
            true_bits: (k as f64).log2(),
            plugin_bits: trie.plugin_conditional_entropy(t),
            analytic_bias_bits: analytic_bias(k, t, n),
            prefix_count: n as f64 / trie.prefixes_at_depth(t) as f64,
        })
        .collect();
    Ok(BiasReport {
        alphabet_size: k,
        n_types: n,
        rows,
    })
}

/// Row-wise mean of [`bias_experiment`] over seeds `spec.seed + i`.
pub fn bias_experiment_mean(spec: &GeneratorSpec, max_depth: usize, seeds: usize) -> Result<BiasReport> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let mut reports = Vec::with_capacity(seeds);
    for i in 0..seeds {
        let s = GeneratorSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec.clone()
        };
        reports.push(bias_experiment(&s, max_depth)?);
    }
    let m = seeds as f64;
    let mut mean = reports[0].clone();
    mean.n_types = (reports.iter().map(|r| r.n_types).sum::<usize>() as f64 / m).round() as usize;
    for (d, row) in mean.rows.iter_mut().enumerate() {
        let avg = |f: fn(&BiasRow) -> f64| reports.iter().map(|r| f(&r.rows[d])).sum::<f64>() / m;
        row.plugin_bits = avg(|r| r.plugin_bits);
        row.analytic_bias_bits = avg(|r| r.analytic_bias_bits);
        row.prefix_count = avg(|r| r.prefix_count);
    }
    Ok(mean)
}

pub fn write_bias_csv<W: Write>(report: &BiasReport, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["depth", "true_bits", "plugin_bits", "analytic_bias_bits", "prefix_count"])?;
    for r in &report.rows {
        w.write_record([
            r.depth.to_string(),
            format!("{:.6}", r.true_bits),
            format!("{:.6}", r.plugin_bits),
            format!("{:.6}", r.analytic_bias_bits),
            format!("{:.3}", r.prefix_count),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const MIN_JOINT_OBSERVATIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// `H(W_j) - H(W_j | W_i)`.
    pub forward_bits: f64,
    /// `H(W_i) - H(W_i | W_j)`.
    pub backward_bits: f64,
    pub entropy_i_bits: f64,
    pub entropy_j_bits: f64,
    pub observations: usize,
}

fn entropy_bits<K>(counts: &BTreeMap<K, usize>, total: usize) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Plug-in mutual information between the segments at 1-based positions
/// `i` and `j`, over words long enough to have both.
pub fn pair_mutual_information(lexicon: &Lexicon, i: usize, j: usize) -> Result<MiEstimate> {
    if i == 0 || j == 0 || i == j {
        return Err(Error::InvalidArgument("positions must be distinct and 1-based".into()));
    }
    let mut joint: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut mi: BTreeMap<u32, usize> = BTreeMap::new();
    let mut mj: BTreeMap<u32, usize> = BTreeMap::new();
    let mut total = 0;
    for w in lexicon.words() {
        if w.len() >= i.max(j) {
            let (a, b) = (w.at(i), w.at(j));
            *joint.entry((a, b)).or_default() += 1;
            *mi.entry(a).or_default() += 1;
            *mj.entry(b).or_default() += 1;
            total += 1;
        }
    }
    if total < MIN_JOINT_OBSERVATIONS {
        return Err(Error::InsufficientData {
            what: "joint observations",
            need: MIN_JOINT_OBSERVATIONS,
            got: total,
        });
    }
    let h_joint = entropy_bits(&joint, total);
    let h_i = entropy_bits(&mi, total);
    let h_j = entropy_bits(&mj, total);
    let h_j_given_i = h_joint - h_i;
    let h_i_given_j = h_joint - h_j;
    Ok(MiEstimate {
        forward_bits: h_j - h_j_given_i,
        backward_bits: h_i - h_i_given_j,
        entropy_i_bits: h_i,
        entropy_j_bits: h_j,
        observations: total,
    })
}

/// `I(W_t; W_{t-1})` computed in both conditioning directions from the
/// same joint table.
pub fn mi_symmetry_check(lexicon: &Lexicon, t: usize) -> Result<(f64, f64)> {
    if t < 2 {
        return Err(Error::InvalidArgument("t must be at least 2".into()));
    }
    let e = pair_mutual_information(lexicon, t - 1, t)?;
    Ok((e.forward_bits, e.backward_bits))
}
