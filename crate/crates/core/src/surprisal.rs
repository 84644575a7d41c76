//! Per-segment surprisal records under the five measures.
//!
//! Positions are 1-based. Forward records with terminals run `1..=L+1`,
//! the last being the end-of-word prediction; backward records with
//! terminals run `0..=L`, position 0 being the beginning-of-word prediction
//! (the terminal of the reversed string). The unigram, position-specific
//! and cloze measures never score terminals.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, BOW_LABEL, EOW_LABEL};
use crate::models::{AttentionVariant, Direction, ModelFamily, TrainedModel};
use crate::numerics::cross_entropy_bits;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Forward,
    Backward,
    Unigram,
    PositionSpecific,
    Cloze,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 5] = [
        MeasureKind::Forward,
        MeasureKind::Backward,
        MeasureKind::Unigram,
        MeasureKind::PositionSpecific,
        MeasureKind::Cloze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Forward => "forward",
            MeasureKind::Backward => "backward",
            MeasureKind::Unigram => "unigram",
            MeasureKind::PositionSpecific => "position_specific",
            MeasureKind::Cloze => "cloze",
        }
    }

    /// Whether the measure ever scores a terminal symbol.
    pub fn has_terminals(self) -> bool {
        matches!(self, MeasureKind::Forward | MeasureKind::Backward)
    }

    /// The measure a model family computes.
    pub fn of_family(family: ModelFamily) -> Self {
        match family {
            ModelFamily::ForwardLstm | ModelFamily::Trie => MeasureKind::Forward,
            ModelFamily::BackwardLstm | ModelFamily::BackwardTrie => MeasureKind::Backward,
            ModelFamily::Unigram => MeasureKind::Unigram,
            ModelFamily::Position => MeasureKind::PositionSpecific,
            ModelFamily::Cloze => MeasureKind::Cloze,
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown measure {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EowPolicy {
    pub include_terminals: bool,
}

impl EowPolicy {
    pub const WITH_TERMINALS: EowPolicy = EowPolicy {
        include_terminals: true,
    };
    pub const WITHOUT_TERMINALS: EowPolicy = EowPolicy {
        include_terminals: false,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRecord {
    pub language: String,
    pub word_id: usize,
    pub position: usize,
    pub segment: String,
    pub measure: MeasureKind,
    pub surprisal_bits: f64,
}

impl SurprisalRecord {
    pub fn is_terminal(&self) -> bool {
        self.segment == EOW_LABEL || self.segment == BOW_LABEL
    }
}

fn mismatch(measure: MeasureKind, model: &TrainedModel) -> Error {
    Error::MeasureMismatch {
        measure: measure.to_string(),
        family: model.family().to_string(),
    }
}

/// Scores every word of `lexicon` (word ids are indices into
/// `lexicon.words()`). Trie models only score their own training types.
pub fn compute_surprisals(
    model: &TrainedModel,
    lexicon: &Lexicon,
    measure: MeasureKind,
    policy: EowPolicy,
) -> Result<Vec<SurprisalRecord>> {
    let words = lexicon.words();
    let alphabet = lexicon.alphabet();
    let n = alphabet.surface_len();
    let language = lexicon.language();
    let mut out = Vec::new();
    let mut push = |word_id: usize, position: usize, segment: &str, p_bits: f64| -> Result<()> {
        if !p_bits.is_finite() {
            return Err(Error::InfiniteSurprisal { word: word_id, position });
        }
        out.push(SurprisalRecord {
            language: language.to_owned(),
            word_id,
            position,
            segment: segment.to_owned(),
            measure,
            surprisal_bits: p_bits,
        });
        Ok(())
    };

    let check_classes = |classes: usize, expected: usize| {
        if classes != expected {
            Err(Error::Shape(format!(
                "model predicts {classes} classes, lexicon alphabet implies {expected}"
            )))
        } else {
            Ok(())
        }
    };

    match (measure, model) {
        (MeasureKind::Forward | MeasureKind::Backward, TrainedModel::Recurrent(m)) => {
            let dir = m.direction();
            if (measure == MeasureKind::Forward) != (dir == Direction::Forward) {
                return Err(mismatch(measure, model));
            }
            check_classes(m.classes(), n + 1)?;
            for (id, (w, dists)) in words.iter().zip(m.batch_distributions(words)).enumerate() {
                let steps = directional_steps(dir, w.len());
                let mut recs: Vec<(usize, u32, f64)> = steps
                    .into_iter()
                    .zip(&dists)
                    .map(|((pos, target), d)| {
                        let class = target.map_or(n as u32, |t| w.at(t));
                        (pos, class, cross_entropy_bits(d, class as usize))
                    })
                    .collect();
                recs.sort_by_key(|r| r.0);
                for (pos, class, bits) in recs {
                    let terminal = class as usize == n;
                    if terminal && !policy.include_terminals {
                        continue;
                    }
                    let seg = if terminal { terminal_label(dir) } else { alphabet.symbol(class) };
                    push(id, pos, seg, bits)?;
                }
            }
        }
        (MeasureKind::Forward | MeasureKind::Backward, TrainedModel::Trie(t)) => {
            let dir = t.direction();
            if (measure == MeasureKind::Forward) != (dir == Direction::Forward) {
                return Err(mismatch(measure, model));
            }
            if t.terminal() as usize != n {
                return Err(Error::Shape("trie terminal does not match alphabet".into()));
            }
            for (id, w) in words.iter().enumerate() {
                let probs = t.step_probs(w);
                if probs.contains(&0.0) {
                    return Err(Error::HeldOutTrie(id));
                }
                let mut recs: Vec<(usize, u32, f64)> = directional_steps(dir, w.len())
                    .into_iter()
                    .zip(probs)
                    .map(|((pos, target), p)| {
                        let class = target.map_or(n as u32, |t| w.at(t));
                        (pos, class, -p.log2())
                    })
                    .collect();
                recs.sort_by_key(|r| r.0);
                for (pos, class, bits) in recs {
                    let terminal = class as usize == n;
                    if terminal && !policy.include_terminals {
                        continue;
                    }
                    let seg = if terminal { terminal_label(dir) } else { alphabet.symbol(class) };
                    push(id, pos, seg, bits.max(0.0))?;
                }
            }
        }
        (MeasureKind::Unigram, TrainedModel::Unigram(u)) => {
            check_classes(u.classes(), n)?;
            let dist = u.distribution();
            for (id, w) in words.iter().enumerate() {
                for (i, &s) in w.ids().iter().enumerate() {
                    push(id, i + 1, alphabet.symbol(s), cross_entropy_bits(&dist, s as usize))?;
                }
            }
        }
        (MeasureKind::PositionSpecific, TrainedModel::Attention(m))
            if m.variant() == AttentionVariant::PositionOnly =>
        {
            check_classes(m.classes(), n)?;
            emit_masked(&mut push, words, &m.batch_distributions(words), alphabet)?;
        }
        (MeasureKind::Cloze, TrainedModel::Attention(m)) if m.variant() == AttentionVariant::Cloze => {
            check_classes(m.classes(), n)?;
            emit_masked(&mut push, words, &m.batch_distributions(words), alphabet)?;
        }
        _ => return Err(mismatch(measure, model)),
    }
    Ok(out)
}

fn emit_masked(
    push: &mut impl FnMut(usize, usize, &str, f64) -> Result<()>,
    words: &[crate::lexicon::Word],
    dists: &[Vec<Vec<f64>>],
    alphabet: &crate::lexicon::Alphabet,
) -> Result<()> {
    for (id, (w, d)) in words.iter().zip(dists).enumerate() {
        for (i, &s) in w.ids().iter().enumerate() {
            push(id, i + 1, alphabet.symbol(s), cross_entropy_bits(&d[i], s as usize))?;
        }
    }
    Ok(())
}

fn terminal_label(dir: Direction) -> &'static str {
    match dir {
        Direction::Forward => EOW_LABEL,
        Direction::Backward => BOW_LABEL,
    }
}

/// `(record position, 1-based target index or None for the terminal)` for
/// each prediction step in reading order.
fn directional_steps(dir: Direction, len: usize) -> Vec<(usize, Option<usize>)> {
    (0..=len)
        .map(|s| match (dir, s == len) {
            (Direction::Forward, false) => (s + 1, Some(s + 1)),
            (Direction::Forward, true) => (len + 1, None),
            (Direction::Backward, false) => (len - s, Some(len - s)),
            (Direction::Backward, true) => (0, None),
        })
        .collect()
}

/// Mean surprisal in bits over the records accepted by `filter`.
pub fn cross_entropy_estimate<F>(records: &[SurprisalRecord], filter: F) -> Result<f64>
where
    F: Fn(&SurprisalRecord) -> bool,
{
    let (sum, n) = records
        .iter()
        .filter(|r| filter(r))
        .fold((0.0, 0usize), |(s, n), r| (s + r.surprisal_bits, n + 1));
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(sum / n as f64)
}

pub const RECORDS_HEADER: [&str; 6] = [
    "language",
    "word_id",
    "position",
    "segment",
    "measure",
    "surprisal_bits",
];

pub fn write_records_csv<W: Write>(records: &[SurprisalRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record([
            r.language.as_str(),
            &r.word_id.to_string(),
            &r.position.to_string(),
            r.segment.as_str(),
            r.measure.name(),
            &format!("{:.6}", r.surprisal_bits),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<SurprisalRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RECORDS_HEADER) {
        return Err(Error::InvalidArgument(format!(
            "records header must be {}",
            RECORDS_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::InvalidArgument(format!("records row {}: bad {what}", i + 2));
        let surprisal_bits: f64 = row[5].parse().map_err(|_| bad("surprisal_bits"))?;
        if !surprisal_bits.is_finite() || surprisal_bits < 0.0 {
            return Err(bad("surprisal_bits"));
        }
        out.push(SurprisalRecord {
            language: row[0].to_owned(),
            word_id: row[1].parse().map_err(|_| bad("word_id"))?,
            position: row[2].parse().map_err(|_| bad("position"))?,
            segment: row[3].to_owned(),
            measure: row[4].parse().map_err(|_| bad("measure"))?,
            surprisal_bits,
        });
    }
    Ok(out)
}
