//! Statistical battery over surprisal records: initial/final binning,
//! paired permutation tests, Benjamini-Hochberg correction, the length
//! confound regression, positional KL profiles, mean curves and the
//! terminal-symbol ablation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{PositionalUnigramModel, UnigramModel};
use crate::surprisal::{MeasureKind, SurprisalRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedWord {
    pub word_id: usize,
    pub initial_mean: f64,
    pub final_mean: f64,
}

impl BinnedWord {
    pub fn difference(&self) -> f64 {
        self.initial_mean - self.final_mean
    }
}

/// Halves of one word's surprisals, ordered by position. With `E` values,
/// ranks `1..=E/2` (floor) form the initial half and ranks above `ceil(E/2)`
/// the final half; an odd middle value is dropped. `None` when `E < 2`.
pub fn bin_sequence(surprisals: &[f64]) -> Option<(f64, f64)> {
    let e = surprisals.len();
    if e < 2 {
        return None;
    }
    let lo = e / 2;
    let hi = e.div_ceil(2);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&surprisals[..lo]), mean(&surprisals[hi..])))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub words: Vec<BinnedWord>,
    /// Words whose effective length was below 2.
    pub excluded: usize,
}

fn single_measure(records: &[SurprisalRecord]) -> Result<()> {
    let measures: BTreeSet<MeasureKind> = records.iter().map(|r| r.measure).collect();
    let langs: BTreeSet<&str> = records.iter().map(|r| r.language.as_str()).collect();
    if measures.len() > 1 || langs.len() > 1 {
        return Err(Error::InvalidArgument(
            "records must come from a single language and measure".into(),
        ));
    }
    Ok(())
}

fn group_by_word(records: &[SurprisalRecord]) -> BTreeMap<usize, Vec<&SurprisalRecord>> {
    let mut words: BTreeMap<usize, Vec<&SurprisalRecord>> = BTreeMap::new();
    for r in records {
        words.entry(r.word_id).or_default().push(r);
    }
    for recs in words.values_mut() {
        recs.sort_by_key(|r| r.position);
    }
    words
}

/// Bins each word of a single-language, single-measure record set.
pub fn bin_initial_final(records: &[SurprisalRecord]) -> Result<Binning> {
    single_measure(records)?;
    let mut out = Binning::default();
    for (word_id, recs) in group_by_word(records) {
        let s: Vec<f64> = recs.iter().map(|r| r.surprisal_bits).collect();
        match bin_sequence(&s) {
            Some((initial_mean, final_mean)) => out.words.push(BinnedWord {
                word_id,
                initial_mean,
                final_mean,
            }),
            None => out.excluded += 1,
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationScheme {
    /// Swap each word's (initial, final) pair with probability 1/2.
    #[default]
    Paired,
    /// Shuffle all half-means together and split into two groups.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectDirection {
    Initial,
    Final,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Mean of per-word initial minus final, in bits.
    pub statistic: f64,
    pub p_value: f64,
    pub n_words: usize,
    /// Sign of the statistic; see `bh_significant` for significance.
    pub direction: EffectDirection,
    pub bh_significant: bool,
}

fn direction_of(statistic: f64) -> EffectDirection {
    if statistic > 0.0 {
        EffectDirection::Initial
    } else if statistic < 0.0 {
        EffectDirection::Final
    } else {
        EffectDirection::None
    }
}

/// `|candidate| >= |observed|` up to accumulated rounding.
fn at_least_as_extreme(candidate: f64, observed: f64) -> bool {
    candidate.abs() >= observed.abs() - 1e-12 * (1.0 + observed.abs())
}

/// Two-sided permutation test of mean(initial - final) = 0 with
/// `p = (k + 1) / (n_perm + 1)`.
pub fn paired_permutation_test(
    words: &[BinnedWord],
    n_perm: usize,
    seed: u64,
    scheme: PermutationScheme,
) -> Result<TestResult> {
    if words.len() < 2 {
        return Err(Error::InsufficientData {
            what: "binned words",
            need: 2,
            got: words.len(),
        });
    }
    let n = words.len();
    let diffs: Vec<f64> = words.iter().map(BinnedWord::difference).collect();
    let statistic = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = 0usize;
    match scheme {
        PermutationScheme::Paired => {
            for _ in 0..n_perm {
                let mut sum = 0.0;
                for chunk in diffs.chunks(64) {
                    let bits: u64 = rng.gen();
                    for (i, d) in chunk.iter().enumerate() {
                        sum += if bits >> i & 1 == 1 { -d } else { *d };
                    }
                }
                if at_least_as_extreme(sum / n as f64, statistic) {
                    k += 1;
                }
            }
        }
        PermutationScheme::Pooled => {
            let mut pool: Vec<f64> = words
                .iter()
                .flat_map(|w| [w.initial_mean, w.final_mean])
                .collect();
            for _ in 0..n_perm {
                pool.shuffle(&mut rng);
                let (a, b) = pool.split_at(n);
                let stat = (a.iter().sum::<f64>() - b.iter().sum::<f64>()) / n as f64;
                if at_least_as_extreme(stat, statistic) {
                    k += 1;
                }
            }
        }
    }
    Ok(TestResult {
        statistic,
        p_value: (k + 1) as f64 / (n_perm + 1) as f64,
        n_words: n,
        direction: direction_of(statistic),
        bh_significant: false,
    })
}

/// Benjamini-Hochberg step-up: rejects the `k` smallest p-values where `k`
/// is the largest rank with `p_(k) <= k * alpha / m`.
pub fn bh_correct(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if p_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(p) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidArgument(format!("p-value {p} outside (0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 / m as f64 * alpha)
        .unwrap_or(0);
    let mut reject = vec![false; m];
    for &i in &order[..cutoff] {
        reject[i] = true;
    }
    Ok(reject)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeRestriction {
    AllPositions,
    FirstTwoOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeResult {
    pub slope: f64,
    pub p_value: f64,
    pub n_points: usize,
    pub restriction: SlopeRestriction,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if points.is_empty() || sxx == 0.0 {
        return Err(Error::ConstantLength);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Regression of surprisal on word length (in surface segments), with a
/// permutation p-value from shuffling surprisals against lengths.
pub fn length_slope(
    records: &[SurprisalRecord],
    restriction: SlopeRestriction,
    n_perm: usize,
    seed: u64,
) -> Result<SlopeResult> {
    single_measure(records)?;
    let mut points = Vec::new();
    for recs in group_by_word(records).values() {
        let len = recs.iter().filter(|r| !r.is_terminal()).count() as f64;
        for r in recs {
            if restriction == SlopeRestriction::FirstTwoOnly && r.position > 2 {
                continue;
            }
            points.push((len, r.surprisal_bits));
        }
    }
    let slope = ols_slope(&points)?;
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let cx: Vec<f64> = points.iter().map(|p| p.0 - mx).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = 0usize;
    for _ in 0..n_perm {
        ys.shuffle(&mut rng);
        let s: f64 = cx.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
        if at_least_as_extreme(s, slope) {
            k += 1;
        }
    }
    Ok(SlopeResult {
        slope,
        p_value: (k + 1) as f64 / (n_perm + 1) as f64,
        n_points: points.len(),
        restriction,
    })
}

/// `KL(p || q)` in bits; `q` must be positive wherever `p` is.
pub fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).log2())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub position: usize,
    pub kl_bits: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlProfile {
    pub points: Vec<KlPoint>,
    pub argmax: usize,
}

/// KL between each position's unigram and the global unigram, keeping
/// positions that at least `min_coverage` of the words reach.
pub fn positional_kl(
    positional: &PositionalUnigramModel,
    global: &UnigramModel,
    min_coverage: f64,
) -> Result<KlProfile> {
    if positional.classes() != global.classes() {
        return Err(Error::Shape(format!(
            "positional model has {} classes, global {}",
            positional.classes(),
            global.classes()
        )));
    }
    let q = global.distribution();
    let mut points = Vec::new();
    for t in 1..=positional.max_position() {
        let coverage = positional.coverage(t);
        if coverage < min_coverage {
            continue;
        }
        let p = positional.distribution(t)?;
        points.push(KlPoint {
            position: t,
            kl_bits: kl_bits(&p, &q).max(0.0),
            coverage,
        });
    }
    let argmax = points
        .iter()
        .fold(None::<&KlPoint>, |best, p| match best {
            Some(b) if b.kl_bits >= p.kl_bits => Some(b),
            _ => Some(p),
        })
        .ok_or(Error::NoCoveredPosition(min_coverage))?
        .position;
    Ok(KlProfile { points, argmax })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub position: usize,
    pub mean_bits: f64,
    pub count: usize,
}

/// Mean surprisal per position index.
pub fn positional_mean_curve(records: &[SurprisalRecord]) -> Vec<CurvePoint> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.position).or_default();
        e.0 += r.surprisal_bits;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(position, (sum, count))| CurvePoint {
            position,
            mean_bits: sum / count as f64,
            count,
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["position", "mean_bits", "count"])?;
    for p in curve {
        w.write_record([
            p.position.to_string(),
            format!("{:.6}", p.mean_bits),
            p.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(initial - final) / initial * 100`.
pub fn diff_pct(initial: f64, final_: f64) -> f64 {
    (initial - final_) / initial * 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub language: String,
    pub measure: MeasureKind,
    pub terminals: bool,
    pub initial: f64,
    pub final_: f64,
    pub diff_pct: f64,
    pub n_words: usize,
}

fn half_means(binning: &Binning) -> Result<(f64, f64)> {
    if binning.words.is_empty() {
        return Err(Error::EmptySelection);
    }
    let n = binning.words.len() as f64;
    let i = binning.words.iter().map(|w| w.initial_mean).sum::<f64>() / n;
    let f = binning.words.iter().map(|w| w.final_mean).sum::<f64>() / n;
    Ok((i, f))
}

type WordSets<'a> = BTreeMap<(&'a str, MeasureKind), BTreeSet<usize>>;

fn word_sets(records: &[SurprisalRecord]) -> WordSets<'_> {
    let mut out = WordSets::new();
    for r in records {
        out.entry((r.language.as_str(), r.measure))
            .or_default()
            .insert(r.word_id);
    }
    out
}

/// Initial and final means per language and measure, with and without
/// terminal records.
/// Both inputs must cover the same words for the same measures.
pub fn eow_ablation_report(
    with_terminals: &[SurprisalRecord],
    without_terminals: &[SurprisalRecord],
) -> Result<Vec<AblationRow>> {
    let (a, b) = (word_sets(with_terminals), word_sets(without_terminals));
    if a != b {
        return Err(Error::MismatchedSplits(
            "record sets cover different measures or words".into(),
        ));
    }
    let mut rows = Vec::new();
    for &(language, measure) in a.keys() {
        for (terminals, records) in [(true, with_terminals), (false, without_terminals)] {
            let subset: Vec<SurprisalRecord> = records
                .iter()
                .filter(|r| r.measure == measure && r.language == language)
                .cloned()
                .collect();
            let binning = bin_initial_final(&subset)?;
            let (initial, final_) = half_means(&binning)?;
            rows.push(AblationRow {
                language: language.to_owned(),
                measure,
                terminals,
                initial,
                final_,
                diff_pct: diff_pct(initial, final_),
                n_words: binning.words.len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["language", "measure", "terminals", "initial", "final", "diff_pct", "n_words"])?;
    for r in rows {
        w.write_record([
            r.language.clone(),
            r.measure.name().to_owned(),
            r.terminals.to_string(),
            format!("{:.6}", r.initial),
            format!("{:.6}", r.final_),
            format!("{:.3}", r.diff_pct),
            r.n_words.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the per-language report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageReport {
    pub language: String,
    pub measure: MeasureKind,
    pub mean_initial: f64,
    pub mean_final: f64,
    pub diff_pct: f64,
    pub p_value: f64,
    pub bh_significant: bool,
    pub direction: EffectDirection,
    pub n_words: usize,
    pub excluded_words: usize,
}

/// Independent stream seed for one language, derived from the master seed.
pub fn language_seed(master: u64, language: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(language.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub scheme: PermutationScheme,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            permutations: 100_000,
            alpha: 0.01,
            seed: 0,
            scheme: PermutationScheme::Paired,
        }
    }
}

/// Initial-vs-final tests for one measure across languages, BH-corrected
/// across the languages. Output is sorted by language tag.
pub fn initial_final_reports(records: &[SurprisalRecord], config: &TestConfig) -> Result<Vec<LanguageReport>> {
    let mut by_lang: BTreeMap<&str, Vec<SurprisalRecord>> = BTreeMap::new();
    for r in records {
        by_lang.entry(r.language.as_str()).or_default().push(r.clone());
    }
    let mut reports = Vec::new();
    for (lang, recs) in by_lang {
        let binning = bin_initial_final(&recs)?;
        let (mean_initial, mean_final) = half_means(&binning)?;
        let test = paired_permutation_test(
            &binning.words,
            config.permutations,
            language_seed(config.seed, lang),
            config.scheme,
        )?;
        reports.push(LanguageReport {
            language: lang.to_owned(),
            measure: recs[0].measure,
            mean_initial,
            mean_final,
            diff_pct: diff_pct(mean_initial, mean_final),
            p_value: test.p_value,
            bh_significant: false,
            direction: test.direction,
            n_words: test.n_words,
            excluded_words: binning.excluded,
        });
    }
    if reports.is_empty() {
        return Err(Error::EmptySelection);
    }
    let p: Vec<f64> = reports.iter().map(|r| r.p_value).collect();
    for (r, sig) in reports.iter_mut().zip(bh_correct(&p, config.alpha)?) {
        r.bh_significant = sig;
    }
    Ok(reports)
}

/// Counts of languages per measure whose difference is significant in each
/// direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub measure: MeasureKind,
    pub languages: usize,
    pub initial_significant: usize,
    pub final_significant: usize,
    pub not_significant: usize,
}

pub fn summarize(reports: &[LanguageReport]) -> Vec<SummaryRow> {
    let mut rows: BTreeMap<MeasureKind, SummaryRow> = BTreeMap::new();
    for r in reports {
        let row = rows.entry(r.measure).or_insert(SummaryRow {
            measure: r.measure,
            languages: 0,
            initial_significant: 0,
            final_significant: 0,
            not_significant: 0,
        });
        row.languages += 1;
        match (r.bh_significant, r.direction) {
            (true, EffectDirection::Initial) => row.initial_significant += 1,
            (true, EffectDirection::Final) => row.final_significant += 1,
            _ => row.not_significant += 1,
        }
    }
    rows.into_values().collect()
}
