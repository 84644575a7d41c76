//! End-to-end acceptance checks, one test per criterion. Each prints a
//! `criterion N: PASS|FAIL` line with the measured quantities (visible with
//! `--nocapture`, and always on failure).
//!
//! Tests take a global lock so per-criterion timings are not distorted by
//! training running concurrently on other threads. Models trained for one
//! criterion are cached for the others.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lexinfo::analysis::{
    bh_correct, bin_initial_final, eow_ablation_report, length_slope, paired_permutation_test,
    positional_kl, BinnedWord, EffectDirection, PermutationScheme, SlopeRestriction,
};
use lexinfo::lexicon::{parse_wordlist, split, Lexicon, SegmentationMode, SplitLexicon, Word};
use lexinfo::models::{
    train, AttentionVariant, Direction, Hyperparameters, MaskedAttentionLM, ModelFamily,
    PositionalUnigramModel, RecurrentLM, TrainedModel, UnigramModel,
};
use lexinfo::numerics::{gradient_check, AdamConfig};
use lexinfo::surprisal::{compute_surprisals, EowPolicy, MeasureKind, SurprisalRecord};
use lexinfo::synthlab::{
    analytic_bias, bias_experiment_mean, expected_prefix_count, generate, is_harmony_vowel,
    GeneratorKind, GeneratorSpec, LengthDist,
};

const SPLIT_SEED: u64 = 7;
const TRAIN_SEED: u64 = 11;
const PERMUTATIONS: usize = 100_000;
/// Central-difference step. Smaller steps let rounding dominate on
/// near-zero gradient entries.
const FD_STEP: f64 = 1e-4;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    // Straight to stderr so the verdict shows even when output is captured.
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} | {detail}");
    assert!(ok, "criterion {n} failed: {detail}");
}

/// Smaller than the library defaults so the suite fits a single core.
fn lstm_hp() -> Hyperparameters {
    Hyperparameters {
        embedding_dim: 32,
        hidden_dim: 128,
        recurrent_layers: 2,
        dropout: 0.2,
        batch_size: 64,
        max_epochs: 30,
        patience: 3,
        optimizer: AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        ..Hyperparameters::default()
    }
}

fn attention_hp() -> Hyperparameters {
    Hyperparameters {
        model_dim: 32,
        heads: 4,
        attention_layers: 2,
        ff_dim: 64,
        dropout: 0.1,
        batch_size: 64,
        max_epochs: 30,
        patience: 3,
        optimizer: AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        ..Hyperparameters::default()
    }
}

struct Dataset {
    split: SplitLexicon,
    models: Mutex<HashMap<ModelFamily, (&'static TrainedModel, Duration)>>,
}

impl Dataset {
    fn new(lexicon: Lexicon) -> Self {
        Self {
            split: split(&lexicon, SPLIT_SEED).unwrap(),
            models: Mutex::new(HashMap::new()),
        }
    }

    /// Trained model and the time its training took.
    fn model(&self, family: ModelFamily) -> (&'static TrainedModel, Duration) {
        let mut models = self.models.lock().unwrap();
        *models.entry(family).or_insert_with(|| {
            let hp = if matches!(family, ModelFamily::Cloze | ModelFamily::Position) {
                attention_hp()
            } else {
                lstm_hp()
            };
            let start = Instant::now();
            let (m, _) = train(family, &self.split, &hp, TRAIN_SEED).unwrap();
            (Box::leak(Box::new(m)), start.elapsed())
        })
    }

    fn records(&self, family: ModelFamily, measure: MeasureKind, policy: EowPolicy) -> Vec<SurprisalRecord> {
        compute_surprisals(self.model(family).0, &self.split.test, measure, policy).unwrap()
    }
}

fn bundled(lang: &str) -> Lexicon {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../data/{lang}.tsv"));
    let text = std::fs::read_to_string(path).unwrap();
    parse_wordlist(&text, SegmentationMode::Graphemes, lang).unwrap()
}

fn en() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| Dataset::new(bundled("en")))
}

fn ru() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| Dataset::new(bundled("ru")))
}

fn doubled() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| Dataset::new(generate(&GeneratorSpec::doubled(8, LengthDist::Fixed(4), 2500, 3)).unwrap()))
}

fn harmony() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| Dataset::new(generate(&GeneratorSpec::harmony(3000, 5)).unwrap()))
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn words(rng: &mut ChaCha8Rng, n_symbols: u32, count: usize) -> Vec<Word> {
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=4);
            Word::new((0..len).map(|_| rng.gen_range(0..n_symbols)).collect()).unwrap()
        })
        .collect()
}

#[test]
fn criterion_01_gradient_correctness() {
    let _g = serial();
    let start = Instant::now();
    let alphabet = |n: usize| {
        lexinfo::lexicon::Alphabet::new((0..n).map(|i| format!("s{i}")).collect()).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for i in 0..12 {
        let n = rng.gen_range(2..5);
        let hp = Hyperparameters {
            embedding_dim: rng.gen_range(2..5),
            hidden_dim: rng.gen_range(2..5),
            recurrent_layers: rng.gen_range(1..3),
            dropout: 0.0,
            ..Hyperparameters::default()
        };
        let dir = if i % 2 == 0 { Direction::Forward } else { Direction::Backward };
        let m = RecurrentLM::new(&alphabet(n), dir, &hp, &mut rng);
        let ws = words(&mut rng, n as u32, 3);
        worst = worst.max(gradient_check(m.params(), |g| m.loss(g, &ws, None).0, FD_STEP));
        instances += 1;
    }
    for i in 0..12 {
        let n = rng.gen_range(2..5);
        let heads = rng.gen_range(1..3);
        let hp = Hyperparameters {
            model_dim: 2 * heads,
            heads,
            attention_layers: rng.gen_range(1..3),
            ff_dim: rng.gen_range(2..5),
            dropout: 0.0,
            ..Hyperparameters::default()
        };
        let variant = if i % 2 == 0 {
            AttentionVariant::Cloze
        } else {
            AttentionVariant::PositionOnly
        };
        let m = MaskedAttentionLM::new(&alphabet(n), variant, &hp, &mut rng);
        let ws = words(&mut rng, n as u32, 2);
        worst = worst.max(gradient_check(m.params(), |g| m.loss(g, &ws, None).0, FD_STEP));
        instances += 1;
    }
    let elapsed = start.elapsed();
    report(
        1,
        worst < 1e-4 && instances >= 20 && elapsed < Duration::from_secs(60),
        &format!("{instances} instances, max relative error {worst:.2e}, {elapsed:.1?}"),
    );
}

#[test]
fn criterion_02_plugin_bias_reductio() {
    let _g = serial();
    let start = Instant::now();
    let (sigma, length, n, seeds) = (8, 6, 10_000, 20);
    let report_ = bias_experiment_mean(&GeneratorSpec::iid(sigma, length, n, 100), length, seeds).unwrap();
    let rows = &report_.rows;
    let depth1 = (rows[0].plugin_bits - 3.0).abs();
    let decreasing = rows[1..].windows(2).all(|w| w[1].plugin_bits < w[0].plugin_bits);
    let mut ratios = Vec::new();
    for r in rows {
        if expected_prefix_count(sigma, r.depth, n) >= 30.0 {
            let observed = r.true_bits - r.plugin_bits;
            let eq = analytic_bias(sigma, r.depth, report_.n_types);
            ratios.push((r.depth, observed / eq));
        }
    }
    let within = ratios.iter().all(|&(_, q)| (0.5..=2.0).contains(&q));
    let elapsed = start.elapsed();
    let curve: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.plugin_bits)).collect();
    let ratio_s: Vec<String> = ratios.iter().map(|(d, q)| format!("t{d}:{q:.3}")).collect();
    report(
        2,
        depth1 < 0.02 && decreasing && within && elapsed < Duration::from_secs(120),
        &format!(
            "plug-in by depth [{}], |depth1 - 3| = {depth1:.4}, strictly decreasing from t=2: {decreasing}, \
             observed/analytic bias [{}], {elapsed:.1?}",
            curve.join(", "),
            ratio_s.join(", ")
        ),
    );
}

fn binned(records: &[SurprisalRecord]) -> Vec<BinnedWord> {
    bin_initial_final(records).unwrap().words
}

#[test]
fn criterion_03_directional_reversal() {
    let _g = serial();
    let start = Instant::now();
    let d = en();
    let (_, t_fwd) = d.model(ModelFamily::ForwardLstm);
    let (_, t_bwd) = d.model(ModelFamily::BackwardLstm);
    let fwd = binned(&d.records(ModelFamily::ForwardLstm, MeasureKind::Forward, EowPolicy::WITH_TERMINALS));
    let bwd = binned(&d.records(ModelFamily::BackwardLstm, MeasureKind::Backward, EowPolicy::WITH_TERMINALS));
    let tf = paired_permutation_test(&fwd, PERMUTATIONS, 1, PermutationScheme::Paired).unwrap();
    let tb = paired_permutation_test(&bwd, PERMUTATIONS, 2, PermutationScheme::Paired).unwrap();
    let fwd_ok = tf.direction == EffectDirection::Initial && tf.p_value < 0.01;
    let bwd_ok = tb.statistic <= 0.0 || tb.p_value >= 0.01;
    // Training may have happened in an earlier criterion; count it here.
    let elapsed = start.elapsed().max(t_fwd + t_bwd);
    report(
        3,
        fwd_ok && bwd_ok && elapsed < Duration::from_secs(15 * 60),
        &format!(
            "forward initial-final {:+.3} bits (p = {:.5}), backward {:+.3} bits (p = {:.5}), {} words, {elapsed:.1?}",
            tf.statistic, tf.p_value, tb.statistic, tb.p_value, tf.n_words
        ),
    );
}

#[test]
fn criterion_04_terminal_ablation() {
    let _g = serial();
    let mut ok = true;
    let mut detail = Vec::new();
    for d in [en(), ru()] {
        let lang = d.split.train.language();
        for (family, measure) in [
            (ModelFamily::ForwardLstm, MeasureKind::Forward),
            (ModelFamily::BackwardLstm, MeasureKind::Backward),
        ] {
            let with = d.records(family, measure, EowPolicy::WITH_TERMINALS);
            let term = mean(with.iter().filter(|r| r.is_terminal()).map(|r| r.surprisal_bits));
            let rest = mean(with.iter().filter(|r| !r.is_terminal()).map(|r| r.surprisal_bits));
            ok &= term < rest;
            detail.push(format!("{lang} {measure}: terminal {term:.3} vs segment {rest:.3}"));
            if measure == MeasureKind::Forward {
                let without = d.records(family, measure, EowPolicy::WITHOUT_TERMINALS);
                let rows = eow_ablation_report(&with, &without).unwrap();
                let (w, wo) = (rows[0].diff_pct, rows[1].diff_pct);
                ok &= wo < w;
                detail.push(format!("{lang} forward diff% {w:.1} -> {wo:.1}"));
            }
        }
    }
    report(4, ok, &detail.join("; "));
}

#[test]
fn criterion_05_permutation_calibration() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let reps = 200;
    let mut rejections = 0;
    for rep in 0..reps {
        let ws: Vec<BinnedWord> = (0..40)
            .map(|i| BinnedWord {
                word_id: i,
                initial_mean: rng.gen_range(0.0..4.0),
                final_mean: rng.gen_range(0.0..4.0),
            })
            .collect();
        let t = paired_permutation_test(&ws, 2000, rep, PermutationScheme::Paired).unwrap();
        if t.p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;

    let n_perm = 20_000;
    let mut worst_z: f64 = 0.0;
    for n in 2..=12 {
        for trial in 0..3 {
            let diffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let exact = exhaustive_sign_flip_p(&diffs);
            let ws: Vec<BinnedWord> = diffs
                .iter()
                .enumerate()
                .map(|(i, &d)| BinnedWord {
                    word_id: i,
                    initial_mean: d,
                    final_mean: 0.0,
                })
                .collect();
            let mc = paired_permutation_test(&ws, n_perm, (n * 10 + trial) as u64, PermutationScheme::Paired)
                .unwrap()
                .p_value;
            let se = (exact * (1.0 - exact) / n_perm as f64).sqrt().max(1.0 / n_perm as f64);
            worst_z = worst_z.max((mc - exact).abs() / se);
        }
    }
    report(
        5,
        (0.02..=0.09).contains(&rate) && worst_z <= 3.0,
        &format!("null rejection rate {rate:.3} over {reps} runs; worst |MC - exact| = {worst_z:.2} SE"),
    );
}

fn exhaustive_sign_flip_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let obs = diffs.iter().sum::<f64>().abs();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let s: f64 = diffs
                .iter()
                .enumerate()
                .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                .sum();
            s.abs() >= obs - 1e-9
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

/// Step-up rule restated without sorting: the cutoff rank is the largest
/// `k` such that at least `k` p-values lie at or below `k * alpha / m`.
fn bh_oracle(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let k = (1..=m)
        .rev()
        .find(|&k| p.iter().filter(|&&x| x <= k as f64 * alpha / m as f64).count() >= k)
        .unwrap_or(0);
    p.iter().map(|&x| k > 0 && x <= k as f64 * alpha / m as f64).collect()
}

#[test]
fn criterion_06_bh_matches_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.gen_range(1..60);
        let alpha = [0.01, 0.05, 0.1, 0.2][rng.gen_range(0..4)];
        let p: Vec<f64> = (0..m)
            .map(|_| match rng.gen_range(0..4) {
                0 => rng.gen_range(1e-6..0.01),
                1 => (rng.gen_range(1..20) as f64) / 1000.0,
                _ => rng.gen_range(1e-6..=1.0),
            })
            .collect();
        if bh_correct(&p, alpha).unwrap() != bh_oracle(&p, alpha) {
            mismatches += 1;
        }
    }
    report(6, mismatches == 0, &format!("{mismatches} mismatches over 1000 vectors"));
}

#[test]
fn criterion_07_position_only_consistency() {
    let _g = serial();
    let d = en();
    let TrainedModel::Attention(m) = d.model(ModelFamily::Position).0 else {
        panic!("position model")
    };
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let n = d.split.train.alphabet().surface_len();
    for w in d.split.train.words() {
        for t in 1..=w.len() {
            let c = cells.entry((t, w.len())).or_insert_with(|| vec![0.0; n]);
            c[w.at(t) as usize] += 1.0;
        }
    }
    let mut kls = Vec::new();
    for ((t, len), counts) in &cells {
        let total: f64 = counts.iter().sum();
        if total < 50.0 {
            continue;
        }
        let q = m.position_only_distribution(*t, *len).unwrap();
        let kl: f64 = counts
            .iter()
            .zip(&q)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, qi)| {
                let p = c / total;
                p * (p / qi).log2()
            })
            .sum();
        kls.push(kl);
    }
    let mean_kl = mean(kls.iter().copied());
    report(
        7,
        !kls.is_empty() && mean_kl < 0.15,
        &format!("mean KL {mean_kl:.4} bits over {} cells with >= 50 examples", kls.len()),
    );
}

/// Mean surprisal over the first and second halves of each word's
/// segments (terminals excluded).
fn half_means(records: &[SurprisalRecord]) -> (f64, f64) {
    let mut by_word: BTreeMap<usize, Vec<&SurprisalRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_terminal()) {
        by_word.entry(r.word_id).or_default().push(r);
    }
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for recs in by_word.values() {
        let half = recs.len() / 2;
        for r in recs.iter() {
            if r.position <= half {
                first.push(r.surprisal_bits);
            } else {
                second.push(r.surprisal_bits);
            }
        }
    }
    (mean(first), mean(second))
}

#[test]
fn criterion_08_synthetic_invariants() {
    let _g = serial();
    let d = doubled();
    let fwd = d.records(ModelFamily::ForwardLstm, MeasureKind::Forward, EowPolicy::WITHOUT_TERMINALS);
    let bwd = d.records(ModelFamily::BackwardLstm, MeasureKind::Backward, EowPolicy::WITHOUT_TERMINALS);
    let (f1, f2) = half_means(&fwd);
    let (b1, b2) = half_means(&bwd);
    let doubled_ok = f2 < 0.25 * f1 && b1 < 0.25 * b2;

    let h = harmony();
    let cloze = h.records(ModelFamily::Cloze, MeasureKind::Cloze, EowPolicy::WITHOUT_TERMINALS);
    let uni = h.records(ModelFamily::Unigram, MeasureKind::Unigram, EowPolicy::WITHOUT_TERMINALS);
    let vowel = |rs: &[SurprisalRecord]| {
        mean(rs.iter().filter(|r| is_harmony_vowel(&r.segment)).map(|r| r.surprisal_bits))
    };
    let (cv, uv) = (vowel(&cloze), vowel(&uni));
    let harmony_ok = cv < 1.0 && (uv - 2.0).abs() <= 0.25;
    report(
        8,
        doubled_ok && harmony_ok,
        &format!(
            "doubled forward halves {f1:.3}/{f2:.3}, backward halves {b1:.3}/{b2:.3}; \
             harmony vowel cloze {cv:.3} bits, unigram {uv:.3} bits"
        ),
    );
}

#[test]
fn criterion_09_kl_profile() {
    let _g = serial();
    let profile = |lex: &Lexicon| {
        let pos = PositionalUnigramModel::fit(lex);
        let global = UnigramModel::fit(lex, false);
        positional_kl(&pos, &global, 0.75).unwrap()
    };
    let mut detail = Vec::new();
    for d in [en(), ru(), harmony()] {
        let p = profile(&d.split.train);
        let kl: Vec<String> = p.points.iter().map(|x| format!("{:.3}", x.kl_bits)).collect();
        detail.push(format!("{} argmax {} [{}]", d.split.train.language(), p.argmax, kl.join(", ")));
    }
    let spec = GeneratorSpec {
        kind: GeneratorKind::VowelHarmony {
            min_syllables: 2,
            max_syllables: 4,
            initial_onsets: Some(["b", "d", "g", "m"].map(String::from).to_vec()),
        },
        n: 3000,
        seed: 9,
    };
    let onset = profile(&generate(&spec).unwrap());
    detail.push(format!("harmony with distinctive onsets argmax {}", onset.argmax));
    report(9, (1..=2).contains(&onset.argmax), &detail.join("; "));
}

#[test]
fn criterion_10_length_slope() {
    let _g = serial();
    let mut ok = true;
    let mut detail = Vec::new();
    for d in [en(), ru()] {
        let recs = d.records(ModelFamily::ForwardLstm, MeasureKind::Forward, EowPolicy::WITHOUT_TERMINALS);
        for restriction in [SlopeRestriction::AllPositions, SlopeRestriction::FirstTwoOnly] {
            let s = length_slope(&recs, restriction, PERMUTATIONS, 10).unwrap();
            ok &= s.slope < 0.0 && s.p_value < 0.01;
            detail.push(format!(
                "{} {restriction:?}: slope {:.4} (p = {:.5})",
                d.split.train.language(),
                s.slope,
                s.p_value
            ));
        }
    }
    report(10, ok, &detail.join("; "));
}
