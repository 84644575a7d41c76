use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lexinfo::analysis::{bh_correct, bin_initial_final, positional_kl};
use lexinfo::lexicon::{extract_types, split, Alphabet, Lexicon, Word};
use lexinfo::models::{
    AttentionVariant, Direction, Hyperparameters, MaskedAttentionLM, PositionalUnigramModel,
    RecurrentLM, TrainedModel, UnigramModel,
};
use lexinfo::numerics::softmax;
use lexinfo::surprisal::{compute_surprisals, EowPolicy, MeasureKind};

const SYMBOLS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn lexicon_strategy(max_words: usize) -> impl Strategy<Value = Lexicon> {
    prop::collection::vec(prop::collection::vec(0usize..SYMBOLS.len(), 1..7), 1..max_words).prop_map(
        |words| {
            let words: Vec<Vec<&str>> = words.iter().map(|w| w.iter().map(|&i| SYMBOLS[i]).collect()).collect();
            Lexicon::from_segmented("xx", &words).unwrap()
        },
    )
}

fn tiny_hp() -> Hyperparameters {
    Hyperparameters {
        embedding_dim: 4,
        hidden_dim: 6,
        recurrent_layers: 1,
        model_dim: 4,
        heads: 2,
        attention_layers: 1,
        ff_dim: 6,
        ..Hyperparameters::default()
    }
}

fn assert_normalized(dist: &[f64], tol: f64) {
    let total: f64 = dist.iter().sum();
    assert!((total - 1.0).abs() < tol, "sum {total}");
    assert!(dist.iter().all(|&p| (0.0..=1.0).contains(&p)));
}

proptest! {
    #[test]
    fn lexicon_json_round_trips(lex in lexicon_strategy(40)) {
        prop_assert_eq!(Lexicon::from_json(&lex.to_json().unwrap()).unwrap(), lex);
    }

    #[test]
    fn softmax_sums_to_one(v in prop::collection::vec(-700.0f64..700.0, 1..50)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn extracted_counts_never_increase(words in prop::collection::vec("[a-e]{1,3}", 1..80), max in 1usize..30) {
        let corpus = words.join(" ");
        let types = extract_types(&corpus, unicode_script::Script::Latin, max).unwrap();
        prop_assert!(types.len() <= max);
        prop_assert!(types.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn lowering_alpha_never_adds_rejections(
        p in prop::collection::vec(0.0f64..=1.0, 1..40),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let strict = bh_correct(&p, lo).unwrap();
        let loose = bh_correct(&p, hi).unwrap();
        prop_assert!(strict.iter().zip(&loose).all(|(s, l)| !s || *l));
    }

    #[test]
    fn count_model_distributions_normalize(lex in lexicon_strategy(40)) {
        let uni = UnigramModel::fit(&lex, true);
        assert_normalized(&uni.distribution(), 1e-9);
        let pos = PositionalUnigramModel::fit(&lex);
        for t in 1..=pos.max_position() {
            assert_normalized(&pos.distribution(t).unwrap(), 1e-9);
        }
    }

    #[test]
    fn binning_stays_within_words(lex in lexicon_strategy(30), terminals in any::<bool>()) {
        let model = TrainedModel::Unigram(UnigramModel::fit(&lex, false));
        let policy = EowPolicy { include_terminals: terminals };
        let recs = compute_surprisals(&model, &lex, MeasureKind::Unigram, policy).unwrap();
        let binning = bin_initial_final(&recs).unwrap();
        prop_assert_eq!(binning.words.len() + binning.excluded, lex.len());
        for b in &binning.words {
            let own: Vec<f64> = recs.iter().filter(|r| r.word_id == b.word_id).map(|r| r.surprisal_bits).collect();
            let half = own.len() / 2;
            let initial = own[..half].iter().sum::<f64>() / half as f64;
            let final_ = own[own.len() - half..].iter().sum::<f64>() / half as f64;
            prop_assert!((b.initial_mean - initial).abs() < 1e-12);
            prop_assert!((b.final_mean - final_).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn split_partitions_the_lexicon(lex in lexicon_strategy(60), seed in any::<u64>()) {
        prop_assume!(lex.len() >= 10);
        let s = split(&lex, seed).unwrap();
        let mut seen = HashSet::new();
        for part in [&s.train, &s.dev, &s.test] {
            for w in part.words() {
                prop_assert!(seen.insert(w.clone()), "word in two parts");
            }
        }
        let all: HashSet<Word> = lex.words().iter().cloned().collect();
        prop_assert_eq!(seen, all);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn neural_distributions_normalize(lex in lexicon_strategy(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = tiny_hp();
        let a = lex.alphabet();
        for dir in [Direction::Forward, Direction::Backward] {
            let m = RecurrentLM::new(a, dir, &hp, &mut rng);
            for w in lex.words() {
                let steps = m.step_distributions(w).unwrap();
                prop_assert_eq!(steps.len(), w.len() + 1);
                for d in steps {
                    assert_normalized(&d, 1e-9);
                }
            }
        }
        for variant in [AttentionVariant::Cloze, AttentionVariant::PositionOnly] {
            let m = MaskedAttentionLM::new(a, variant, &hp, &mut rng);
            for w in lex.words() {
                for t in 1..=w.len() {
                    let d = match variant {
                        AttentionVariant::Cloze => m.cloze_distribution(w, t),
                        AttentionVariant::PositionOnly => m.position_only_distribution(t, w.len()),
                    };
                    assert_normalized(&d.unwrap(), 1e-9);
                }
            }
        }
    }

    #[test]
    fn record_counts_follow_the_terminal_policy(lex in lexicon_strategy(8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = tiny_hp();
        let segments: usize = lex.words().iter().map(Word::len).sum();
        let models = [
            (TrainedModel::Recurrent(RecurrentLM::new(lex.alphabet(), Direction::Forward, &hp, &mut rng)), MeasureKind::Forward, true),
            (TrainedModel::Recurrent(RecurrentLM::new(lex.alphabet(), Direction::Backward, &hp, &mut rng)), MeasureKind::Backward, true),
            (TrainedModel::Unigram(UnigramModel::fit(&lex, false)), MeasureKind::Unigram, false),
            (TrainedModel::Attention(MaskedAttentionLM::new(lex.alphabet(), AttentionVariant::Cloze, &hp, &mut rng)), MeasureKind::Cloze, false),
        ];
        for (model, measure, terminal) in &models {
            let with = compute_surprisals(model, &lex, *measure, EowPolicy::WITH_TERMINALS).unwrap();
            let without = compute_surprisals(model, &lex, *measure, EowPolicy::WITHOUT_TERMINALS).unwrap();
            prop_assert_eq!(without.len(), segments);
            prop_assert_eq!(with.len(), segments + if *terminal { lex.len() } else { 0 });
            prop_assert!(without.iter().all(|r| !r.is_terminal()));
        }
    }
}

#[test]
fn positions_drawn_from_the_global_distribution_have_no_kl() {
    // Segments are iid from one skewed distribution, so every position
    // matches the global unigram up to sampling noise.
    let weights = [0.4, 0.3, 0.2, 0.1];
    let alphabet = Alphabet::new(SYMBOLS[..4].iter().map(|s| s.to_string()).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draw = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        weights.iter().position(|w| {
            acc += w;
            u < acc
        }).unwrap_or(3) as u32
    };
    let words: Vec<Word> = (0..5000)
        .map(|_| {
            let len = rng.gen_range(6..=10);
            Word::new((0..len).map(|_| draw(&mut rng)).collect()).unwrap()
        })
        .collect();
    let lex = Lexicon::new("xx", alphabet, words).unwrap();
    let profile = positional_kl(&PositionalUnigramModel::fit(&lex), &UnigramModel::fit(&lex, false), 0.75).unwrap();
    assert!(!profile.points.is_empty());
    for p in &profile.points {
        assert!(p.kl_bits < 0.005, "position {}: {}", p.position, p.kl_bits);
    }
}
