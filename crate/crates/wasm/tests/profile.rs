use lexinfo::lexicon::Lexicon;
use lexinfo_wasm::{bias_curve_json, profile, synthetic_profile_json, wordlist_profile_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn bias_curve_starts_at_log_sigma_and_falls() {
    let v = parse(&bias_curve_json(4, 5, 3000, 3, 1).unwrap());
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let plugin: Vec<f64> = rows.iter().map(|r| r["plugin_bits"].as_f64().unwrap()).collect();
    assert!((plugin[0] - 2.0).abs() < 0.01);
    assert!(plugin[4] < plugin[1]);
    assert_eq!(rows[0]["true_bits"].as_f64().unwrap(), 2.0);
}

#[test]
fn oversized_requests_are_refused() {
    assert!(bias_curve_json(8, 6, 10_000_000, 1, 0).is_err());
    assert!(bias_curve_json(8, 6, 100, 1000, 0).is_err());
}

#[test]
fn distinctive_onsets_peak_at_the_first_position() {
    let v = parse(&synthetic_profile_json("harmony-onsets", 0, 3000, 2).unwrap());
    assert_eq!(v["argmax_kl"], 1);
    let kl: Vec<f64> = v["positions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["kl_bits"].as_f64().unwrap())
        .collect();
    assert!(kl[0] > 2.0 * kl[1]);
}

#[test]
fn doubled_words_become_predictable_in_the_second_half() {
    let v = parse(&synthetic_profile_json("doubled", 6, 20_000, 4).unwrap());
    let fwd: Vec<f64> = v["forward_bits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!((fwd[0] - 6f64.log2()).abs() < 0.01);
    assert!(fwd.last().unwrap() < &(0.5 * fwd[0]));
}

#[test]
fn unknown_generator_is_an_error() {
    assert!(synthetic_profile_json("zipf", 8, 100, 0).is_err());
}

#[test]
fn wordlist_profile_matches_hand_counts() {
    // All ordered pairs of distinct letters.
    let text = "ab\nac\nba\nbc\nca\ncb\n";
    let v = parse(&wordlist_profile_json(text, "xx", false).unwrap());
    assert_eq!(v["n_types"], 6);
    assert_eq!(v["mean_length"], 2.0);
    let pos = v["positions"].as_array().unwrap();
    assert_eq!(pos.len(), 2);
    // Each position is uniform over the three letters, as is the global.
    for p in pos {
        assert!((p["entropy_bits"].as_f64().unwrap() - 3f64.log2()).abs() < 1e-12);
        assert!(p["kl_bits"].as_f64().unwrap().abs() < 1e-12);
    }
}

#[test]
fn space_separated_lists_keep_multi_character_segments() {
    let v = parse(&wordlist_profile_json("t͡ʃ a\nk a\n", "ipa", true).unwrap());
    assert_eq!(v["mean_length"], 2.0);
    assert!(wordlist_profile_json("", "xx", false).is_err());
}

#[test]
fn profile_depths_match_covered_positions() {
    let lex = Lexicon::from_segmented("xx", &[vec!["a", "b", "c"], vec!["b", "a"], vec!["c", "c", "a"], vec!["a", "a", "b"]])
        .unwrap();
    let p = profile(&lex).unwrap();
    assert_eq!(p.positions.len(), 3);
    assert_eq!(p.forward_bits.len(), 3);
    assert_eq!(p.backward_bits.len(), 3);
}
