use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use lexinfo::analysis::{
    eow_ablation_report, initial_final_reports, language_seed, length_slope, positional_kl,
    positional_mean_curve, summarize, write_ablation_csv, write_curve_csv, KlPoint, LanguageReport,
    PermutationScheme, SlopeRestriction, TestConfig,
};
use lexinfo::lexicon::{extract_lexicon, parse_script, parse_wordlist, split, Lexicon, SegmentationMode};
use lexinfo::models::{
    train as fit, Checkpoint, Hyperparameters, ModelFamily, PositionalUnigramModel, UnigramModel,
};
use lexinfo::surprisal::{
    compute_surprisals, read_records_csv, write_records_csv, EowPolicy, MeasureKind, SurprisalRecord,
};
use lexinfo::synthlab::{
    bias_experiment_mean, generate as synthesize, write_bias_csv, GeneratorKind, GeneratorSpec,
    LengthDist,
};

use crate::config::{
    merge, read, record_run, required, serde_arg, write, write_json, HyperparameterFlags, SplitPart,
};

const DEFAULT_MAX_TYPES: usize = 10_000;
const DEFAULT_COVERAGE: f64 = 0.75;
const DEFAULT_PIPELINE_MODELS: [ModelFamily; 5] = [
    ModelFamily::ForwardLstm,
    ModelFamily::BackwardLstm,
    ModelFamily::Unigram,
    ModelFamily::Position,
    ModelFamily::Cloze,
];

fn out_dir(dir: &mut Option<PathBuf>) -> PathBuf {
    dir.get_or_insert_with(|| PathBuf::from(".")).clone()
}

fn load_lexicon(path: &Path) -> Result<Lexicon> {
    Lexicon::from_json(&read(path)?).with_context(|| format!("{} is not a lexicon file", path.display()))
}

fn write_lexicon(dir: &Path, lex: &Lexicon) -> Result<PathBuf> {
    let path = dir.join(format!("{}.lexicon.json", lex.language()));
    write(&path, &lex.to_json()?)?;
    Ok(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn records_file(dir: &Path, language: &str, measure: MeasureKind, terminals: bool) -> PathBuf {
    let suffix = if terminals || !measure.has_terminals() { "" } else { ".no-terminals" };
    dir.join(format!("{language}.{measure}{suffix}.records.csv"))
}

fn announce(path: &Path) {
    println!("{}", path.display());
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    /// Wordlist, one word per line, optionally `word<TAB>frequency`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Language tag stored in the lexicon.
    #[arg(long)]
    pub lang: Option<String>,
    /// `graphemes` (default) or `space-separated`.
    #[arg(long, value_parser = serde_arg::<SegmentationMode>)]
    pub mode: Option<SegmentationMode>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn ingest(flags: IngestArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    let input = required(&a.input, "input")?;
    let lang = required(&a.lang, "lang")?;
    let mode = *a.mode.get_or_insert(SegmentationMode::Graphemes);
    let dir = out_dir(&mut a.out_dir);
    let lex = parse_wordlist(&read(&input)?, mode, &lang)
        .with_context(|| format!("parsing {}", input.display()))?;
    announce(&write_lexicon(&dir, &lex)?);
    record_run(&dir, "ingest", &a)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractArgs {
    /// Raw UTF-8 running text.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Unicode script name, e.g. `Latin` or `Cyrillic`.
    #[arg(long)]
    pub script: Option<String>,
    /// Number of most frequent types to keep.
    #[arg(long)]
    pub max_types: Option<usize>,
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn extract(flags: ExtractArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    let corpus = required(&a.corpus, "corpus")?;
    let script = parse_script(&required(&a.script, "script")?)?;
    let lang = a.lang.get_or_insert_with(|| "xx".into()).clone();
    let max_types = *a.max_types.get_or_insert(DEFAULT_MAX_TYPES);
    let dir = out_dir(&mut a.out_dir);
    let lex = extract_lexicon(&read(&corpus)?, script, max_types, &lang)
        .with_context(|| format!("extracting types from {}", corpus.display()))?;
    announce(&write_lexicon(&dir, &lex)?);
    record_run(&dir, "extract", &a)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// forward-lstm, backward-lstm, cloze, position, unigram, trie or backward-trie.
    #[arg(long)]
    pub model: Option<ModelFamily>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the train/dev/test split.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(skip)]
    pub hyperparameters: Option<Hyperparameters>,
    #[command(flatten)]
    #[serde(skip)]
    pub hp: HyperparameterFlags,
}

pub fn train(flags: TrainArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    let path = required(&a.lexicon, "lexicon")?;
    let family = required(&a.model, "model")?;
    let seed = *a.seed.get_or_insert(0);
    let split_seed = *a.split_seed.get_or_insert(0);
    let hp = a.hyperparameters.get_or_insert_with(Hyperparameters::default);
    flags.hp.apply(hp);
    hp.validate()?;
    let hp = hp.clone();
    let dir = out_dir(&mut a.out_dir);

    let lex = load_lexicon(&path)?;
    let parts = split(&lex, split_seed)?;
    let (model, log) = fit(family, &parts, &hp, seed)?;
    let stem = format!("{}.{family}", lex.language());
    let ckpt = Checkpoint::new(model, lex.alphabet(), hp, seed, split_seed);
    let ckpt_path = dir.join(format!("{stem}.checkpoint.json"));
    write(&ckpt_path, &ckpt.to_json()?)?;
    let log_path = dir.join(format!("{stem}.log.json"));
    write_json(&log_path, &log)?;
    announce(&ckpt_path);
    announce(&log_path);
    record_run(&dir, "train", &a)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurprisalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// The lexicon the checkpoint was trained on.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Defaults to the measure of the checkpoint's model family.
    #[arg(long)]
    pub measure: Option<MeasureKind>,
    /// Defaults to `test`, or `train` for trie models.
    #[arg(long, value_enum)]
    pub split: Option<SplitPart>,
    /// Include terminal-symbol records (default true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub terminals: Option<bool>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn surprisal(flags: SurprisalArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    let ckpt_path = required(&a.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::from_json(&read(&ckpt_path)?)
        .with_context(|| format!("loading {}", ckpt_path.display()))?;
    let lex = load_lexicon(&required(&a.lexicon, "lexicon")?)?;
    ckpt.verify(lex.alphabet())?;
    let measure = *a.measure.get_or_insert(MeasureKind::of_family(ckpt.family));
    let is_trie = matches!(ckpt.family, ModelFamily::Trie | ModelFamily::BackwardTrie);
    let part = *a
        .split
        .get_or_insert(if is_trie { SplitPart::Train } else { SplitPart::Test });
    let terminals = *a.terminals.get_or_insert(true);
    let dir = out_dir(&mut a.out_dir);

    let parts = split(&lex, ckpt.split_seed)?;
    let scored = match part {
        SplitPart::Train => &parts.train,
        SplitPart::Dev => &parts.dev,
        SplitPart::Test => &parts.test,
        SplitPart::All => &lex,
    };
    let records = compute_surprisals(&ckpt.model, scored, measure, EowPolicy { include_terminals: terminals })?;
    let path = records_file(&dir, lex.language(), measure, terminals);
    write_records_csv(&records, create(&path)?)?;
    announce(&path);
    record_run(&dir, "surprisal", &a)
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisTest {
    InitialFinal,
    LengthSlope,
    PositionalKl,
    Ablation,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub test: Option<AnalysisTest>,
    /// Records CSV files; for the ablation, the ones with terminals.
    #[arg(long, num_args = 1..)]
    pub records: Vec<PathBuf>,
    /// Records CSV files without terminals (ablation only).
    #[arg(long, num_args = 1..)]
    pub without_terminals: Vec<PathBuf>,
    /// Lexicon files (positional-kl only).
    #[arg(long = "lexicon", num_args = 1..)]
    pub lexicons: Vec<PathBuf>,
    /// Require every record to carry this measure.
    #[arg(long)]
    pub measure: Option<MeasureKind>,
    /// Initial-final tests for every measure present plus a summary table.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub all_measures: Option<bool>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Master seed; each language draws from its own derived stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `paired` (default) or `pooled`.
    #[arg(long, value_parser = serde_arg::<PermutationScheme>)]
    pub scheme: Option<PermutationScheme>,
    /// Minimum share of words reaching a position (positional-kl).
    #[arg(long)]
    pub min_coverage: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl AnalyzeArgs {
    fn test_config(&mut self) -> Result<TestConfig> {
        let d = TestConfig::default();
        let config = TestConfig {
            permutations: *self.permutations.get_or_insert(d.permutations),
            alpha: *self.alpha.get_or_insert(d.alpha),
            seed: *self.seed.get_or_insert(d.seed),
            scheme: *self.scheme.get_or_insert(d.scheme),
        };
        if config.permutations == 0 {
            bail!("--permutations must be positive");
        }
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            bail!("--alpha must be in (0, 1)");
        }
        Ok(config)
    }
}

fn load_records(paths: &[PathBuf], expected: Option<MeasureKind>) -> Result<Vec<SurprisalRecord>> {
    let mut all = Vec::new();
    for path in paths {
        let f = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
        let recs = read_records_csv(f).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(m) = expected {
            if let Some(r) = recs.iter().find(|r| r.measure != m) {
                bail!(
                    "{}: records carry measure {}, expected {m}",
                    path.display(),
                    r.measure
                );
            }
        }
        all.extend(recs);
    }
    if all.is_empty() {
        bail!("no surprisal records given (use --records)");
    }
    Ok(all)
}

fn by_measure(records: Vec<SurprisalRecord>) -> BTreeMap<MeasureKind, Vec<SurprisalRecord>> {
    let mut out: BTreeMap<MeasureKind, Vec<SurprisalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.measure).or_default().push(r);
    }
    out
}

fn by_language(records: &[SurprisalRecord]) -> BTreeMap<&str, Vec<SurprisalRecord>> {
    let mut out: BTreeMap<&str, Vec<SurprisalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.language.as_str()).or_default().push(r.clone());
    }
    out
}

fn initial_final_all(
    groups: &BTreeMap<MeasureKind, Vec<SurprisalRecord>>,
    config: &TestConfig,
) -> Result<Vec<LanguageReport>> {
    let mut reports = Vec::new();
    for recs in groups.values() {
        reports.extend(initial_final_reports(recs, config)?);
    }
    Ok(reports)
}

fn write_curves(dir: &Path, groups: &BTreeMap<MeasureKind, Vec<SurprisalRecord>>) -> Result<()> {
    for (measure, recs) in groups {
        for (lang, lang_recs) in by_language(recs) {
            let path = dir.join("curves").join(format!("{lang}.{measure}.csv"));
            write_curve_csv(&positional_mean_curve(&lang_recs), create(&path)?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SlopeRow<'a> {
    language: &'a str,
    measure: MeasureKind,
    restriction: SlopeRestriction,
    slope: f64,
    p_value: f64,
    n_points: usize,
}

fn slopes<'a>(records: &'a [SurprisalRecord], config: &TestConfig) -> Result<Vec<SlopeRow<'a>>> {
    let mut groups: BTreeMap<(&str, MeasureKind), Vec<SurprisalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.language.as_str(), r.measure)).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for ((language, measure), recs) in groups {
        for restriction in [SlopeRestriction::AllPositions, SlopeRestriction::FirstTwoOnly] {
            let s = length_slope(&recs, restriction, config.permutations, language_seed(config.seed, language))
                .with_context(|| format!("length slope for {language} {measure}"))?;
            rows.push(SlopeRow {
                language,
                measure,
                restriction,
                slope: s.slope,
                p_value: s.p_value,
                n_points: s.n_points,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct KlRow {
    language: String,
    argmax: usize,
    points: Vec<KlPoint>,
}

fn kl_profile(lex: &Lexicon, min_coverage: f64) -> Result<KlRow> {
    let p = positional_kl(
        &PositionalUnigramModel::fit(lex),
        &UnigramModel::fit(lex, false),
        min_coverage,
    )?;
    Ok(KlRow {
        language: lex.language().to_owned(),
        argmax: p.argmax,
        points: p.points,
    })
}

pub fn analyze(flags: AnalyzeArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    let all_measures = *a.all_measures.get_or_insert(false);
    let test = *a.test.get_or_insert(AnalysisTest::InitialFinal);
    if all_measures && test != AnalysisTest::InitialFinal {
        bail!("--all-measures applies to the initial-final test only");
    }
    let config = a.test_config()?;
    let dir = out_dir(&mut a.out_dir);
    match test {
        AnalysisTest::InitialFinal => {
            let groups = by_measure(load_records(&a.records, a.measure)?);
            if groups.len() > 1 && !all_measures {
                let names: Vec<&str> = groups.keys().map(|m| m.name()).collect();
                bail!(
                    "records mix measures ({}); pass --measure or --all-measures",
                    names.join(", ")
                );
            }
            let reports = initial_final_all(&groups, &config)?;
            let path = dir.join("initial_final.json");
            write_json(&path, &reports)?;
            announce(&path);
            if all_measures {
                let path = dir.join("summary.json");
                write_json(&path, &summarize(&reports))?;
                announce(&path);
            }
            write_curves(&dir, &groups)?;
        }
        AnalysisTest::LengthSlope => {
            let records = load_records(&a.records, a.measure)?;
            let path = dir.join("length_slope.json");
            write_json(&path, &slopes(&records, &config)?)?;
            announce(&path);
        }
        AnalysisTest::PositionalKl => {
            if a.lexicons.is_empty() {
                bail!("positional-kl needs at least one --lexicon");
            }
            let min_coverage = *a.min_coverage.get_or_insert(DEFAULT_COVERAGE);
            let rows = a
                .lexicons
                .iter()
                .map(|p| kl_profile(&load_lexicon(p)?, min_coverage))
                .collect::<Result<Vec<_>>>()?;
            let path = dir.join("positional_kl.json");
            write_json(&path, &rows)?;
            announce(&path);
        }
        AnalysisTest::Ablation => {
            let with = load_records(&a.records, a.measure)?;
            let without = load_records(&a.without_terminals, a.measure)
                .context("the ablation needs --without-terminals records")?;
            let rows = eow_ablation_report(&with, &without)?;
            let path = dir.join("ablation.csv");
            write_ablation_csv(&rows, create(&path)?)?;
            announce(&path);
        }
    }
    record_run(&dir, "analyze", &a)
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Fixed-length words with iid uniform segments.
    Iid,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiaslabArgs {
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    /// Alphabet size.
    #[arg(long)]
    pub sigma: Option<usize>,
    /// Word length.
    #[arg(long)]
    pub length: Option<usize>,
    /// Words drawn per lexicon (duplicates collapse to one type).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of lexicons averaged.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed; lexicon `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Deepest conditioning depth reported (default: the word length).
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn biaslab(flags: BiaslabArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    a.experiment.get_or_insert(Experiment::Iid);
    let sigma = *a.sigma.get_or_insert(8);
    let length = *a.length.get_or_insert(6);
    let n = *a.n.get_or_insert(10_000);
    let seeds = *a.seeds.get_or_insert(20);
    let seed = *a.seed.get_or_insert(0);
    let max_depth = *a.max_depth.get_or_insert(length);
    let dir = out_dir(&mut a.out_dir);
    let report = bias_experiment_mean(&GeneratorSpec::iid(sigma, length, n, seed), max_depth, seeds)?;
    let path = dir.join("bias.csv");
    write_bias_csv(&report, create(&path)?)?;
    announce(&path);
    record_run(&dir, "biaslab", &a)
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorName {
    Iid,
    Doubled,
    Harmony,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: Option<GeneratorName>,
    /// Alphabet size (iid, doubled).
    #[arg(long)]
    pub sigma: Option<usize>,
    /// Word length (iid) or half length (doubled).
    #[arg(long)]
    pub length: Option<usize>,
    /// With --max-length, draw lengths uniformly instead.
    #[arg(long)]
    pub min_length: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    #[arg(long)]
    pub min_syllables: Option<usize>,
    #[arg(long)]
    pub max_syllables: Option<usize>,
    /// Consonants used only as the first onset (harmony).
    #[arg(long, num_args = 1..)]
    pub onsets: Vec<String>,
    /// Words drawn (duplicates collapse to one type).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl GenerateArgs {
    fn spec(&mut self) -> Result<GeneratorSpec> {
        let kind = *self.kind.get_or_insert(GeneratorName::Iid);
        let n = *self.n.get_or_insert(10_000);
        let seed = *self.seed.get_or_insert(0);
        let length = |a: &mut Self, default: usize| match (a.min_length, a.max_length) {
            (Some(min), Some(max)) => Ok(LengthDist::Uniform { min, max }),
            (None, None) => Ok(LengthDist::Fixed(*a.length.get_or_insert(default))),
            _ => Err(anyhow!("--min-length and --max-length go together")),
        };
        let kind = match kind {
            GeneratorName::Iid => GeneratorKind::IidUniform {
                alphabet_size: *self.sigma.get_or_insert(8),
                length: length(self, 6)?,
            },
            GeneratorName::Doubled => GeneratorKind::DoubledHalf {
                alphabet_size: *self.sigma.get_or_insert(8),
                half_length: length(self, 3)?,
            },
            GeneratorName::Harmony => GeneratorKind::VowelHarmony {
                min_syllables: *self.min_syllables.get_or_insert(2),
                max_syllables: *self.max_syllables.get_or_insert(4),
                initial_onsets: (!self.onsets.is_empty()).then(|| self.onsets.clone()),
            },
        };
        Ok(GeneratorSpec { kind, n, seed })
    }
}

pub fn generate(flags: GenerateArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    let spec = a.spec()?;
    let dir = out_dir(&mut a.out_dir);
    announce(&write_lexicon(&dir, &synthesize(&spec)?)?);
    record_run(&dir, "generate", &a)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineArgs {
    /// `lang=path` wordlists, one per language.
    #[arg(long = "wordlist", num_args = 1..)]
    pub wordlists: Vec<String>,
    #[arg(long, value_parser = serde_arg::<SegmentationMode>)]
    pub mode: Option<SegmentationMode>,
    /// Model families to train (default: both LSTMs, unigram, position, cloze).
    #[arg(long = "model", num_args = 1..)]
    pub models: Vec<ModelFamily>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = serde_arg::<PermutationScheme>)]
    pub scheme: Option<PermutationScheme>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(skip)]
    pub hyperparameters: Option<Hyperparameters>,
    #[command(flatten)]
    #[serde(skip)]
    pub hp: HyperparameterFlags,
}

fn parse_wordlist_arg(s: &str) -> Result<(String, PathBuf)> {
    match s.split_once('=') {
        Some((lang, path)) if !lang.is_empty() && !path.is_empty() => Ok((lang.to_owned(), path.into())),
        _ => bail!("--wordlist expects lang=path, got {s:?}"),
    }
}

pub fn pipeline(flags: PipelineArgs, file: Option<&Path>) -> Result<()> {
    let mut a = merge(&flags, file)?;
    if a.wordlists.is_empty() {
        bail!("missing required option --wordlist");
    }
    let wordlists = a
        .wordlists
        .iter()
        .map(|s| parse_wordlist_arg(s))
        .collect::<Result<Vec<_>>>()?;
    let mode = *a.mode.get_or_insert(SegmentationMode::Graphemes);
    if a.models.is_empty() {
        a.models = DEFAULT_PIPELINE_MODELS.to_vec();
    }
    let mut measures = BTreeMap::new();
    for &m in &a.models {
        if let Some(prev) = measures.insert(MeasureKind::of_family(m), m) {
            bail!("{prev} and {m} both compute the {} measure", MeasureKind::of_family(m));
        }
    }
    let seed = *a.seed.get_or_insert(0);
    let split_seed = *a.split_seed.get_or_insert(0);
    let d = TestConfig::default();
    let config = TestConfig {
        permutations: *a.permutations.get_or_insert(d.permutations),
        alpha: *a.alpha.get_or_insert(d.alpha),
        seed,
        scheme: *a.scheme.get_or_insert(d.scheme),
    };
    let hp = a.hyperparameters.get_or_insert_with(Hyperparameters::default);
    flags.hp.apply(hp);
    hp.validate()?;
    let hp = hp.clone();
    let dir = out_dir(&mut a.out_dir);

    let mut with_terminals = Vec::new();
    let mut without_terminals = Vec::new();
    let mut kl_rows = Vec::new();
    for (lang, path) in &wordlists {
        let lex = parse_wordlist(&read(path)?, mode, lang)
            .with_context(|| format!("parsing {}", path.display()))?;
        write_lexicon(&dir.join("lexicons"), &lex)?;
        kl_rows.push(kl_profile(&lex, DEFAULT_COVERAGE)?);
        let parts = split(&lex, split_seed)?;
        for &family in &a.models {
            eprintln!("training {family} on {lang}");
            let (model, log) = fit(family, &parts, &hp, seed)
                .with_context(|| format!("training {family} on {lang}"))?;
            let models_dir = dir.join("models");
            write_json(&models_dir.join(format!("{lang}.{family}.log.json")), &log)?;
            let scored = match family {
                ModelFamily::Trie | ModelFamily::BackwardTrie => &parts.train,
                _ => &parts.test,
            };
            let measure = MeasureKind::of_family(family);
            let recs = compute_surprisals(&model, scored, measure, EowPolicy::WITH_TERMINALS)?;
            write_records_csv(&recs, create(&records_file(&dir.join("records"), lang, measure, true))?)?;
            with_terminals.extend(recs);
            if measure.has_terminals() {
                let recs = compute_surprisals(&model, scored, measure, EowPolicy::WITHOUT_TERMINALS)?;
                write_records_csv(&recs, create(&records_file(&dir.join("records"), lang, measure, false))?)?;
                without_terminals.extend(recs);
            }
            let ckpt = Checkpoint::new(model, lex.alphabet(), hp.clone(), seed, split_seed);
            write(&models_dir.join(format!("{lang}.{family}.checkpoint.json")), &ckpt.to_json()?)?;
        }
    }

    let reports_dir = dir.join("reports");
    let groups = by_measure(with_terminals);
    let reports = initial_final_all(&groups, &config)?;
    write_json(&reports_dir.join("initial_final.json"), &reports)?;
    write_json(&reports_dir.join("summary.json"), &summarize(&reports))?;
    write_curves(&reports_dir, &groups)?;
    write_json(&reports_dir.join("positional_kl.json"), &kl_rows)?;
    if !without_terminals.is_empty() {
        let with: Vec<SurprisalRecord> = groups
            .iter()
            .filter(|(m, _)| m.has_terminals())
            .flat_map(|(_, r)| r.iter().cloned())
            .collect();
        write_ablation_csv(
            &eow_ablation_report(&with, &without_terminals)?,
            create(&reports_dir.join("ablation.csv"))?,
        )?;
        let forward: Vec<SurprisalRecord> = without_terminals
            .iter()
            .filter(|r| r.measure == MeasureKind::Forward)
            .cloned()
            .collect();
        if !forward.is_empty() {
            write_json(&reports_dir.join("length_slope.json"), &slopes(&forward, &config)?)?;
        }
    }
    announce(&reports_dir);
    record_run(&dir, "pipeline", &a)
}
