use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use lexinfo::models::Hyperparameters;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Options from `file` with every flag given on the command line laid
/// over them. Unset flags (`None`, empty lists) leave the file's value.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T> {
    let mut base = match file {
        Some(path) => {
            let text = read(path)?;
            let v: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if !v.is_object() {
                bail!("{}: config must be a JSON object", path.display());
            }
            v
        }
        None => Value::Object(Map::new()),
    };
    let Value::Object(over) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects")
    };
    let base_map = base.as_object_mut().expect("checked above");
    for (k, v) in over {
        let unset = v.is_null() || v.as_array().is_some_and(Vec::is_empty);
        if !unset {
            base_map.insert(k, v);
        }
    }
    serde_json::from_value(base).context("invalid configuration")
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

/// Writes the resolved options of `command` next to its outputs.
pub fn record_run<T: Serialize>(out_dir: &Path, command: &str, config: &T) -> Result<()> {
    #[derive(Serialize)]
    struct RunRecord<'a, T> {
        command: &'a str,
        version: &'a str,
        config: &'a T,
    }
    write_json(
        &out_dir.join(RUN_CONFIG_FILE),
        &RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
        },
    )
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value.clone().ok_or_else(|| anyhow!("missing required option --{flag}"))
}

/// Parses a value through its serde representation (kebab-case enums).
pub fn serde_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Hyperparameter flags. They are applied after the config file, on top of
/// its `hyperparameters` object.
#[derive(Args, Clone, Debug, Default)]
pub struct HyperparameterFlags {
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub recurrent_layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub attention_layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl HyperparameterFlags {
    pub fn apply(&self, hp: &mut Hyperparameters) {
        fn set<T: Copy>(dst: &mut T, src: Option<T>) {
            if let Some(v) = src {
                *dst = v;
            }
        }
        set(&mut hp.embedding_dim, self.embedding_dim);
        set(&mut hp.hidden_dim, self.hidden_dim);
        set(&mut hp.recurrent_layers, self.recurrent_layers);
        set(&mut hp.dropout, self.dropout);
        set(&mut hp.attention_layers, self.attention_layers);
        set(&mut hp.heads, self.heads);
        set(&mut hp.model_dim, self.model_dim);
        set(&mut hp.ff_dim, self.ff_dim);
        set(&mut hp.batch_size, self.batch_size);
        set(&mut hp.max_epochs, self.max_epochs);
        set(&mut hp.patience, self.patience);
        set(&mut hp.optimizer.learning_rate, self.learning_rate);
    }
}

/// Which part of the train/dev/test split to score.
#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPart {
    Train,
    Dev,
    Test,
    All,
}
