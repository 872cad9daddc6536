//! Run configuration: a flat `key = value` file, then command-line
//! overrides. Relative paths resolve against `CREST_ROOT` when it is set.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 0 | seed for initialization, batch order and artifact names |
//! | `task` | sentiment | `sentiment` or `nli` |
//! | `data_dir` | data | corpus, vocabulary and pair files |
//! | `checkpoint_dir` | checkpoints | model checkpoints |
//! | `report_dir` | reports | CSV and markdown reports |
//! | `corpus_seed` | 11 | seed of the synthetic corpus |
//! | `corpus_size` | 2500 | examples in the corpus (80/10/10 split) |
//! | `min_tokens`, `max_tokens` | 8, 24 | sentiment review length range |
//! | `distractor_rate` | 0.2 | share of sentiment reviews with a minority-polarity word |
//! | `d` | 64 | model width |
//! | `ffn_hidden` | 128 | feed-forward width |
//! | `max_len` | 128 | longest accepted sequence |
//! | `budget` | 0.3 | rationale budget B |
//! | `transition_penalty` | 0.0001 | contiguity penalty |
//! | `freeze_premise` | false | NLI: select only hypothesis tokens |
//! | `epochs` | 8 | rationalizer epochs |
//! | `editor_epochs` | 15 | editor epochs |
//! | `batch_size` | 16 | mini-batch size |
//! | `lr` | 0.002 | AdamW learning rate |
//! | `weight_decay` | 0.000001 | AdamW weight decay |
//! | `patience` | 5 | early-stopping patience in epochs (0 disables) |
//! | `beam_size` | 15 | editor beam width |
//! | `alpha`, `lambda` | task default | agreement weights |
//! | `seeds` | 1 | seeds evaluated by `eval-metrics` and `simulate` |
//! | `budgets` | 0.1,0.2,0.3,0.4,0.5 | budgets of `sweep-budget` |
//! | `eval_model` | masker | checkpoint family evaluated: masker, augmented or agreement |

use anyhow::{anyhow, bail, Context, Result};
use crest_core::corpus::Task;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("task", "sentiment"),
    ("data_dir", "data"),
    ("checkpoint_dir", "checkpoints"),
    ("report_dir", "reports"),
    ("corpus_seed", "11"),
    ("corpus_size", "2500"),
    ("min_tokens", "8"),
    ("max_tokens", "24"),
    ("distractor_rate", "0.2"),
    ("d", "64"),
    ("ffn_hidden", "128"),
    ("max_len", "128"),
    ("budget", "0.3"),
    ("transition_penalty", "0.0001"),
    ("freeze_premise", "false"),
    ("epochs", "8"),
    ("editor_epochs", "15"),
    ("batch_size", "16"),
    ("lr", "0.002"),
    ("weight_decay", "0.000001"),
    ("patience", "5"),
    ("beam_size", "15"),
    ("alpha", ""),
    ("lambda", ""),
    ("seeds", "1"),
    ("budgets", "0.1,0.2,0.3,0.4,0.5"),
    ("eval_model", "masker"),
];

/// Effective settings as strings, keyed and sorted by name.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", i + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!("unknown config key {key:?}"),
        }
    }

    fn raw(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| anyhow!("config key {key} = {:?}: {e}", self.raw(key)))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn task(&self) -> Result<Task> {
        Ok(self.get::<Task>("task")?)
    }

    /// `alpha`/`lambda`, falling back to the task's defaults.
    pub fn weight(&self, key: &str) -> Result<f64> {
        if self.raw(key).is_empty() {
            let d = match self.task()? {
                Task::Sentiment => crest_core::agreement::AgreementConfig::sentiment(),
                Task::Nli => crest_core::agreement::AgreementConfig::nli(),
            };
            return Ok(if key == "alpha" { d.alpha } else { d.lambda });
        }
        self.get(key)
    }

    pub fn budgets(&self) -> Result<Vec<f64>> {
        self.raw("budgets")
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("budgets: {s:?}: {e}")))
            .collect()
    }

    pub fn path(&self, key: &str) -> PathBuf {
        let p = PathBuf::from(self.raw(key));
        match std::env::var_os("CREST_ROOT") {
            Some(root) if p.is_relative() => PathBuf::from(root).join(p),
            _ => p,
        }
    }

    /// Canonical `key = value` listing.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::render`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
