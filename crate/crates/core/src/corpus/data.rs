//! Examples, counterfactual pairs, and their JSON-lines files.

use crate::corpus::vocab::Tokenizer;
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentiment,
    Nli,
}

impl Task {
    pub fn label_names(self) -> &'static [&'static str] {
        match self {
            Task::Sentiment => &["negative", "positive"],
            Task::Nli => &["entailment", "neutral", "contradiction"],
        }
    }

    pub fn num_classes(self) -> usize {
        self.label_names().len()
    }

    pub fn label_name(self, label: usize) -> &'static str {
        self.label_names()[label]
    }

    pub fn label_index(self, name: &str) -> Option<usize> {
        self.label_names().iter().position(|n| *n == name)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sentiment => "sentiment",
            Task::Nli => "nli",
        })
    }
}

impl FromStr for Task {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentiment" => Ok(Task::Sentiment),
            "nli" => Ok(Task::Nli),
            other => Err(CoreError::Config(format!("unknown task {other:?} (expected sentiment or nli)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub rationale: Option<Vec<u8>>,
    pub split: Split,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.rationale {
            if r.len() != self.tokens.len() {
                return Err(CoreError::Length {
                    what: "gold rationale",
                    expected: self.tokens.len(),
                    got: r.len(),
                });
            }
            if !r.iter().any(|&b| b == 1) || r.iter().any(|&b| b > 1) {
                return Err(CoreError::Config(format!(
                    "example {}: gold rationale must be 0/1 with at least one 1",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Factual input `x` with label `y_f`, its edit `x̃` labeled `y_c`, the
/// masker rationale `z*` over `x` and the derived rationale `z̃*` over `x̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPair {
    pub id: String,
    pub x: Vec<String>,
    pub y_f: usize,
    pub x_cf: Vec<String>,
    pub y_c: usize,
    pub z: Vec<u8>,
    pub z_cf: Vec<u8>,
    pub valid: Option<bool>,
}

impl CounterfactualPair {
    pub fn validate(&self) -> Result<()> {
        if self.y_f == self.y_c {
            return Err(CoreError::Config(format!("pair {}: counterfactual label equals factual label", self.id)));
        }
        if self.z.len() != self.x.len() {
            return Err(CoreError::Length {
                what: "factual rationale",
                expected: self.x.len(),
                got: self.z.len(),
            });
        }
        if self.z_cf.len() != self.x_cf.len() {
            return Err(CoreError::Length {
                what: "counterfactual rationale",
                expected: self.x_cf.len(),
                got: self.z_cf.len(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    id: String,
    text: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<Vec<u8>>,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    id: String,
    text: String,
    label: String,
    counterfactual: String,
    counterfactual_label: String,
    rationale_mask: Vec<u8>,
    counterfactual_mask: Vec<u8>,
    valid: Option<bool>,
}

fn label_of(task: Task, name: &str) -> std::result::Result<usize, String> {
    task.label_index(name)
        .ok_or_else(|| format!("label {name:?} is not a {task} label"))
}

fn write_lines<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| CoreError::Config(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<T, R>(path: &Path, mut convert: impl FnMut(R) -> std::result::Result<T, String>) -> Result<Vec<T>>
where
    R: for<'de> Deserialize<'de>,
{
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CoreError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let rec: R = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        out.push(convert(rec).map_err(err)?);
    }
    Ok(out)
}

pub fn write_examples(path: &Path, task: Task, examples: &[Example]) -> Result<()> {
    let tok = Tokenizer::default();
    write_lines(
        path,
        examples.iter().map(|e| ExampleRecord {
            id: e.id.clone(),
            text: tok.detokenize(&e.tokens),
            label: task.label_name(e.label).to_string(),
            rationale: e.rationale.clone(),
            split: e.split,
        }),
    )
}

pub fn read_examples(path: &Path, task: Task) -> Result<Vec<Example>> {
    let tok = Tokenizer::default();
    read_lines(path, |r: ExampleRecord| {
        let ex = Example {
            id: r.id,
            tokens: tok.tokenize(&r.text),
            label: label_of(task, &r.label)?,
            rationale: r.rationale,
            split: r.split,
        };
        ex.validate().map_err(|e| e.to_string())?;
        Ok(ex)
    })
}

pub fn write_pairs(path: &Path, task: Task, pairs: &[CounterfactualPair]) -> Result<()> {
    let tok = Tokenizer::default();
    write_lines(
        path,
        pairs.iter().map(|p| PairRecord {
            id: p.id.clone(),
            text: tok.detokenize(&p.x),
            label: task.label_name(p.y_f).to_string(),
            counterfactual: tok.detokenize(&p.x_cf),
            counterfactual_label: task.label_name(p.y_c).to_string(),
            rationale_mask: p.z.clone(),
            counterfactual_mask: p.z_cf.clone(),
            valid: p.valid,
        }),
    )
}

pub fn read_pairs(path: &Path, task: Task) -> Result<Vec<CounterfactualPair>> {
    let tok = Tokenizer::default();
    read_lines(path, |r: PairRecord| {
        let p = CounterfactualPair {
            id: r.id,
            x: tok.tokenize(&r.text),
            y_f: label_of(task, &r.label)?,
            x_cf: tok.tokenize(&r.counterfactual),
            y_c: label_of(task, &r.counterfactual_label)?,
            z: r.rationale_mask,
            z_cf: r.counterfactual_mask,
            valid: r.valid,
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    })
}

pub fn split_of(examples: &[Example], split: Split) -> Vec<Example> {
    examples.iter().filter(|e| e.split == split).cloned().collect()
}
