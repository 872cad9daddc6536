//! CSV and markdown reports. Every report names the producing subcommand,
//! the seed and the config hash.

use anyhow::{Context, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct Report {
    pub subcommand: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(subcommand: &'static str, seed: u64, config_hash: String, columns: &[&str]) -> Self {
        Self {
            subcommand,
            seed,
            config_hash,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.md`; returns the CSV path.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let csv_path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
        let mut header = vec!["subcommand".to_string(), "seed".into(), "config_hash".into()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![self.subcommand.to_string(), self.seed.to_string(), self.config_hash.clone()];
            rec.extend(r.iter().cloned());
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut md = String::new();
        writeln!(md, "# {}\n", self.subcommand)?;
        writeln!(md, "seed: {}  \nconfig hash: `{}`\n", self.seed, self.config_hash)?;
        for n in &self.notes {
            writeln!(md, "{n}  ")?;
        }
        if !self.notes.is_empty() {
            md.push('\n');
        }
        writeln!(md, "| {} |", self.columns.join(" | "))?;
        writeln!(md, "|{}", "---|".repeat(self.columns.len()))?;
        for r in &self.rows {
            writeln!(md, "| {} |", r.join(" | "))?;
        }
        let md_path = dir.join(format!("{name}.md"));
        std::fs::write(&md_path, md).with_context(|| format!("writing {}", md_path.display()))?;
        Ok(csv_path)
    }
}

pub fn f(v: f64) -> String {
    format!("{v:.4}")
}

pub fn mean_pm(xs: &[f64]) -> String {
    let (m, s) = crest_core::metrics::mean_std(xs);
    format!("{m:.4} ± {s:.4}")
}
