use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub task_loss: f64,
    pub codebook_loss: f64,
    pub commitment_loss: f64,
    /// `task + w · codebook + β · commitment`, averaged over batches.
    pub total_loss: f64,
    pub perplexity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub metrics: BTreeMap<String, f64>,
}

impl SplitMetrics {
    pub fn new(split: impl Into<String>, metrics: &[(&str, f64)]) -> Self {
        SplitMetrics {
            split: split.into(),
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

/// Per-trial rows of the analysis kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochRow>,
    pub splits: Vec<SplitMetrics>,
    pub table: Option<Table>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
    pub version: String,
}

impl RunRecord {
    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        self.splits.iter().find(|s| s.split == name)
    }

    pub fn metric(&self, split: &str, metric: &str) -> Option<f64> {
        self.split(split).and_then(|s| s.metrics.get(metric).copied())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Metric columns of the per-split CSV for each kind.
pub fn metric_columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Adding | ExperimentKind::Ablation => &["mse"],
        ExperimentKind::Gridworld => &["hits_at_1", "mrr"],
        ExperimentKind::TransformerToy => &["loss", "accuracy"],
        ExperimentKind::GaussianAnalysis => &["train_accuracy", "test_accuracy"],
        ExperimentKind::Bounds => &[
            "with_discretization",
            "without_discretization",
            "ln_appendix_with",
            "ln_appendix_without",
        ],
        ExperimentKind::Hoeffding => &["violation_rate", "mean_gap", "bound"],
    }
}

pub const KEY_COLUMNS: [&str; 4] = ["kind", "seed", "codebook_size", "heads"];
pub const EPOCH_COLUMNS: [&str; 6] = ["epoch", "task_loss", "codebook_loss", "commitment_loss", "total_loss", "perplexity"];

/// 17 significant digits; always parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn key_cells(r: &RunRecord) -> Vec<String> {
    vec![
        r.config.kind.name().to_string(),
        r.config.seed.to_string(),
        r.config.model.codebook_size.to_string(),
        r.config.model.heads.to_string(),
    ]
}

fn csv_line(cells: &[String]) -> String {
    cells.iter().map(|c| escape(c)).collect::<Vec<_>>().join(",") + "\n"
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

fn header(extra: &[&str]) -> String {
    let cols: Vec<String> = KEY_COLUMNS.iter().chain(extra).map(|c| c.to_string()).collect();
    csv_line(&cols)
}

fn common_kind(records: &[RunRecord]) -> Result<Option<ExperimentKind>> {
    let kind = records.first().map(|r| r.config.kind);
    if records.iter().any(|r| Some(r.config.kind) != kind) {
        return Err(Error::invalid("records of different experiment kinds cannot share one CSV"));
    }
    Ok(kind)
}

/// One row per `(record, epoch)`.
pub fn epochs_csv(records: &[RunRecord]) -> String {
    let mut out = header(&EPOCH_COLUMNS);
    for r in records {
        for e in &r.epochs {
            let mut cells = key_cells(r);
            cells.push(e.epoch.to_string());
            cells.extend([e.task_loss, e.codebook_loss, e.commitment_loss, e.total_loss].map(format_f64));
            cells.push(e.perplexity.map(format_f64).unwrap_or_default());
            out += &csv_line(&cells);
        }
    }
    out
}

/// One row per `(record, split)`; `kind` fixes the header of an empty list.
pub fn metrics_csv(records: &[RunRecord], kind: ExperimentKind) -> Result<String> {
    let kind = common_kind(records)?.unwrap_or(kind);
    let cols = metric_columns(kind);
    let mut out = header(&[&["split"], cols].concat());
    for r in records {
        for s in &r.splits {
            let mut cells = key_cells(r);
            cells.push(s.split.clone());
            cells.extend(cols.iter().map(|c| s.metrics.get(*c).map(|&v| format_f64(v)).unwrap_or_default()));
            out += &csv_line(&cells);
        }
    }
    Ok(out)
}

/// Table rows of every record, or `None` when no record has a table.
pub fn table_csv(records: &[RunRecord]) -> Result<Option<String>> {
    let Some(columns) = records.iter().find_map(|r| r.table.as_ref().map(|t| &t.columns)) else {
        return Ok(None);
    };
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut out = header(&cols);
    for r in records {
        let Some(t) = &r.table else { continue };
        if &t.columns != columns {
            return Err(Error::invalid("records carry tables with different columns"));
        }
        for row in &t.rows {
            let mut cells = key_cells(r);
            cells.extend(row.iter().map(|&v| format_f64(v)));
            out += &csv_line(&cells);
        }
    }
    Ok(Some(out))
}

/// Output format of [`emit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Writes `contents` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Writes `records` under `dir` and returns the files written.
///
/// CSV writes `epochs.csv`, `metrics.csv` and, for kinds with per-trial
/// rows, `table.csv`. JSON writes `records.json`. `kind` names the schema
/// used when `records` is empty.
pub fn emit(records: &[RunRecord], kind: ExperimentKind, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, text)?;
        files.push(p);
        Ok(())
    };
    match format {
        Format::Csv => {
            put("epochs.csv", &epochs_csv(records))?;
            put("metrics.csv", &metrics_csv(records, kind)?)?;
            if let Some(t) = table_csv(records)? {
                put("table.csv", &t)?;
            }
        }
        Format::Json => put("records.json", &(serde_json::to_string_pretty(records)? + "\n"))?,
    }
    Ok(files)
}
