//! Experiment configuration.
//!
//! The text form is one `key = value` per line with dotted section names
//! (`model.heads = 4`). Blank lines and lines starting with `#` are ignored.
//! Values are read as booleans, integers, floats, comma-separated lists or
//! strings, in that order; wrap a value in double quotes to force a string.
//! The same structure is accepted as JSON. Every field has a default and
//! unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::models::{QuantizerSettings, Site};
use crate::numerics::Method;
use crate::quantizer::Discretization;
use crate::theory::BoundInputs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Adding,
    Gridworld,
    TransformerToy,
    GaussianAnalysis,
    Bounds,
    Hoeffding,
    Ablation,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Adding => "adding",
            ExperimentKind::Gridworld => "gridworld",
            ExperimentKind::TransformerToy => "transformer-toy",
            ExperimentKind::GaussianAnalysis => "gaussian-analysis",
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::Hoeffding => "hoeffding",
            ExperimentKind::Ablation => "ablation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Vq,
    Gumbel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub discretize: bool,
    pub codebook_size: usize,
    pub heads: usize,
    pub beta: f64,
    /// Defaults per architecture when absent.
    pub codebook_loss_weight: Option<f64>,
    pub site: Site,
    pub method: MethodName,
    pub temperature: f64,
    pub modules: usize,
    pub hidden: usize,
    pub k: usize,
    pub node_dim: usize,
    pub message_dim: usize,
    pub dim: usize,
    pub attention_heads: usize,
    pub blocks: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            discretize: true,
            codebook_size: 16,
            heads: 2,
            beta: 0.25,
            codebook_loss_weight: None,
            site: Site::CommunicationResult,
            method: MethodName::Vq,
            temperature: 1.0,
            modules: 4,
            hidden: 8,
            k: 2,
            node_dim: 4,
            message_dim: 16,
            dim: 32,
            attention_heads: 2,
            blocks: 2,
        }
    }
}

impl ModelSection {
    pub fn discretization(&self) -> Discretization {
        match self.method {
            MethodName::Vq => Discretization::Vq,
            MethodName::Gumbel => Discretization::Gumbel {
                temperature: self.temperature,
            },
        }
    }

    /// Quantizer settings, or `None` when discretization is off.
    pub fn quantizer(&self, default_weight: f64) -> Option<QuantizerSettings> {
        self.discretize.then(|| QuantizerSettings {
            codebook_size: self.codebook_size,
            heads: self.heads,
            beta: self.beta,
            codebook_loss_weight: self.codebook_loss_weight.unwrap_or(default_weight),
            method: self.discretization(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub seq_len: usize,
    pub train_gap: usize,
    pub val_gap: usize,
    pub test_gap: usize,
    pub max_value: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub grid_size: usize,
    pub train_objects: usize,
    pub ood_objects: Vec<usize>,
    pub episodes: usize,
    pub steps: usize,
    pub test_episodes: usize,
    pub vocab: usize,
    pub train_len: usize,
    pub test_len: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            seq_len: 10,
            train_gap: 50,
            val_gap: 20,
            test_gap: 100,
            max_value: 1.0,
            train_samples: 512,
            test_samples: 256,
            grid_size: 5,
            train_objects: 5,
            ood_objects: vec![3, 2],
            episodes: 100,
            steps: 10,
            test_episodes: 20,
            vocab: 4,
            train_len: 8,
            test_len: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults per architecture when absent.
    pub lr: Option<f64>,
    pub optimizer: Method,
    pub warmup_vectors: usize,
    pub clip_norm: f64,
    pub margin: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 15,
            batch_size: 16,
            lr: None,
            optimizer: Method::Adam,
            warmup_vectors: crate::quantizer::WARMUP_VECTORS,
            clip_norm: 1.0,
            margin: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub bounds: BoundInputs,
    pub d: usize,
    pub trials: usize,
    pub m: usize,
    pub l_values: Vec<usize>,
    pub g_values: Vec<usize>,
    pub samples: usize,
    pub variance_trials: usize,
    pub train_distractors: usize,
    pub test_distractors: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            bounds: BoundInputs {
                g: 2.0,
                l: 4.0,
                n: 2000.0,
                m: 8.0,
                ..Default::default()
            },
            d: 2,
            trials: 200,
            m: 8,
            l_values: vec![1, 8],
            g_values: vec![1, 2, 4, 8],
            samples: 256,
            variance_trials: 20,
            train_distractors: 3,
            test_distractors: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub task: TaskSection,
    pub train: TrainSection,
    pub theory: TheorySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Adding,
            seed: 0,
            out: None,
            model: ModelSection::default(),
            task: TaskSection::default(),
            train: TrainSection::default(),
            theory: TheorySection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            ..Default::default()
        }
    }

    /// Parses either form; text starting with `{` is read as JSON.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_key_values(text)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut root = Value::Object(Map::new());
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            set_path(&mut root, key.trim(), parse_scalar(value.trim()))
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        serde_json::from_value(root).map_err(|e| Error::config(e.to_string()))
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for (k, raw) in overrides {
            set_path(&mut v, k, parse_scalar(raw)).map_err(Error::config)?;
        }
        serde_json::from_value(v).map_err(|e| Error::config(e.to_string()))
    }

    /// The config as sorted dotted `key = value` lines.
    pub fn to_key_values(&self) -> Result<String> {
        let mut lines = Vec::new();
        flatten("", &serde_json::to_value(self)?, &mut lines);
        Ok(lines.join("\n") + "\n")
    }

    pub fn learning_rate(&self) -> f64 {
        self.train.lr.unwrap_or(match self.kind {
            ExperimentKind::Gridworld => 5e-4,
            _ => 1e-3,
        })
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Null => {}
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(|i| i.to_string()).collect();
            out.push(format!("{prefix} = {}", parts.join(",")));
        }
        Value::String(s) => out.push(format!("{prefix} = \"{s}\"")),
        other => out.push(format!("{prefix} = {other}")),
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> std::result::Result<(), String> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(format!("malformed key `{key}`"));
    }
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let map = cur.as_object_mut().ok_or_else(|| format!("`{key}` descends into a value"))?;
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
    }
    let map = cur.as_object_mut().ok_or_else(|| format!("`{key}` descends into a value"))?;
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_scalar(raw: &str) -> Value {
    if raw.len() >= 2 && raw.starts_with('"') && raw.ends_with('"') {
        return Value::String(raw[1..raw.len() - 1].to_string());
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| parse_scalar(p.trim())).collect());
    }
    match raw {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(i) = raw.parse::<u64>() {
        return Value::Number(i.into());
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::Number(i.into());
    }
    if let Some(n) = raw.parse::<f64>().ok().and_then(Number::from_f64) {
        return Value::Number(n);
    }
    Value::String(raw.to_string())
}
