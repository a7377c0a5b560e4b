//! Pipeline configuration and its `key = value` text form.
//!
//! Lines are `key = value`; `#` starts a comment. Per-round schedules accept
//! a scalar (broadcast to every round), a comma list, or run-length items
//! such as `0.9*10, 0.8*10, 0.7*10`. Setting `selftrain.rounds` resets every
//! schedule to its default for the new length before other keys apply.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coral::CoralConfig;
use crate::ensemble::Combiner;
use crate::error::{Error, Result};
use crate::feature_io::SplitSpec;
use crate::padd::PaddConfig;
use crate::self_training::{SelfTrainSchedule, SourceConfidence, ThresholdMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aligner {
    Coral,
    Padd,
    None,
}

/// Hyperparameters of the labeled-stage training from zero weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledParams {
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub iters: usize,
    pub momentum: f64,
}

impl Default for LabeledParams {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.2,
            learning_rate: 40.0,
            iters: 400,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub aligner: Aligner,
    pub coral: CoralConfig,
    pub padd: PaddConfig,
    pub labeled: LabeledParams,
    pub selftrain: SelfTrainSchedule,
    pub combiners: Vec<Combiner>,
    pub pca_k: Option<usize>,
    pub bagging: Option<usize>,
    pub members: Vec<PathBuf>,
    pub parallelism: usize,
    pub split: SplitSpec,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            aligner: Aligner::Coral,
            coral: CoralConfig::default(),
            padd: PaddConfig::default(),
            labeled: LabeledParams::default(),
            selftrain: SelfTrainSchedule::default(),
            combiners: vec![Combiner::Average],
            pca_k: None,
            bagging: None,
            members: Vec::new(),
            parallelism: 1,
            split: SplitSpec::default(),
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    match value.trim() {
        "" | "none" | "off" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

/// Expands a schedule value to exactly `rounds` entries.
pub fn parse_schedule(key: &str, value: &str, rounds: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for item in value.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err(Error::Config(format!("{key}: empty schedule item")));
        }
        match item.split_once('*') {
            Some((v, count)) => {
                let v: f64 = parse_num(key, v)?;
                let count: usize = parse_num(key, count)?;
                out.extend(std::iter::repeat_n(v, count));
            }
            None => out.push(parse_num(key, item)?),
        }
    }
    if out.len() == 1 && rounds != 1 {
        return Ok(vec![out[0]; rounds]);
    }
    if out.len() != rounds {
        return Err(Error::Config(format!(
            "{key}: schedule has {} entries for {rounds} rounds",
            out.len()
        )));
    }
    Ok(out)
}

/// Splits config text into `(key, value)` pairs in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl PipelineConfig {
    /// Applies `pairs` in order, except that `selftrain.rounds` is applied
    /// first. Later duplicates win.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        if let Some((k, v)) = pairs.iter().rev().find(|(k, _)| k == "selftrain.rounds") {
            let rounds: usize = parse_num(k, v)?;
            let keep = self.selftrain.clone();
            self.selftrain = SelfTrainSchedule {
                gd_iters: keep.gd_iters,
                momentum: keep.momentum,
                threshold_mode: keep.threshold_mode,
                source_confidence: keep.source_confidence,
                ..SelfTrainSchedule::with_rounds(rounds)
            };
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "selftrain.rounds") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = self.selftrain.rounds;
        match key {
            "aligner" => {
                self.aligner = match value {
                    "coral" => Aligner::Coral,
                    "padd" => Aligner::Padd,
                    "none" => Aligner::None,
                    _ => return Err(Error::Config(format!("unknown aligner '{value}'"))),
                }
            }
            "coral.lambda" => self.coral.lambda = parse_num(key, value)?,
            "padd.rounds" => self.padd.rounds = parse_num(key, value)?,
            "padd.gd_iters" => self.padd.gd_iters = parse_num(key, value)?,
            "padd.learning_rate" => self.padd.learning_rate = parse_num(key, value)?,
            "padd.momentum" => self.padd.momentum = parse_num(key, value)?,
            "padd.l1_lambda" => self.padd.l1_lambda = parse_num(key, value)?,
            "labeled.alpha" => self.labeled.alpha = parse_num(key, value)?,
            "labeled.beta" => self.labeled.beta = parse_num(key, value)?,
            "labeled.learning_rate" => self.labeled.learning_rate = parse_num(key, value)?,
            "labeled.iters" => self.labeled.iters = parse_num(key, value)?,
            "labeled.momentum" => self.labeled.momentum = parse_num(key, value)?,
            "selftrain.rounds" => {
                let rounds: usize = parse_num(key, value)?;
                if rounds != t {
                    return Err(Error::Config("selftrain.rounds must be set through apply()".into()));
                }
            }
            "selftrain.alpha" => self.selftrain.alpha = parse_schedule(key, value, t)?,
            "selftrain.beta" => self.selftrain.beta = parse_schedule(key, value, t)?,
            "selftrain.gamma" => self.selftrain.gamma = parse_schedule(key, value, t)?,
            "selftrain.tau_source" => self.selftrain.tau_source = parse_schedule(key, value, t)?,
            "selftrain.tau_target" => self.selftrain.tau_target = parse_schedule(key, value, t)?,
            "selftrain.learning_rate" => self.selftrain.learning_rate = parse_schedule(key, value, t)?,
            "selftrain.gd_iters" => self.selftrain.gd_iters = parse_num(key, value)?,
            "selftrain.momentum" => self.selftrain.momentum = parse_num(key, value)?,
            "selftrain.threshold_mode" => {
                self.selftrain.threshold_mode = match value {
                    "probability" => ThresholdMode::Probability,
                    "logit" => ThresholdMode::Logit,
                    _ => return Err(Error::Config(format!("unknown threshold mode '{value}'"))),
                }
            }
            "selftrain.source_confidence" => {
                self.selftrain.source_confidence = match value {
                    "predicted" => SourceConfidence::Predicted,
                    "true_class" => SourceConfidence::TrueClass,
                    _ => return Err(Error::Config(format!("unknown source confidence '{value}'"))),
                }
            }
            "combiners" => {
                self.combiners = if value.trim() == "all" {
                    Combiner::ALL.to_vec()
                } else {
                    value
                        .split(',')
                        .map(|c| Combiner::parse(c.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "pca_k" => self.pca_k = parse_optional(key, value)?,
            "bagging" => self.bagging = parse_optional(key, value)?,
            "members" => {
                self.members = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "parallelism" => self.parallelism = parse_num(key, value)?,
            "split.shots" => self.split.shots = parse_num(key, value)?,
            "split.val_per_class" => self.split.val_per_class = parse_num(key, value)?,
            "split.seed" => self.split.seed = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Defaults, then the file at `path` (if any), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend_from_slice(overrides);
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        self.coral.validate().map_err(as_config)?;
        self.padd.validate().map_err(as_config)?;
        self.selftrain.validate()?;
        let l = &self.labeled;
        if !(l.alpha >= 0.0) || !(l.beta >= 0.0) {
            return Err(Error::Config("labeled.alpha and labeled.beta must be >= 0".into()));
        }
        crate::classifier::GdConfig {
            learning_rate: l.learning_rate,
            iterations: l.iters,
            momentum: l.momentum,
            nesterov: true,
        }
        .validate()
        .map_err(as_config)?;
        if self.combiners.is_empty() {
            return Err(Error::Config("at least one combiner is required".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        if self.pca_k.is_some() && self.bagging.is_some() {
            return Err(Error::Config("pca_k and bagging cannot be combined".into()));
        }
        if self.pca_k == Some(0) {
            return Err(Error::Config("pca_k must be >= 1".into()));
        }
        if let Some(b) = self.bagging {
            if b == 0 {
                return Err(Error::Config("bagging needs at least one member".into()));
            }
            if self.members.len() > 1 {
                return Err(Error::Config(format!(
                    "bagging resamples a single bundle, {} member inputs given",
                    self.members.len()
                )));
            }
        }
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Parameter(msg) => Error::Config(msg),
        other => other,
    }
}
