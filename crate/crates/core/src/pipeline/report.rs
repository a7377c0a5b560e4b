use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineConfig;
use crate::classifier::label_accuracy;
use crate::ensemble::{Combiner, PredictionSet};
use crate::error::Error;
use crate::feature_io::LabelVector;
use crate::self_training::RoundTrace;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub align: f64,
    pub normalize: f64,
    pub train_labeled: f64,
    pub self_train: f64,
    pub predict: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberStatus {
    Ok,
    Failed,
}

/// A round trace without the per-row pseudo-labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub source_kept: usize,
    pub target_kept: usize,
    pub loss_start: f64,
    pub loss_end: f64,
    pub target_accuracy: Option<f64>,
}

impl From<&RoundTrace> for RoundSummary {
    fn from(t: &RoundTrace) -> Self {
        Self {
            round: t.round,
            source_kept: t.source_kept,
            target_kept: t.target_kept,
            loss_start: t.loss_start,
            loss_end: t.loss_end,
            target_accuracy: t.target_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub member: usize,
    pub name: String,
    pub status: MemberStatus,
    pub error: Option<String>,
    /// Accuracy on the unlabeled target rows after self-training.
    pub target_accuracy: Option<f64>,
    /// Accuracy on the unlabeled target rows before self-training.
    pub labeled_target_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub source_accuracy: Option<f64>,
    pub labeled_losses: Vec<f64>,
    pub labeled_final_loss: Option<f64>,
    pub rounds: Vec<RoundSummary>,
    pub timing_ms: StageTimings,
}

impl MemberReport {
    pub fn failed(member: usize, name: &str, err: &Error) -> Self {
        Self {
            member,
            name: name.to_string(),
            status: MemberStatus::Failed,
            error: Some(err.to_string()),
            target_accuracy: None,
            labeled_target_accuracy: None,
            validation_accuracy: None,
            source_accuracy: None,
            labeled_losses: Vec::new(),
            labeled_final_loss: None,
            rounds: Vec::new(),
            timing_ms: StageTimings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerReport {
    pub combiner: Combiner,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub labels: Option<LabelVector>,
}

impl CombinerReport {
    pub fn evaluate(combiner: Combiner, members: &[PredictionSet], eval: Option<&LabelVector>) -> Self {
        match combiner.combine(members) {
            Ok(labels) => Self {
                combiner,
                accuracy: eval.map(|y| label_accuracy(labels.as_slice(), y.as_slice())),
                error: None,
                labels: Some(labels),
            },
            Err(e) => Self {
                combiner,
                accuracy: None,
                error: Some(e.to_string()),
                labels: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub members: Vec<MemberReport>,
    /// Mean target accuracy over members that finished.
    pub mean_member_accuracy: Option<f64>,
    pub ensemble: Vec<CombinerReport>,
    pub timing_ms: f64,
}

impl RunReport {
    pub fn new(
        config: PipelineConfig,
        members: Vec<MemberReport>,
        ensemble: Vec<CombinerReport>,
        timing_ms: f64,
    ) -> Self {
        let accs: Vec<f64> = members.iter().filter_map(|m| m.target_accuracy).collect();
        let mean_member_accuracy = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
        Self {
            format_version: REPORT_FORMAT_VERSION,
            config,
            members,
            mean_member_accuracy,
            ensemble,
            timing_ms,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn ensemble_accuracy(&self, combiner: Combiner) -> Option<f64> {
        self.ensemble
            .iter()
            .find(|c| c.combiner == combiner)
            .and_then(|c| c.accuracy)
    }
}

/// Removes every `timing_ms` field, at any depth.
pub fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("timing_ms");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
