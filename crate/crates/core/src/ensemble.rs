//! Combining member predictions.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::classifier::argmax;
use crate::error::{Error, Result};
use crate::feature_io::LabelVector;
use crate::rng;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Class probabilities of one member on the unlabeled target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub member: usize,
    probs: Array2<f64>,
    pub validation_accuracy: Option<f64>,
}

impl PredictionSet {
    pub fn new(member: usize, probs: Array2<f64>, validation_accuracy: Option<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Shape("prediction set must be non-empty".into()));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Validation(format!(
                    "member {member}: row {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        if let Some(acc) = validation_accuracy {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Validation(format!(
                    "member {member}: validation accuracy {acc} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            member,
            probs,
            validation_accuracy,
        })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.probs.rows().into_iter().map(argmax).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteWeighting {
    Confidence,
    ConfidenceAndValidation,
}

/// Combiner selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Average,
    Majority,
    WeightedConfidence,
    WeightedValidation,
}

impl Combiner {
    pub const ALL: [Combiner; 4] = [
        Combiner::Average,
        Combiner::Majority,
        Combiner::WeightedConfidence,
        Combiner::WeightedValidation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Combiner::Average => "average",
            Combiner::Majority => "majority",
            Combiner::WeightedConfidence => "weighted_confidence",
            Combiner::WeightedValidation => "weighted_validation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown combiner '{s}'")))
    }

    pub fn combine(self, members: &[PredictionSet]) -> Result<LabelVector> {
        match self {
            Combiner::Average => average_predict(members),
            Combiner::Majority => majority_vote(members),
            Combiner::WeightedConfidence => weighted_vote(members, VoteWeighting::Confidence),
            Combiner::WeightedValidation => weighted_vote(members, VoteWeighting::ConfidenceAndValidation),
        }
    }
}

/// Checks shapes and returns the members ordered by id, so floating-point
/// sums do not depend on the order the caller passed them in.
fn check_members(members: &[PredictionSet]) -> Result<(usize, usize, Vec<&PredictionSet>)> {
    let first = members
        .first()
        .ok_or_else(|| Error::Validation("no ensemble members to combine".into()))?;
    let shape = (first.n(), first.num_classes());
    for m in &members[1..] {
        if (m.n(), m.num_classes()) != shape {
            return Err(Error::Shape(format!(
                "member {} predicts {}x{}, member {} predicts {}x{}",
                m.member,
                m.n(),
                m.num_classes(),
                first.member,
                shape.0,
                shape.1
            )));
        }
    }
    let mut ordered: Vec<&PredictionSet> = members.iter().collect();
    ordered.sort_by_key(|m| m.member);
    Ok((shape.0, shape.1, ordered))
}

fn to_labels(rows: impl Iterator<Item = usize>, k: usize) -> Result<LabelVector> {
    LabelVector::new(rows.map(|l| l as u32).collect(), k)
}

/// Argmax of the summed member probabilities.
pub fn average_predict(members: &[PredictionSet]) -> Result<LabelVector> {
    let (n, k, members) = check_members(members)?;
    let mut sum = Array2::<f64>::zeros((n, k));
    for m in members {
        sum += m.probs();
    }
    to_labels(sum.rows().into_iter().map(argmax), k)
}

/// Argmax of per-class `scores`, restricted to the classes whose score is
/// maximal, broken by `tie_break` and then by lowest index.
fn pick(scores: &Array1<f64>, tie_break: &Array1<f64>) -> usize {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for c in 0..scores.len() {
        if scores[c] != top {
            continue;
        }
        match best {
            Some(b) if tie_break[c] <= tie_break[b] => {}
            _ => best = Some(c),
        }
    }
    best.unwrap_or(0)
}

/// Plurality of member argmaxes; ties go to the larger probability sum over
/// the tied classes, then to the lowest index.
pub fn majority_vote(members: &[PredictionSet]) -> Result<LabelVector> {
    let (n, k, members) = check_members(members)?;
    let member_labels: Vec<Vec<usize>> = members.iter().map(|m| m.labels()).collect();
    let labels = (0..n).map(|i| {
        let mut counts = Array1::<f64>::zeros(k);
        let mut prob_sum = Array1::<f64>::zeros(k);
        for (m, labels) in members.iter().zip(&member_labels) {
            counts[labels[i]] += 1.0;
            prob_sum += &m.probs().row(i);
        }
        pick(&counts, &prob_sum)
    });
    to_labels(labels, k)
}

/// Each member votes for its argmax with weight equal to its maximum
/// probability, times its validation accuracy in the combined mode.
pub fn weighted_vote(members: &[PredictionSet], mode: VoteWeighting) -> Result<LabelVector> {
    let (n, k, members) = check_members(members)?;
    let scale: Vec<f64> = match mode {
        VoteWeighting::Confidence => vec![1.0; members.len()],
        VoteWeighting::ConfidenceAndValidation => members
            .iter()
            .map(|m| {
                m.validation_accuracy.ok_or_else(|| {
                    Error::Validation(format!(
                        "member {} has no validation accuracy for weighted voting",
                        m.member
                    ))
                })
            })
            .collect::<Result<_>>()?,
    };
    let member_labels: Vec<Vec<usize>> = members.iter().map(|m| m.labels()).collect();
    let zeros = Array1::<f64>::zeros(k);
    let labels = (0..n).map(|i| {
        let mut weight = Array1::<f64>::zeros(k);
        for ((m, labels), s) in members.iter().zip(&member_labels).zip(&scale) {
            let c = labels[i];
            weight[c] += m.probs()[[i, c]] * s;
        }
        pick(&weight, &zeros)
    });
    to_labels(labels, k)
}

/// `n` uniform draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Validation("cannot bootstrap an empty set".into()));
    }
    let mut gen = rng::seeded(seed);
    Ok((0..n).map(|_| rng::below(&mut gen, n as u64) as usize).collect())
}
