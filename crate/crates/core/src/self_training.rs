//! Pseudo-label self-training.
//!
//! Every round pseudo-labels the unlabeled target rows with the current
//! weights, keeps the rows whose confidence strictly exceeds the round's
//! thresholds, then runs a fresh momentum descent on
//! `alpha_t L_s(masked) + beta_t L_tl + gamma_t L_tu(masked, pseudo-labels)`.
//! Labels and masks stay fixed for the whole descent of a round.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    argmax, gd_train, label_accuracy, logits, softmax_probs, GdConfig, LinearClassifier, LossTerm,
};
use crate::error::{Error, Result};
use crate::feature_io::{DataBundle, FeatureMatrix, LabelVector};

/// What a confidence threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Maximum softmax probability.
    Probability,
    /// Maximum raw logit.
    Logit,
}

/// Which class's confidence decides whether a source row is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceConfidence {
    Predicted,
    TrueClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainSchedule {
    pub rounds: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau_source: Vec<f64>,
    pub tau_target: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub gd_iters: usize,
    pub momentum: f64,
    pub threshold_mode: ThresholdMode,
    pub source_confidence: SourceConfidence,
}

/// Target threshold for 1-based `round` of `rounds`: 0.9, 0.8, 0.7 by thirds.
pub fn default_tau_target(round: usize, rounds: usize) -> f64 {
    const THIRDS: [f64; 3] = [0.9, 0.8, 0.7];
    THIRDS[((round - 1) * 3 / rounds).min(2)]
}

impl SelfTrainSchedule {
    /// Default hyperparameters stretched over `rounds` rounds.
    pub fn with_rounds(rounds: usize) -> Self {
        Self {
            rounds,
            alpha: vec![0.1; rounds],
            beta: vec![0.05; rounds],
            gamma: vec![0.9; rounds],
            tau_source: vec![0.8; rounds],
            tau_target: (1..=rounds).map(|t| default_tau_target(t, rounds)).collect(),
            learning_rate: vec![80.0; rounds],
            gd_iters: 200,
            momentum: 0.9,
            threshold_mode: ThresholdMode::Probability,
            source_confidence: SourceConfidence::Predicted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists: [(&str, &Vec<f64>); 6] = [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("tau_source", &self.tau_source),
            ("tau_target", &self.tau_target),
            ("learning_rate", &self.learning_rate),
        ];
        for (name, list) in lists {
            if list.len() != self.rounds {
                return Err(Error::Config(format!(
                    "selftrain.{name} has {} entries for {} rounds",
                    list.len(),
                    self.rounds
                )));
            }
        }
        for (name, list) in &lists[..3] {
            if let Some(v) = list.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!("selftrain.{name} entry {v} must be >= 0")));
            }
        }
        if self.threshold_mode == ThresholdMode::Probability {
            for (name, list) in &lists[3..5] {
                if let Some(v) = list.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Config(format!("selftrain.{name} entry {v} must lie in [0, 1]")));
                }
            }
        }
        if self.rounds > 0 && self.gd_iters == 0 {
            return Err(Error::Config("selftrain.gd_iters must be >= 1".into()));
        }
        if let Some(v) = self.learning_rate.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Config(format!("selftrain.learning_rate entry {v} must be > 0")));
        }
        Ok(())
    }
}

impl Default for SelfTrainSchedule {
    fn default() -> Self {
        Self::with_rounds(30)
    }
}

/// Bookkeeping for one self-training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// 1-based round index.
    pub round: usize,
    pub tau_source: f64,
    pub tau_target: f64,
    pub source_kept: usize,
    pub target_kept: usize,
    /// Smallest round-start confidence among kept target rows.
    pub min_kept_target_confidence: Option<f64>,
    pub loss_start: f64,
    pub loss_end: f64,
    /// Accuracy on the unlabeled target rows after the round, when evaluation
    /// labels are available.
    pub target_accuracy: Option<f64>,
    pub pseudo_labels: Vec<u32>,
}

/// Arg-max labels and maximum softmax probabilities.
pub fn pseudo_label(classifier: &LinearClassifier, x: &FeatureMatrix) -> Result<(LabelVector, Vec<f64>)> {
    let z = logits(classifier, x)?;
    let p = softmax_probs(z.view());
    let labels: Vec<u32> = z.rows().into_iter().map(|r| argmax(r) as u32).collect();
    let conf = p.rows().into_iter().zip(&labels).map(|(r, &l)| r[l as usize]).collect();
    Ok((LabelVector::new(labels, classifier.num_classes())?, conf))
}

/// `mask_i = confidence_i > tau`.
pub fn confidence_mask(confidence: &[f64], tau: f64) -> Vec<bool> {
    confidence.iter().map(|&c| c > tau).collect()
}

fn row_confidence(z: &Array2<f64>, mode: ThresholdMode, class_of: impl Fn(usize) -> usize) -> Vec<f64> {
    match mode {
        ThresholdMode::Logit => z.rows().into_iter().enumerate().map(|(i, r)| r[class_of(i)]).collect(),
        ThresholdMode::Probability => {
            let p = softmax_probs(z.view());
            p.rows().into_iter().enumerate().map(|(i, r)| r[class_of(i)]).collect()
        }
    }
}

/// Runs all scheduled rounds starting from `init`.
pub fn self_train(
    init: &LinearClassifier,
    bundle: &DataBundle,
    schedule: &SelfTrainSchedule,
) -> Result<(LinearClassifier, Vec<RoundTrace>)> {
    schedule.validate()?;
    let mut w = init.clone();
    let mut traces = Vec::with_capacity(schedule.rounds);
    let source = &bundle.source;
    let target = &bundle.target_unlabeled;
    for t in 0..schedule.rounds {
        let round = t + 1;
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let z_target = logits(&w, target).map_err(wrap)?;
        let pseudo: Vec<u32> = z_target.rows().into_iter().map(|r| argmax(r) as u32).collect();
        let target_conf = row_confidence(&z_target, schedule.threshold_mode, |i| pseudo[i] as usize);
        let target_mask = confidence_mask(&target_conf, schedule.tau_target[t]);

        let z_source = logits(&w, &source.features).map_err(wrap)?;
        let source_conf = match schedule.source_confidence {
            SourceConfidence::Predicted => {
                let predicted: Vec<usize> = z_source.rows().into_iter().map(argmax).collect();
                row_confidence(&z_source, schedule.threshold_mode, |i| predicted[i])
            }
            SourceConfidence::TrueClass => row_confidence(&z_source, schedule.threshold_mode, |i| source.labels.get(i)),
        };
        let source_mask = confidence_mask(&source_conf, schedule.tau_source[t]);

        let pseudo_labels = LabelVector::new(pseudo, bundle.num_classes).map_err(wrap)?;
        let source_kept = source_mask.iter().filter(|&&m| m).count();
        let target_kept = target_mask.iter().filter(|&&m| m).count();
        let min_kept_target_confidence = target_conf
            .iter()
            .zip(&target_mask)
            .filter(|(_, &m)| m)
            .map(|(&c, _)| c)
            .reduce(f64::min);

        let mut terms = vec![LossTerm::masked(
            &source.features,
            &source.labels,
            schedule.alpha[t],
            source_mask,
        )];
        if let Some(tl) = &bundle.target_labeled {
            terms.push(LossTerm::unmasked(&tl.features, &tl.labels, schedule.beta[t]));
        }
        terms.push(LossTerm::masked(target, &pseudo_labels, schedule.gamma[t], target_mask));
        let cfg = GdConfig {
            learning_rate: schedule.learning_rate[t],
            iterations: schedule.gd_iters,
            momentum: schedule.momentum,
            nesterov: true,
        };
        let run = gd_train(&w, &terms, &cfg).map_err(wrap)?;
        w = run.classifier;

        let target_accuracy = match &bundle.target_eval_labels {
            Some(eval) => {
                let predicted = crate::classifier::predict(&w, target).map_err(wrap)?;
                Some(label_accuracy(&predicted, eval.as_slice()))
            }
            None => None,
        };
        traces.push(RoundTrace {
            round,
            tau_source: schedule.tau_source[t],
            tau_target: schedule.tau_target[t],
            source_kept,
            target_kept,
            min_kept_target_confidence,
            loss_start: run.losses[0],
            loss_end: run.final_loss,
            target_accuracy,
            pseudo_labels: pseudo_labels.as_slice().to_vec(),
        });
    }
    Ok((w, traces))
}

/// Writes one JSON object per round.
pub fn write_trace_jsonl<W: Write>(traces: &[RoundTrace], mut out: W) -> std::io::Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::LabeledSet;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn default_schedule_values() {
        let s = SelfTrainSchedule::default();
        assert_eq!(s.rounds, 30);
        assert!(s.tau_target[..10].iter().all(|&v| v == 0.9));
        assert!(s.tau_target[10..20].iter().all(|&v| v == 0.8));
        assert!(s.tau_target[20..].iter().all(|&v| v == 0.7));
        assert!(s.alpha.iter().all(|&v| v == 0.1));
        assert!(s.beta.iter().all(|&v| v == 0.05));
        assert!(s.gamma.iter().all(|&v| v == 0.9));
        assert!(s.tau_source.iter().all(|&v| v == 0.8));
        assert!(s.learning_rate.iter().all(|&v| v == 80.0));
        assert_eq!(s.gd_iters, 200);
        s.validate().unwrap();
    }

    #[test]
    fn schedule_length_mismatch_is_config_error() {
        let mut s = SelfTrainSchedule::with_rounds(3);
        s.gamma.pop();
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn pseudo_label_cases() {
        let x = FeatureMatrix::new(array![[1.0, 2.0], [-1.0, 0.5]]).unwrap();
        let (labels, conf) = pseudo_label(&LinearClassifier::zeros(3, 2), &x).unwrap();
        assert_eq!(labels.as_slice(), &[0, 0]);
        assert!(conf.iter().all(|&c| (c - 1.0 / 3.0).abs() < 1e-15));

        let w = LinearClassifier::new(array![[10.0], [-10.0], [-10.0]]).unwrap();
        let (labels, conf) = pseudo_label(&w, &FeatureMatrix::new(array![[1.0]]).unwrap()).unwrap();
        assert_eq!(labels.as_slice(), &[0]);
        assert!(conf[0] > 0.999);
    }

    #[test]
    fn pseudo_label_matches_row_oracle() {
        let mut rng = crate::rng::seeded(5);
        let x = FeatureMatrix::new(Array2::from_shape_simple_fn((30, 6), || rng.random_range(-2.0..2.0))).unwrap();
        let w = LinearClassifier::new(Array2::from_shape_simple_fn((4, 6), || rng.random_range(-2.0..2.0))).unwrap();
        let (labels, conf) = pseudo_label(&w, &x).unwrap();
        for (i, &c) in conf.iter().enumerate() {
            let scores: Vec<f64> = (0..4)
                .map(|k| (0..6).map(|j| x.as_array()[[i, j]] * w.weights()[[k, j]]).sum())
                .collect();
            let mut best = 0;
            for k in 1..4 {
                if scores[k] > scores[best] {
                    best = k;
                }
            }
            let denom: f64 = scores.iter().map(|s| (s - scores[best]).exp()).sum();
            assert_eq!(labels.get(i), best);
            assert!((c - 1.0 / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_is_strict() {
        assert_eq!(confidence_mask(&[0.7, 0.8, 0.9], 0.8), vec![false, false, true]);
        assert!(confidence_mask(&[0.1, 0.5], 0.0).iter().all(|&m| m));
        assert!(confidence_mask(&[1.0, 0.5], 1.0).iter().all(|&m| !m));
    }

    fn toy_bundle(with_labeled: bool) -> DataBundle {
        let mut rng = crate::rng::seeded(8);
        let mut make = |n: usize, shift: f64| {
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let c = i % 3;
                let angle = c as f64 * 2.0 + shift;
                rows.push(angle.cos() + rng.random_range(-0.3..0.3));
                rows.push(angle.sin() + rng.random_range(-0.3..0.3));
                rows.push(0.2);
                labels.push(c as u32);
            }
            let x = crate::feature_io::l2_normalize(&FeatureMatrix::from_rows(n, 3, rows).unwrap()).unwrap();
            LabeledSet::new(x, LabelVector::new(labels, 3).unwrap()).unwrap()
        };
        let source = make(60, 0.0);
        let tl = make(6, 0.4);
        let tu = make(45, 0.4);
        DataBundle::new(source, with_labeled.then_some(tl), tu.features, None, Some(tu.labels)).unwrap()
    }

    #[test]
    fn zero_rounds_returns_init() {
        let b = toy_bundle(true);
        let init = LinearClassifier::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let (w, trace) = self_train(&init, &b, &SelfTrainSchedule::with_rounds(0)).unwrap();
        assert_eq!(w, init);
        assert!(trace.is_empty());
    }

    #[test]
    fn without_target_term_it_is_repeated_labeled_training() {
        let b = toy_bundle(true);
        let init = LinearClassifier::zeros(3, 3);
        let mut s = SelfTrainSchedule::with_rounds(3);
        s.gamma = vec![0.0; 3];
        s.tau_source = vec![0.0; 3];
        s.alpha = vec![0.4; 3];
        s.beta = vec![0.2; 3];
        s.learning_rate = vec![5.0; 3];
        s.gd_iters = 20;
        let (w, trace) = self_train(&init, &b, &s).unwrap();
        assert_eq!(trace.len(), 3);

        let tl = b.target_labeled.as_ref().unwrap();
        let terms = [
            LossTerm::unmasked(&b.source.features, &b.source.labels, 0.4),
            LossTerm::unmasked(&tl.features, &tl.labels, 0.2),
        ];
        let mut expected = init.clone();
        for _ in 0..3 {
            expected = gd_train(&expected, &terms, &GdConfig::new(5.0, 20)).unwrap().classifier;
        }
        assert_eq!(w, expected);
    }

    #[test]
    fn unit_target_threshold_reduces_to_masked_source() {
        let b = toy_bundle(false);
        let init = crate::classifier::train_labeled(&b, 0.4, 0.2, &GdConfig::new(10.0, 50))
            .unwrap()
            .classifier;
        let mut s = SelfTrainSchedule::with_rounds(1);
        s.tau_target = vec![1.0];
        s.beta = vec![0.0];
        s.gd_iters = 30;
        let (w, trace) = self_train(&init, &b, &s).unwrap();
        assert_eq!(trace[0].target_kept, 0);

        let (_, conf) = pseudo_label(&init, &b.source.features).unwrap();
        let mask = confidence_mask(&conf, 0.8);
        let term = LossTerm::masked(&b.source.features, &b.source.labels, 0.1, mask);
        let expected = gd_train(&init, &[term], &GdConfig::new(80.0, 30)).unwrap().classifier;
        assert_eq!(w, expected);

        // with every threshold at 1 nothing is kept and W cannot move
        s.tau_source = vec![1.0];
        let (w, trace) = self_train(&init, &b, &s).unwrap();
        assert_eq!((trace[0].source_kept, trace[0].target_kept), (0, 0));
        assert_eq!(w, init);
    }

    #[test]
    fn kept_rows_exceed_threshold_and_runs_repeat() {
        let b = toy_bundle(true);
        let init = crate::classifier::train_labeled(&b, 0.4, 0.2, &GdConfig::new(10.0, 50))
            .unwrap()
            .classifier;
        let mut s = SelfTrainSchedule::with_rounds(6);
        s.gd_iters = 20;
        s.learning_rate = vec![10.0; 6];
        let (w, trace) = self_train(&init, &b, &s).unwrap();
        assert_eq!(trace.len(), 6);

        // replay round by round: each round's labels come from W at round start
        let mut cur = init.clone();
        for (t, rt) in trace.iter().enumerate() {
            let (labels, conf) = pseudo_label(&cur, &b.target_unlabeled).unwrap();
            assert_eq!(labels.as_slice(), rt.pseudo_labels.as_slice());
            let kept = confidence_mask(&conf, rt.tau_target);
            assert_eq!(kept.iter().filter(|&&m| m).count(), rt.target_kept);
            if let Some(min) = rt.min_kept_target_confidence {
                assert!(min > rt.tau_target);
            }
            assert!(rt.source_kept <= b.source.features.n());
            assert!(rt.target_kept <= b.target_unlabeled.n());
            let mut one = s.clone();
            one.rounds = 1;
            for list in [
                &mut one.alpha,
                &mut one.beta,
                &mut one.gamma,
                &mut one.tau_source,
                &mut one.tau_target,
                &mut one.learning_rate,
            ] {
                *list = vec![list[t]];
            }
            cur = self_train(&cur, &b, &one).unwrap().0;
        }
        assert_eq!(cur, w);

        let (w2, trace2) = self_train(&init, &b, &s).unwrap();
        assert_eq!(w2, w);
        assert_eq!(trace2, trace);

        let mut buf = Vec::new();
        write_trace_jsonl(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        let first: RoundTrace = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, trace[0]);
    }

    #[test]
    fn logit_mode_thresholds_raw_scores() {
        let b = toy_bundle(false);
        let init = crate::classifier::train_labeled(&b, 0.4, 0.2, &GdConfig::new(10.0, 50))
            .unwrap()
            .classifier;
        let mut s = SelfTrainSchedule::with_rounds(1);
        s.threshold_mode = ThresholdMode::Logit;
        s.tau_target = vec![f64::MAX];
        s.gd_iters = 5;
        let (_, trace) = self_train(&init, &b, &s).unwrap();
        assert_eq!(trace[0].target_kept, 0);
        s.tau_target = vec![f64::MIN];
        let (_, trace) = self_train(&init, &b, &s).unwrap();
        assert_eq!(trace[0].target_kept, b.target_unlabeled.n());
    }
}
