//! Zero-bias multinomial logistic regression trained by full-batch gradient
//! descent with Nesterov momentum.
//!
//! Each [`LossTerm`] contributes `weight / n * sum_i mask_i * CE(softmax(x_i W^T), y_i)`
//! where `n` is the full row count of the term, masked rows included.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::{DataBundle, FeatureMatrix, LabelVector};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PACW";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: usize = 24;

/// Weight matrix `W` of shape `K x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Array2<f64>,
}

impl LinearClassifier {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("classifier weights must be finite".into()));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Validation("classifier must have K, d >= 1".into()));
        }
        Ok(Self { weights })
    }

    pub fn zeros(num_classes: usize, d: usize) -> Self {
        Self {
            weights: Array2::zeros((num_classes, d)),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, d) = self.weights.dim();
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 8 * k * d);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(k as u64).to_le_bytes());
        out.extend_from_slice(&(d as u64).to_le_bytes());
        for v in self.weights.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_HEADER_LEN {
            return Err(Error::Format("checkpoint shorter than its header".into()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic, expected \"PACW\"".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let k = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let expected = k
            .checked_mul(d)
            .and_then(|c| c.checked_mul(8))
            .and_then(|c| usize::try_from(c).ok())
            .ok_or_else(|| Error::Format("checkpoint dimensions overflow".into()))?;
        let payload = &bytes[CHECKPOINT_HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::Length {
                expected,
                found: payload.len(),
            });
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let weights =
            Array2::from_shape_vec((k as usize, d as usize), values).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One weighted, optionally masked cross-entropy term.
#[derive(Debug, Clone)]
pub struct LossTerm<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: &'a LabelVector,
    pub weight: f64,
    /// `None` keeps every row.
    pub mask: Option<Vec<bool>>,
}

impl<'a> LossTerm<'a> {
    pub fn unmasked(features: &'a FeatureMatrix, labels: &'a LabelVector, weight: f64) -> Self {
        Self {
            features,
            labels,
            weight,
            mask: None,
        }
    }

    pub fn masked(features: &'a FeatureMatrix, labels: &'a LabelVector, weight: f64, mask: Vec<bool>) -> Self {
        Self {
            features,
            labels,
            weight,
            mask: Some(mask),
        }
    }

    fn validate(&self, num_classes: usize, d: usize) -> Result<()> {
        if self.features.d() != d {
            return Err(Error::Shape(format!(
                "term features have d={}, weights have d={d}",
                self.features.d()
            )));
        }
        if self.labels.len() != self.features.n() {
            return Err(Error::Shape(format!(
                "term has {} rows but {} labels",
                self.features.n(),
                self.labels.len()
            )));
        }
        if self.labels.num_classes() > num_classes {
            return Err(Error::Shape(format!(
                "labels use K={}, classifier has K={num_classes}",
                self.labels.num_classes()
            )));
        }
        if let Some(mask) = &self.mask {
            if mask.len() != self.features.n() {
                return Err(Error::Shape(format!(
                    "mask has length {}, term has {} rows",
                    mask.len(),
                    self.features.n()
                )));
            }
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Parameter(format!(
                "term weight must be finite and >= 0, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// A term reduced to its active rows, with `weight / n_full` folded in.
struct PreparedTerm {
    x: Array2<f64>,
    y: Vec<usize>,
    scale: f64,
}

fn prepare(terms: &[LossTerm<'_>], num_classes: usize, d: usize) -> Result<Vec<PreparedTerm>> {
    let mut out = Vec::with_capacity(terms.len());
    for term in terms {
        term.validate(num_classes, d)?;
        if term.weight == 0.0 {
            continue;
        }
        let n_full = term.features.n();
        let active: Vec<usize> = match &term.mask {
            None => (0..n_full).collect(),
            Some(mask) => (0..n_full).filter(|&i| mask[i]).collect(),
        };
        if active.is_empty() {
            continue;
        }
        let x = if active.len() == n_full {
            term.features.as_array().clone()
        } else {
            term.features.as_array().select(Axis(0), &active)
        };
        out.push(PreparedTerm {
            x,
            y: active.iter().map(|&i| term.labels.get(i)).collect(),
            scale: term.weight / n_full as f64,
        });
    }
    Ok(out)
}

fn evaluate(weights: &Array2<f64>, prepared: &[PreparedTerm]) -> (f64, Array2<f64>) {
    let mut loss = 0.0;
    let mut grad = Array2::zeros(weights.dim());
    for term in prepared {
        let mut z = term.x.dot(&weights.t());
        let mut term_loss = 0.0;
        for (mut row, &y) in z.rows_mut().into_iter().zip(&term.y) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            // row now holds exp(z - max); CE = log(sum) - (z_y - max)
            term_loss += sum.ln() - row[y].ln();
            let inv = 1.0 / sum;
            row.mapv_inplace(|v| v * inv * term.scale);
            row[y] -= term.scale;
        }
        loss += term.scale * term_loss;
        // z now holds scale * (p - onehot)
        ndarray::linalg::general_mat_mul(1.0, &z.t(), &term.x, 1.0, &mut grad);
    }
    (loss, grad)
}

/// `X W^T`.
pub fn logits(classifier: &LinearClassifier, x: &FeatureMatrix) -> Result<Array2<f64>> {
    if x.d() != classifier.d() {
        return Err(Error::Shape(format!(
            "features have d={}, classifier has d={}",
            x.d(),
            classifier.d()
        )));
    }
    Ok(x.as_array().dot(&classifier.weights.t()))
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_probs(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(classifier: &LinearClassifier, x: &FeatureMatrix) -> Result<Vec<u32>> {
    let z = logits(classifier, x)?;
    Ok(z.rows().into_iter().map(|r| argmax(r) as u32).collect())
}

/// Weighted masked cross-entropy and its exact gradient with respect to `W`.
pub fn loss_and_grad(classifier: &LinearClassifier, terms: &[LossTerm<'_>]) -> Result<(f64, Array2<f64>)> {
    let prepared = prepare(terms, classifier.num_classes(), classifier.d())?;
    Ok(evaluate(&classifier.weights, &prepared))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum: f64,
    pub nesterov: bool,
}

impl GdConfig {
    pub fn new(learning_rate: f64, iterations: usize) -> Self {
        Self {
            learning_rate,
            iterations,
            momentum: 0.9,
            nesterov: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Result of [`gd_train`].
#[derive(Debug, Clone)]
pub struct GdRun {
    pub classifier: LinearClassifier,
    /// Objective at the point where each iteration's gradient was taken
    /// (the look-ahead point under Nesterov momentum).
    pub losses: Vec<f64>,
    /// Objective at the returned weights.
    pub final_loss: f64,
}

/// Runs exactly `cfg.iterations` momentum steps from `init`:
/// `v <- mu v - lr grad(W + mu v); W <- W + v` (Nesterov) or
/// `v <- mu v - lr grad(W); W <- W + v` (heavy ball).
pub fn gd_train(init: &LinearClassifier, terms: &[LossTerm<'_>], cfg: &GdConfig) -> Result<GdRun> {
    cfg.validate()?;
    let prepared = prepare(terms, init.num_classes(), init.d())?;
    let mu = cfg.momentum;
    let mut w = init.weights.clone();
    let mut velocity = Array2::<f64>::zeros(w.dim());
    let mut losses = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let (loss, grad) = if cfg.nesterov {
            let look_ahead = &w + &(&velocity * mu);
            evaluate(&look_ahead, &prepared)
        } else {
            evaluate(&w, &prepared)
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration, loss });
        }
        losses.push(loss);
        velocity *= mu;
        velocity.scaled_add(-cfg.learning_rate, &grad);
        w += &velocity;
    }
    let (final_loss, _) = evaluate(&w, &prepared);
    if !final_loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            iteration: cfg.iterations,
            loss: final_loss,
        });
    }
    Ok(GdRun {
        classifier: LinearClassifier { weights: w },
        losses,
        final_loss,
    })
}

/// Labeled-stage training from zero weights on source (weight `alpha`) and,
/// when present, labeled target (weight `beta`).
pub fn train_labeled(bundle: &DataBundle, alpha: f64, beta: f64, cfg: &GdConfig) -> Result<GdRun> {
    let mut terms = vec![LossTerm::unmasked(
        &bundle.source.features,
        &bundle.source.labels,
        alpha,
    )];
    if let Some(tl) = &bundle.target_labeled {
        terms.push(LossTerm::unmasked(&tl.features, &tl.labels, beta));
    }
    let init = LinearClassifier::zeros(bundle.num_classes, bundle.d());
    gd_train(&init, &terms, cfg)
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(classifier: &LinearClassifier, x: &FeatureMatrix, y: &LabelVector) -> Result<f64> {
    if x.n() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.n(), y.len())));
    }
    let predicted = predict(classifier, x)?;
    Ok(label_accuracy(&predicted, y.as_slice()))
}

pub fn label_accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Maximum softmax probability per row.
pub fn max_probability(probs: &Array2<f64>) -> Array1<f64> {
    probs
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, rng: &mut crate::rng::PaceRng) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let x = FeatureMatrix::new(array![[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let z = logits(&LinearClassifier::zeros(3, 2), &x).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let c = LinearClassifier::new(array![[3.0]]).unwrap();
        let z = logits(&c, &FeatureMatrix::new(array![[2.0]]).unwrap()).unwrap();
        assert_eq!(z[[0, 0]], 6.0);
        assert!(logits(&c, &x).is_err());
    }

    #[test]
    fn logits_match_triple_loop() {
        let mut rng = crate::rng::seeded(1);
        let x = random_matrix(7, 5, &mut rng);
        let w = random_matrix(3, 5, &mut rng);
        let z = logits(
            &LinearClassifier::new(w.clone()).unwrap(),
            &FeatureMatrix::new(x.clone()).unwrap(),
        )
        .unwrap();
        for i in 0..7 {
            for k in 0..3 {
                let mut s = 0.0;
                for j in 0..5 {
                    s += x[[i, j]] * w[[k, j]];
                }
                assert!((z[[i, k]] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_probs(Array2::zeros((2, 4)).view());
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = softmax_probs(array![[1000.0, 0.0]].view());
        assert!((p[[0, 0]] - 1.0).abs() < 1e-15 && p[[0, 1]] >= 0.0 && p[[0, 1]] < 1e-300);

        let mut rng = crate::rng::seeded(4);
        let z = random_matrix(5, 6, &mut rng) * 10.0;
        let c: f64 = rng.random_range(-50.0..50.0);
        let shifted = softmax_probs((&z + c).view());
        let base = softmax_probs(z.view());
        for (a, b) in shifted.iter().zip(base.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for row in base.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_loss_at_zero_weights() {
        let x = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]).unwrap();
        let y = LabelVector::new(vec![0, 2, 1], 3).unwrap();
        let w0 = LinearClassifier::zeros(3, 2);
        let (loss, grad) = loss_and_grad(&w0, &[LossTerm::unmasked(&x, &y, 1.0)]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        let mut expected = Array2::<f64>::zeros((3, 2));
        for i in 0..3 {
            for k in 0..3 {
                let coef = 1.0 / 3.0 - if y.get(i) == k { 1.0 } else { 0.0 };
                for j in 0..2 {
                    expected[[k, j]] += coef * x.as_array()[[i, j]] / 3.0;
                }
            }
        }
        for (a, b) in grad.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fully_masked_term_is_inert() {
        let x = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        let term = LossTerm::masked(&x, &y, 1.0, vec![false, false]);
        let (loss, grad) = loss_and_grad(&LinearClassifier::zeros(2, 2), std::slice::from_ref(&term)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));

        let init = LinearClassifier::new(array![[0.3, -0.2], [0.1, 0.5]]).unwrap();
        let run = gd_train(&init, &[term], &GdConfig::new(10.0, 25)).unwrap();
        assert_eq!(run.classifier, init);
    }

    #[test]
    fn masked_mean_divides_by_full_count() {
        let x = FeatureMatrix::new(array![[1.0], [1.0], [1.0], [1.0]]).unwrap();
        let y = LabelVector::new(vec![0, 0, 0, 0], 2).unwrap();
        let w0 = LinearClassifier::zeros(2, 1);
        let term = LossTerm::masked(&x, &y, 1.0, vec![true, false, false, false]);
        let (loss, _) = loss_and_grad(&w0, &[term]).unwrap();
        assert!((loss - 2f64.ln() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn weight_scaling_is_linear() {
        let mut rng = crate::rng::seeded(9);
        let x = FeatureMatrix::new(random_matrix(10, 4, &mut rng)).unwrap();
        let y = LabelVector::new((0..10).map(|i| (i % 3) as u32).collect(), 3).unwrap();
        let w = LinearClassifier::new(random_matrix(3, 4, &mut rng)).unwrap();
        let (l1, g1) = loss_and_grad(&w, &[LossTerm::unmasked(&x, &y, 0.5)]).unwrap();
        let (l2, g2) = loss_and_grad(&w, &[LossTerm::unmasked(&x, &y, 1.5)]).unwrap();
        assert!((l2 - 3.0 * l1).abs() <= 1e-14 * l2.abs());
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((b - 3.0 * a).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let x = FeatureMatrix::new(array![[1.0], [2.0]]).unwrap();
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        let bad = LossTerm::masked(&x, &y, 1.0, vec![true]);
        assert!(matches!(
            loss_and_grad(&LinearClassifier::zeros(2, 1), &[bad]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_decreases_on_separable_line() {
        let x = FeatureMatrix::new(array![[-1.0], [-0.5], [0.5], [1.0]]).unwrap();
        let y = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        let run = gd_train(
            &LinearClassifier::zeros(2, 1),
            &[LossTerm::unmasked(&x, &y, 1.0)],
            &GdConfig::new(0.1, 50),
        )
        .unwrap();
        for w in run.losses.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(run.final_loss < run.losses[0]);
    }

    #[test]
    fn divergence_is_reported() {
        // Without max-shift this would overflow; with it the loss stays finite, so
        // force divergence through a huge rate on unbounded weights.
        let x = FeatureMatrix::new(array![[1e150], [-1e150]]).unwrap();
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        let err = gd_train(
            &LinearClassifier::zeros(2, 1),
            &[LossTerm::unmasked(&x, &y, 1.0)],
            &GdConfig::new(1e300, 5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn accuracy_tie_break_and_oracle() {
        let x = FeatureMatrix::new(array![[1.0], [2.0], [3.0]]).unwrap();
        let y = LabelVector::new(vec![0, 1, 0], 2).unwrap();
        let acc = accuracy(&LinearClassifier::zeros(2, 1), &x, &y).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);

        let mut rng = crate::rng::seeded(12);
        let x = FeatureMatrix::new(random_matrix(50, 8, &mut rng)).unwrap();
        let w = LinearClassifier::new(random_matrix(5, 8, &mut rng)).unwrap();
        let predicted = predict(&w, &x).unwrap();
        for (i, &p) in predicted.iter().enumerate() {
            let scores: Vec<f64> = (0..5)
                .map(|k| (0..8).map(|j| x.as_array()[[i, j]] * w.weights()[[k, j]]).sum())
                .collect();
            let mut best = 0;
            for k in 0..5 {
                if scores[k] > scores[best] {
                    best = k;
                }
            }
            assert_eq!(p as usize, best);
        }
        let perfect = LabelVector::new(predicted.clone(), 5).unwrap();
        assert_eq!(accuracy(&w, &x, &perfect).unwrap(), 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.pacw");
        let w = LinearClassifier::new(array![[0.1, -2.0, 3.5], [1e-300, 0.0, -0.0]]).unwrap();
        w.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 24 + 6 * 8);
        assert_eq!(LinearClassifier::load(&path).unwrap(), w);
        assert!(matches!(
            LinearClassifier::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Length { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(LinearClassifier::from_bytes(&bad), Err(Error::Format(_))));
    }
}
