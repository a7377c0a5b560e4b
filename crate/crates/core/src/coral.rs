//! Correlation alignment.
//!
//! Labeled rows (source stacked on labeled target) are centered, whitened
//! with `(Cov(labeled) + lambda I)^{-1/2}` and recolored with
//! `(Cov(X_tu) + lambda I)^{1/2}`. Unlabeled target rows are only centered.

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::FeatureMatrix;
use crate::linalg::{column_mean, covariance, matrix_power_half, HalfPower, SymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoralConfig {
    /// Ridge added to both covariance diagonals.
    pub lambda: f64,
}

impl Default for CoralConfig {
    fn default() -> Self {
        Self { lambda: 1e-3 }
    }
}

impl CoralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "CORAL lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// A fitted alignment that can be replayed on further labeled or target rows.
#[derive(Debug, Clone)]
pub struct CoralAlignment {
    pub labeled_mean: Array1<f64>,
    pub target_mean: Array1<f64>,
    pub whitening: SymmetricMatrix,
    pub recoloring: SymmetricMatrix,
}

impl CoralAlignment {
    fn check_dim(&self, x: &FeatureMatrix) -> Result<()> {
        if x.d() != self.labeled_mean.len() {
            return Err(Error::Shape(format!(
                "features have d={}, alignment expects d={}",
                x.d(),
                self.labeled_mean.len()
            )));
        }
        Ok(())
    }

    /// Centered and whitened labeled rows (the midpoint before recoloring).
    pub fn whiten_labeled(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_dim(x)?;
        let centered = x.as_array() - &self.labeled_mean.view().insert_axis(Axis(0));
        FeatureMatrix::new(centered.dot(self.whitening.as_array()))
    }

    pub fn apply_labeled(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        let white = self.whiten_labeled(x)?;
        FeatureMatrix::new(white.as_array().dot(self.recoloring.as_array()))
    }

    pub fn apply_target(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_dim(x)?;
        FeatureMatrix::new(x.as_array() - &self.target_mean.view().insert_axis(Axis(0)))
    }
}

fn stack_labeled(source: &FeatureMatrix, target_labeled: Option<&FeatureMatrix>) -> Result<FeatureMatrix> {
    match target_labeled {
        Some(tl) => FeatureMatrix::vstack(&[source, tl]),
        None => Ok(source.clone()),
    }
}

pub fn coral_fit(
    source: &FeatureMatrix,
    target_labeled: Option<&FeatureMatrix>,
    target_unlabeled: &FeatureMatrix,
    cfg: &CoralConfig,
) -> Result<CoralAlignment> {
    cfg.validate()?;
    if target_unlabeled.d() != source.d() {
        return Err(Error::Shape(format!(
            "source has d={}, unlabeled target has d={}",
            source.d(),
            target_unlabeled.d()
        )));
    }
    let labeled = stack_labeled(source, target_labeled)?;
    let c_labeled = covariance(&labeled)?;
    let c_target = covariance(target_unlabeled)?;
    Ok(CoralAlignment {
        labeled_mean: column_mean(&labeled),
        target_mean: column_mean(target_unlabeled),
        whitening: matrix_power_half(&c_labeled, HalfPower::InvSqrt, cfg.lambda)?,
        recoloring: matrix_power_half(&c_target, HalfPower::Sqrt, cfg.lambda)?,
    })
}

/// Aligned `(source, labeled target, unlabeled target)`, row order preserved.
pub type Aligned = (FeatureMatrix, Option<FeatureMatrix>, FeatureMatrix);

pub fn coral_align(
    source: &FeatureMatrix,
    target_labeled: Option<&FeatureMatrix>,
    target_unlabeled: &FeatureMatrix,
    cfg: &CoralConfig,
) -> Result<Aligned> {
    let fit = coral_fit(source, target_labeled, target_unlabeled, cfg)?;
    let labeled = fit.apply_labeled(&stack_labeled(source, target_labeled)?)?;
    let n_s = source.n();
    let source_out = FeatureMatrix::new(labeled.as_array().slice(ndarray::s![..n_s, ..]).to_owned())?;
    let tl_out = target_labeled
        .map(|_| FeatureMatrix::new(labeled.as_array().slice(ndarray::s![n_s.., ..]).to_owned()))
        .transpose()?;
    Ok((source_out, tl_out, fit.apply_target(target_unlabeled)?))
}
