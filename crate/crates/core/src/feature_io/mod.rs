//! Feature matrices, label vectors and the data bundles built from them.

mod bundle;
mod format;
mod split;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{load_bundle, save_bundle};
pub use format::{load_features, load_labels, save_features, save_labels};
pub use split::{make_split, Split, SplitSpec};

/// Rows whose Euclidean norm falls below this are rejected by [`l2_normalize`].
pub const DEGENERATE_NORM: f64 = 1e-30;

/// Dense `n x d` matrix of finite 64-bit floats, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::Validation(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { data })
    }

    pub fn from_rows(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Validation(format!(
                "{} values cannot fill a {n}x{d} matrix",
                values.len()
            )));
        }
        let data = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Validation(e.to_string()))?;
        Self::new(data)
    }

    /// Wraps an array already known to be finite and non-empty.
    pub(crate) fn from_array_unchecked(data: Array2<f64>) -> Self {
        debug_assert!(data.nrows() > 0 && data.ncols() > 0);
        Self { data }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("cannot select zero rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::Shape(format!("row {bad} out of range {}", self.n())));
        }
        Ok(Self::from_array_unchecked(self.data.select(Axis(0), rows)))
    }

    /// Stacks matrices vertically; all must share `d`.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Validation("nothing to stack".into()))?;
        if let Some(bad) = parts.iter().find(|p| p.d() != first.d()) {
            return Err(Error::Shape(format!("cannot stack d={} with d={}", first.d(), bad.d())));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self::from_array_unchecked(data))
    }

    /// Concatenates matrices horizontally; all must share `n`.
    pub fn hstack(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Validation("nothing to concatenate".into()))?;
        if let Some(bad) = parts.iter().find(|p| p.n() != first.n()) {
            return Err(Error::Shape(format!(
                "cannot concatenate n={} with n={}",
                first.n(),
                bad.n()
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let data = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self::from_array_unchecked(data))
    }
}

/// Class indices in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<u32>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Validation("class count must be positive".into()));
        }
        if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} at position {i} is not below K={num_classes}"
            )));
        }
        Ok(Self { labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn concat(&self, other: &LabelVector) -> Result<Self> {
        if self.num_classes != other.num_classes {
            return Err(Error::Shape(format!(
                "class counts differ: {} vs {}",
                self.num_classes, other.num_classes
            )));
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            labels,
            num_classes: self.num_classes,
        })
    }
}

/// Features paired with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: FeatureMatrix,
    pub labels: LabelVector,
}

impl LabeledSet {
    pub fn new(features: FeatureMatrix, labels: LabelVector) -> Result<Self> {
        if features.n() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.n(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(rows)?,
            labels: self.labels.select(rows),
        })
    }
}

/// Everything one ensemble member trains and predicts on.
///
/// `target_labeled` is `None` exactly in the unsupervised setting. The
/// validation set and evaluation labels are target-side data that no
/// training operation reads.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub source: LabeledSet,
    pub target_labeled: Option<LabeledSet>,
    pub target_unlabeled: FeatureMatrix,
    pub target_validation: Option<LabeledSet>,
    pub target_eval_labels: Option<LabelVector>,
    pub num_classes: usize,
}

impl DataBundle {
    pub fn new(
        source: LabeledSet,
        target_labeled: Option<LabeledSet>,
        target_unlabeled: FeatureMatrix,
        target_validation: Option<LabeledSet>,
        target_eval_labels: Option<LabelVector>,
    ) -> Result<Self> {
        let bundle = Self {
            num_classes: source.labels.num_classes(),
            source,
            target_labeled,
            target_unlabeled,
            target_validation,
            target_eval_labels,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.source.features.d();
        let k = self.num_classes;
        let check_set = |name: &str, set: &LabeledSet| -> Result<()> {
            if set.features.d() != d {
                return Err(Error::Shape(format!(
                    "{name} has d={}, source has d={d}",
                    set.features.d()
                )));
            }
            if set.labels.num_classes() != k {
                return Err(Error::Shape(format!(
                    "{name} has K={}, source has K={k}",
                    set.labels.num_classes()
                )));
            }
            if set.features.n() != set.labels.len() {
                return Err(Error::Shape(format!("{name} rows and labels differ")));
            }
            Ok(())
        };
        check_set("source", &self.source)?;
        if let Some(tl) = &self.target_labeled {
            check_set("target_labeled", tl)?;
        }
        if let Some(val) = &self.target_validation {
            check_set("target_validation", val)?;
        }
        if self.target_unlabeled.d() != d {
            return Err(Error::Shape(format!(
                "target_unlabeled has d={}, source has d={d}",
                self.target_unlabeled.d()
            )));
        }
        if let Some(eval) = &self.target_eval_labels {
            if eval.len() != self.target_unlabeled.n() {
                return Err(Error::Shape(format!(
                    "{} evaluation labels for {} unlabeled rows",
                    eval.len(),
                    self.target_unlabeled.n()
                )));
            }
            if eval.num_classes() != k {
                return Err(Error::Shape("evaluation labels disagree on K".into()));
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.source.features.d()
    }

    pub fn is_unsupervised(&self) -> bool {
        self.target_labeled.is_none()
    }

    /// Applies `f` to every feature matrix in the bundle, leaving labels alone.
    pub fn map_features<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&FeatureMatrix) -> Result<FeatureMatrix>,
    {
        let mut map_set = |set: &LabeledSet| -> Result<LabeledSet> {
            Ok(LabeledSet {
                features: f(&set.features)?,
                labels: set.labels.clone(),
            })
        };
        let source = map_set(&self.source)?;
        let target_labeled = self.target_labeled.as_ref().map(&mut map_set).transpose()?;
        let target_validation = self.target_validation.as_ref().map(&mut map_set).transpose()?;
        Ok(Self {
            source,
            target_labeled,
            target_unlabeled: f(&self.target_unlabeled)?,
            target_validation,
            target_eval_labels: self.target_eval_labels.clone(),
            num_classes: self.num_classes,
        })
    }
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut out = m.as_array().clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateRow { row: i, norm });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(FeatureMatrix::from_array_unchecked(out))
}
