//! Bundle directories.
//!
//! A bundle is a directory of feature (`.pace`) and label (`.pacl`) files
//! with fixed stems; `.csv` is accepted wherever the binary file is absent.
//!
//! | stem                | kind     | required                          |
//! |---------------------|----------|-----------------------------------|
//! | `source`            | both     | yes                               |
//! | `target_labeled`    | both     | no (absent or empty = UDA)        |
//! | `target_unlabeled`  | features | yes, unless `target` is present   |
//! | `target_eval`       | labels   | no                                |
//! | `target_validation` | both     | no                                |
//! | `target`            | both     | alternative to the split files    |
//!
//! When only the unsplit `target` pair exists, it is divided with
//! [`make_split`] and the unlabeled part keeps its labels as evaluation labels.

use std::path::{Path, PathBuf};

use super::format::{read_feature_array, read_label_vector};
use super::{
    load_features, load_labels, make_split, save_features, save_labels, DataBundle, FeatureMatrix, LabeledSet,
    SplitSpec,
};
use crate::error::{Error, Result};

fn locate(dir: &Path, stem: &str, binary_ext: &str) -> Option<PathBuf> {
    [binary_ext, "csv"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn features_path(dir: &Path, stem: &str) -> Option<PathBuf> {
    locate(dir, stem, "pace")
}

fn labels_path(dir: &Path, stem: &str) -> Option<PathBuf> {
    locate(dir, stem, "pacl")
}

fn required(dir: &Path, stem: &str, binary_ext: &str) -> Result<PathBuf> {
    locate(dir, stem, binary_ext).ok_or_else(|| {
        Error::io(
            dir.join(format!("{stem}.{binary_ext}")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "required bundle file missing"),
        )
    })
}

/// Loads an optional labeled slot; missing files or zero rows give `None`.
fn optional_set(dir: &Path, stem: &str, num_classes: usize) -> Result<Option<LabeledSet>> {
    let (Some(fp), Some(lp)) = (features_path(dir, stem), labels_path(dir, stem)) else {
        return Ok(None);
    };
    let array = read_feature_array(&fp)?;
    let labels = read_label_vector(&lp)?;
    if array.nrows() == 0 && labels.is_empty() {
        return Ok(None);
    }
    let labels = if lp.extension().is_some_and(|e| e == "csv") {
        super::LabelVector::new(labels.as_slice().to_vec(), num_classes)?
    } else {
        labels
    };
    LabeledSet::new(FeatureMatrix::new(array)?, labels).map(Some)
}

pub fn load_bundle(dir: impl AsRef<Path>, split: &SplitSpec) -> Result<DataBundle> {
    let dir = dir.as_ref();
    let source = LabeledSet::new(
        load_features(required(dir, "source", "pace")?)?,
        load_labels(required(dir, "source", "pacl")?)?,
    )?;
    let k = source.labels.num_classes();

    if let Some(tu_path) = features_path(dir, "target_unlabeled") {
        let target_unlabeled = load_features(tu_path)?;
        let eval = labels_path(dir, "target_eval")
            .map(|p| {
                let l = load_labels(&p)?;
                if p.extension().is_some_and(|e| e == "csv") {
                    super::LabelVector::new(l.as_slice().to_vec(), k)
                } else {
                    Ok(l)
                }
            })
            .transpose()?;
        return DataBundle::new(
            source,
            optional_set(dir, "target_labeled", k)?,
            target_unlabeled,
            optional_set(dir, "target_validation", k)?,
            eval,
        );
    }

    let target_features = load_features(required(dir, "target", "pace")?)?;
    let raw_labels = load_labels(required(dir, "target", "pacl")?)?;
    let target_labels = super::LabelVector::new(raw_labels.as_slice().to_vec(), k)?;
    let target = LabeledSet::new(target_features, target_labels)?;
    let parts = make_split(&target.features, &target.labels, split)?;
    let subset = |rows: &[usize]| -> Result<Option<LabeledSet>> {
        if rows.is_empty() {
            Ok(None)
        } else {
            target.select(rows).map(Some)
        }
    };
    let unlabeled = target
        .select(&parts.unlabeled)
        .map_err(|_| Error::InsufficientData("split leaves no unlabeled target samples".into()))?;
    DataBundle::new(
        source,
        subset(&parts.labeled)?,
        unlabeled.features,
        subset(&parts.validation)?,
        Some(unlabeled.labels),
    )
}

/// Writes a bundle in the pre-split layout using binary files.
pub fn save_bundle(bundle: &DataBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_set = |stem: &str, set: &LabeledSet| -> Result<()> {
        save_features(&set.features, dir.join(format!("{stem}.pace")))?;
        save_labels(&set.labels, dir.join(format!("{stem}.pacl")))
    };
    write_set("source", &bundle.source)?;
    if let Some(tl) = &bundle.target_labeled {
        write_set("target_labeled", tl)?;
    }
    if let Some(val) = &bundle.target_validation {
        write_set("target_validation", val)?;
    }
    save_features(&bundle.target_unlabeled, dir.join("target_unlabeled.pace"))?;
    if let Some(eval) = &bundle.target_eval_labels {
        save_labels(eval, dir.join("target_eval.pacl"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::LabelVector;

    fn set(n: usize, d: usize, k: usize, offset: f64) -> LabeledSet {
        let x = FeatureMatrix::from_rows(n, d, (0..n * d).map(|i| offset + i as f64 * 0.25).collect()).unwrap();
        let y = LabelVector::new((0..n).map(|i| (i % k) as u32).collect(), k).unwrap();
        LabeledSet::new(x, y).unwrap()
    }

    #[test]
    fn presplit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tu = set(6, 2, 3, 9.0);
        let bundle = DataBundle::new(
            set(9, 2, 3, 0.0),
            Some(set(3, 2, 3, 1.0)),
            tu.features.clone(),
            Some(set(3, 2, 3, 2.0)),
            Some(tu.labels.clone()),
        )
        .unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        let back = load_bundle(dir.path(), &SplitSpec::default()).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn empty_labeled_slot_means_uda() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = DataBundle::new(set(6, 2, 2, 0.0), None, set(4, 2, 2, 1.0).features, None, None).unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        // write an explicitly empty labeled slot
        std::fs::write(
            dir.path().join("target_labeled.pacl"),
            super::super::format::encode_labels(&LabelVector::new(vec![], 2).unwrap()),
        )
        .unwrap();
        let mut empty = b"PACE".to_vec();
        empty.extend_from_slice(&1u32.to_le_bytes());
        empty.extend_from_slice(&0u64.to_le_bytes());
        empty.extend_from_slice(&2u64.to_le_bytes());
        empty.extend_from_slice(&[0; 4]);
        std::fs::write(dir.path().join("target_labeled.pace"), empty).unwrap();
        let back = load_bundle(dir.path(), &SplitSpec::default()).unwrap();
        assert!(back.is_unsupervised());
    }

    #[test]
    fn raw_target_is_split() {
        let dir = tempfile::tempdir().unwrap();
        let src = set(12, 2, 3, 0.0);
        let tgt = set(30, 2, 3, 5.0);
        save_features(&src.features, dir.path().join("source.pace")).unwrap();
        save_labels(&src.labels, dir.path().join("source.pacl")).unwrap();
        save_features(&tgt.features, dir.path().join("target.pace")).unwrap();
        save_labels(&tgt.labels, dir.path().join("target.pacl")).unwrap();
        let b = load_bundle(dir.path(), &SplitSpec::default()).unwrap();
        assert_eq!(b.target_labeled.as_ref().unwrap().features.n(), 9);
        assert_eq!(b.target_validation.as_ref().unwrap().features.n(), 9);
        assert_eq!(b.target_unlabeled.n(), 12);
        assert_eq!(b.target_eval_labels.as_ref().unwrap().len(), 12);

        let uda = SplitSpec {
            shots: 0,
            val_per_class: 0,
            seed: 0,
        };
        let b = load_bundle(dir.path(), &uda).unwrap();
        assert!(b.is_unsupervised());
        assert_eq!(b.target_unlabeled.n(), 30);
    }

    #[test]
    fn missing_source_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_bundle(dir.path(), &SplitSpec::default()),
            Err(Error::Io { .. })
        ));
    }
}
