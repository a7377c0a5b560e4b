use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::rng;

/// How many target samples per class go to the labeled and validation sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub shots: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            shots: 3,
            val_per_class: 3,
            seed: 0,
        }
    }
}

/// Disjoint, exhaustive index sets over the target rows, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Draws `shots` labeled and `val_per_class` validation indices per class.
///
/// Class `c` is shuffled with the generator seeded by `seed ^ c`; the first
/// `shots` shuffled indices become labeled, the next `val_per_class`
/// validation, the remainder unlabeled.
pub fn make_split(target_features: &FeatureMatrix, target_labels: &LabelVector, spec: &SplitSpec) -> Result<Split> {
    if target_features.n() != target_labels.len() {
        return Err(Error::Shape(format!(
            "{} target rows but {} labels",
            target_features.n(),
            target_labels.len()
        )));
    }
    let k = target_labels.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in target_labels.as_slice().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let required = spec.shots + spec.val_per_class;
    let mut split = Split {
        labeled: Vec::new(),
        validation: Vec::new(),
        unlabeled: Vec::new(),
    };
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < required {
            return Err(Error::InsufficientSamples {
                class,
                available: members.len(),
                required,
            });
        }
        let mut gen = rng::seeded(spec.seed ^ class as u64);
        rng::shuffle(&mut gen, &mut members);
        split.labeled.extend_from_slice(&members[..spec.shots]);
        split.validation.extend_from_slice(&members[spec.shots..required]);
        split.unlabeled.extend_from_slice(&members[required..]);
    }
    split.labeled.sort_unstable();
    split.validation.sort_unstable();
    split.unlabeled.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(per_class: usize, k: usize) -> (FeatureMatrix, LabelVector) {
        let n = per_class * k;
        let labels: Vec<u32> = (0..n).map(|i| (i % k) as u32).collect();
        let x = FeatureMatrix::from_rows(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        (x, LabelVector::new(labels, k).unwrap())
    }

    fn assert_partition(split: &Split, n: usize) {
        let mut all: Vec<usize> = split
            .labeled
            .iter()
            .chain(&split.validation)
            .chain(&split.unlabeled)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn unsupervised_degenerate_case() {
        let (x, y) = dataset(4, 3);
        let spec = SplitSpec {
            shots: 0,
            val_per_class: 0,
            seed: 1,
        };
        let split = make_split(&x, &y, &spec).unwrap();
        assert!(split.labeled.is_empty() && split.validation.is_empty());
        assert_eq!(split.unlabeled, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn three_shot_counts() {
        let (x, y) = dataset(10, 4);
        let split = make_split(&x, &y, &SplitSpec::default()).unwrap();
        for c in 0..4u32 {
            let count = |set: &[usize]| set.iter().filter(|&&i| y.as_slice()[i] == c).count();
            assert_eq!(count(&split.labeled), 3);
            assert_eq!(count(&split.validation), 3);
            assert_eq!(count(&split.unlabeled), 4);
        }
        assert_partition(&split, 40);
    }

    #[test]
    fn insufficient_class_is_named() {
        let (x, base_y) = dataset(6, 3);
        let mut labels = base_y.as_slice().to_vec();
        labels[2] = 0; // class 2 loses one sample
        let y = LabelVector::new(labels, 3).unwrap();
        let err = make_split(&x, &y, &SplitSpec::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientSamples {
                class: 2,
                available: 5,
                required: 6
            }
        ));
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let (x, y) = dataset(20, 5);
        let spec = |seed| SplitSpec {
            shots: 3,
            val_per_class: 3,
            seed,
        };
        let base = make_split(&x, &y, &spec(0)).unwrap();
        assert_eq!(base, make_split(&x, &y, &spec(0)).unwrap());
        let distinct = (1..=20)
            .filter(|&s| make_split(&x, &y, &spec(s)).unwrap() != base)
            .count();
        assert_eq!(distinct, 20);
    }

    proptest! {
        #[test]
        fn split_is_partition(per_class in 2usize..12, k in 1usize..5, shots in 0usize..2, val in 0usize..2, seed in any::<u64>()) {
            let (x, y) = dataset(per_class, k);
            let split = make_split(&x, &y, &SplitSpec { shots, val_per_class: val, seed }).unwrap();
            assert_partition(&split, per_class * k);
            prop_assert_eq!(split.labeled.len(), shots * k);
            prop_assert_eq!(split.validation.len(), val * k);
        }
    }
}
