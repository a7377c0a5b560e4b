//! Domain adaptation of linear classifiers on fixed feature matrices.
//!
//! The pipeline aligns source and target features ([`coral`] or [`padd`]),
//! trains a zero-bias softmax classifier on the labeled rows
//! ([`classifier`]), refines it by confidence-thresholded pseudo-labeling
//! ([`self_training`]) and combines several such members ([`ensemble`]).
//! [`pipeline`] ties the steps together and [`synthetic`] generates seeded
//! domain-shift problems for testing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod coral;
pub mod ensemble;
pub mod error;
pub mod feature_io;
pub mod linalg;
pub mod padd;
pub mod pipeline;
pub mod rng;
pub mod self_training;
pub mod synthetic;

pub use classifier::{GdConfig, GdRun, LinearClassifier, LossTerm};
pub use coral::CoralConfig;
pub use ensemble::{Combiner, PredictionSet, VoteWeighting};
pub use error::{Error, ErrorKind, Result};
pub use feature_io::{DataBundle, FeatureMatrix, LabelVector, LabeledSet, SplitSpec};
pub use padd::PaddConfig;
pub use pipeline::{Aligner, PipelineConfig, RunReport};
pub use self_training::{RoundTrace, SelfTrainSchedule};
pub use synthetic::SynthConfig;
