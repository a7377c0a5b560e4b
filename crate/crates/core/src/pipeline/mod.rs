//! End-to-end runs over one or more feature bundles.
//!
//! Each member is aligned, L2-normalized, trained on its labeled rows,
//! self-trained, and finally scored on the unlabeled target rows. Member
//! probabilities are then combined by every configured combiner.

mod config;
mod report;

pub use config::{parse_pairs, parse_schedule, Aligner, LabeledParams, PipelineConfig};
pub use report::{
    strip_timing, CombinerReport, MemberReport, MemberStatus, RoundSummary, RunReport, StageTimings,
    REPORT_FORMAT_VERSION,
};

use std::time::Instant;

use rayon::prelude::*;

use crate::classifier::{accuracy, logits, softmax_probs, train_labeled, GdConfig, LinearClassifier};
use crate::coral::coral_fit;
use crate::ensemble::{bootstrap_indices, PredictionSet};
use crate::error::{Error, Result};
use crate::feature_io::{l2_normalize, load_bundle, DataBundle, FeatureMatrix, LabeledSet};
use crate::linalg::{pca_fit, pca_transform};
use crate::padd::padd_align;
use crate::self_training::{self_train, RoundTrace};

/// Everything a finished member produces.
#[derive(Debug, Clone)]
pub struct MemberOutput {
    pub classifier: LinearClassifier,
    pub predictions: PredictionSet,
    pub traces: Vec<RoundTrace>,
    pub report: MemberReport,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn stage<T>(name: &str, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        member: name.to_string(),
        stage,
        source: Box::new(e),
    })
}

/// Step 1: aligns every feature matrix of the bundle. Validation rows are
/// target rows and receive the unlabeled-target transform.
pub fn align_bundle(bundle: &DataBundle, cfg: &PipelineConfig) -> Result<DataBundle> {
    let tl = bundle.target_labeled.as_ref().map(|s| &s.features);
    let relabel = |set: &LabeledSet, features: FeatureMatrix| LabeledSet::new(features, set.labels.clone());
    match cfg.aligner {
        Aligner::None => Ok(bundle.clone()),
        Aligner::Coral => {
            let fit = coral_fit(&bundle.source.features, tl, &bundle.target_unlabeled, &cfg.coral)?;
            let mut out = bundle.clone();
            out.source = relabel(&bundle.source, fit.apply_labeled(&bundle.source.features)?)?;
            if let Some(set) = &bundle.target_labeled {
                out.target_labeled = Some(relabel(set, fit.apply_labeled(&set.features)?)?);
            }
            if let Some(set) = &bundle.target_validation {
                out.target_validation = Some(relabel(set, fit.apply_target(&set.features)?)?);
            }
            out.target_unlabeled = fit.apply_target(&bundle.target_unlabeled)?;
            Ok(out)
        }
        Aligner::Padd => {
            let res = padd_align(&bundle.source.features, tl, &bundle.target_unlabeled, &cfg.padd)?;
            let mut out = bundle.clone();
            out.source = relabel(&bundle.source, res.source.clone())?;
            if let (Some(set), Some(x)) = (&bundle.target_labeled, &res.target_labeled) {
                out.target_labeled = Some(relabel(set, x.clone())?);
            }
            if let Some(set) = &bundle.target_validation {
                out.target_validation = Some(relabel(set, res.apply(&set.features)?)?);
            }
            out.target_unlabeled = res.target_unlabeled;
            Ok(out)
        }
    }
}

/// Runs all four steps for one member.
pub fn run_member(bundle: &DataBundle, cfg: &PipelineConfig, member: usize, name: &str) -> Result<MemberOutput> {
    let mut timing = StageTimings::default();

    let t = Instant::now();
    let aligned = stage(name, "align", align_bundle(bundle, cfg))?;
    timing.align = elapsed_ms(t);

    let t = Instant::now();
    let normalized = stage(name, "normalize", aligned.map_features(l2_normalize))?;
    timing.normalize = elapsed_ms(t);

    let t = Instant::now();
    let lp = &cfg.labeled;
    let gd = GdConfig {
        learning_rate: lp.learning_rate,
        iterations: lp.iters,
        momentum: lp.momentum,
        nesterov: true,
    };
    let labeled = stage(
        name,
        "train_labeled",
        train_labeled(&normalized, lp.alpha, lp.beta, &gd),
    )?;
    timing.train_labeled = elapsed_ms(t);

    let eval = normalized.target_eval_labels.as_ref();
    let target_acc = |w: &LinearClassifier| -> Result<Option<f64>> {
        eval.map(|y| accuracy(w, &normalized.target_unlabeled, y)).transpose()
    };
    let labeled_target_accuracy = stage(name, "evaluate", target_acc(&labeled.classifier))?;

    let t = Instant::now();
    let (classifier, traces) = stage(
        name,
        "self_train",
        self_train(&labeled.classifier, &normalized, &cfg.selftrain),
    )?;
    timing.self_train = elapsed_ms(t);

    let t = Instant::now();
    let probs = stage(
        name,
        "predict",
        logits(&classifier, &normalized.target_unlabeled).map(|z| softmax_probs(z.view())),
    )?;
    let validation_accuracy = stage(
        name,
        "evaluate",
        normalized
            .target_validation
            .as_ref()
            .map(|v| accuracy(&classifier, &v.features, &v.labels))
            .transpose(),
    )?;
    let target_accuracy = stage(name, "evaluate", target_acc(&classifier))?;
    let source_accuracy = stage(
        name,
        "evaluate",
        accuracy(&classifier, &normalized.source.features, &normalized.source.labels),
    )?;
    let predictions = stage(name, "predict", PredictionSet::new(member, probs, validation_accuracy))?;
    timing.predict = elapsed_ms(t);

    let report = MemberReport {
        member,
        name: name.to_string(),
        status: MemberStatus::Ok,
        error: None,
        target_accuracy,
        labeled_target_accuracy,
        validation_accuracy,
        source_accuracy: Some(source_accuracy),
        labeled_losses: labeled.losses,
        labeled_final_loss: Some(labeled.final_loss),
        rounds: traces.iter().map(RoundSummary::from).collect(),
        timing_ms: timing,
    };
    Ok(MemberOutput {
        classifier,
        predictions,
        traces,
        report,
    })
}

/// Bootstrap resample of the source and labeled-target rows; the unlabeled
/// and validation target rows are kept as they are.
pub fn bagged_bundle(bundle: &DataBundle, seed: u64, member: usize) -> Result<DataBundle> {
    let base = seed ^ ((member as u64) << 32);
    let mut out = bundle.clone();
    let idx = bootstrap_indices(bundle.source.features.n(), base)?;
    out.source = bundle.source.select(&idx)?;
    if let Some(tl) = &bundle.target_labeled {
        let idx = bootstrap_indices(tl.labels.len(), base ^ 1)?;
        out.target_labeled = Some(tl.select(&idx)?);
    }
    Ok(out)
}

fn same_labels(a: &DataBundle, b: &DataBundle) -> bool {
    let set_labels = |s: &Option<LabeledSet>| s.as_ref().map(|s| s.labels.clone());
    a.source.labels == b.source.labels
        && set_labels(&a.target_labeled) == set_labels(&b.target_labeled)
        && set_labels(&a.target_validation) == set_labels(&b.target_validation)
        && a.target_eval_labels == b.target_eval_labels
        && a.target_unlabeled.n() == b.target_unlabeled.n()
}

/// Concatenates member features and projects every row onto the first `k`
/// principal components fitted on all rows of the concatenation.
pub fn pca_fuse(bundles: &[DataBundle], k: usize) -> Result<DataBundle> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Config("PCA fusion needs at least one member".into()))?;
    if let Some(i) = bundles.iter().position(|b| !same_labels(first, b)) {
        return Err(Error::Validation(format!(
            "member {i} does not share rows and labels with member 0"
        )));
    }
    let hcat = |parts: Vec<&FeatureMatrix>| FeatureMatrix::hstack(&parts);
    let set_features = |pick: fn(&DataBundle) -> Option<&LabeledSet>| -> Result<Option<FeatureMatrix>> {
        // same_labels guarantees every member has the set when the first does
        let parts: Option<Vec<&FeatureMatrix>> = bundles.iter().map(|b| pick(b).map(|s| &s.features)).collect();
        parts.map(hcat).transpose()
    };
    let mut fused = first.clone();
    fused.source.features = hcat(bundles.iter().map(|b| &b.source.features).collect())?;
    if let (Some(set), Some(x)) = (
        fused.target_labeled.as_mut(),
        set_features(|b| b.target_labeled.as_ref())?,
    ) {
        set.features = x;
    }
    if let (Some(set), Some(x)) = (
        fused.target_validation.as_mut(),
        set_features(|b| b.target_validation.as_ref())?,
    ) {
        set.features = x;
    }
    fused.target_unlabeled = hcat(bundles.iter().map(|b| &b.target_unlabeled).collect())?;

    let mut all: Vec<&FeatureMatrix> = vec![&fused.source.features];
    all.extend(fused.target_labeled.as_ref().map(|s| &s.features));
    all.extend(fused.target_validation.as_ref().map(|s| &s.features));
    all.push(&fused.target_unlabeled);
    let model = pca_fit(&FeatureMatrix::vstack(&all)?, k)?;
    fused.map_features(|x| pca_transform(&model, x))
}

fn member_name(cfg: &PipelineConfig, i: usize) -> String {
    cfg.members
        .get(i)
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| format!("member_{i}"))
}

/// Runs the configured pipeline on in-memory bundles (one per member input).
pub fn run_bundles(bundles: &[DataBundle], cfg: &PipelineConfig) -> Result<(RunReport, Vec<Result<MemberOutput>>)> {
    cfg.validate()?;
    if bundles.is_empty() {
        return Err(Error::Config("no member inputs".into()));
    }
    let start = Instant::now();
    let jobs: Vec<(String, Result<DataBundle>)> = if let Some(k) = cfg.pca_k {
        vec![("pca".to_string(), Ok(pca_fuse(bundles, k)?))]
    } else if let Some(b) = cfg.bagging {
        if bundles.len() != 1 {
            return Err(Error::Config("bagging resamples a single bundle".into()));
        }
        (0..b)
            .map(|m| Ok((format!("bag_{m}"), Ok(bagged_bundle(&bundles[0], cfg.seed, m)?))))
            .collect::<Result<_>>()?
    } else {
        bundles
            .iter()
            .enumerate()
            .map(|(i, b)| (member_name(cfg, i), Ok(b.clone())))
            .collect()
    };
    run_jobs(jobs, cfg, start)
}

/// Runs prepared member jobs; a job whose input failed becomes a failed member.
fn run_jobs(
    jobs: Vec<(String, Result<DataBundle>)>,
    cfg: &PipelineConfig,
    start: Instant,
) -> Result<(RunReport, Vec<Result<MemberOutput>>)> {
    let (names, inputs): (Vec<String>, Vec<Result<DataBundle>>) = jobs.into_iter().unzip();
    let ready: Vec<(usize, &DataBundle)> = inputs
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.as_ref().ok().map(|b| (i, b)))
        .collect();
    let run = |&(i, bundle): &(usize, &DataBundle)| run_member(bundle, cfg, i, &names[i]);
    let finished: Vec<Result<MemberOutput>> = if cfg.parallelism == 1 {
        ready.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| ready.par_iter().map(run).collect())
    };
    let eval = ready.first().and_then(|(_, b)| b.target_eval_labels.clone());
    let mut finished = finished.into_iter();
    let outputs: Vec<Result<MemberOutput>> = inputs
        .into_iter()
        .map(|b| match b {
            Ok(_) => finished.next().expect("one output per loaded member"),
            Err(e) => Err(e),
        })
        .collect();

    let members: Vec<MemberReport> = outputs
        .iter()
        .zip(&names)
        .enumerate()
        .map(|(i, (out, name))| match out {
            Ok(o) => o.report.clone(),
            Err(e) => MemberReport::failed(i, name, e),
        })
        .collect();
    let predictions: Vec<PredictionSet> = outputs
        .iter()
        .filter_map(|o| o.as_ref().ok().map(|o| o.predictions.clone()))
        .collect();
    let ensemble = if predictions.is_empty() {
        Vec::new()
    } else {
        cfg.combiners
            .iter()
            .map(|c| CombinerReport::evaluate(*c, &predictions, eval.as_ref()))
            .collect()
    };
    let report = RunReport::new(cfg.clone(), members, ensemble, elapsed_ms(start));
    Ok((report, outputs))
}

/// Loads every member input named by `cfg.members` and runs the pipeline.
/// In the default mode a member that fails to load is reported as failed;
/// PCA and bagging need every input and fail as a whole.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(RunReport, Vec<Result<MemberOutput>>)> {
    cfg.validate()?;
    if cfg.members.is_empty() {
        return Err(Error::Config("no member inputs configured".into()));
    }
    let start = Instant::now();
    let loaded: Vec<Result<DataBundle>> = cfg.members.iter().map(|p| load_bundle(p, &cfg.split)).collect();
    if cfg.pca_k.is_some() || cfg.bagging.is_some() {
        let bundles = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        return run_bundles(&bundles, cfg);
    }
    let jobs: Vec<(String, Result<DataBundle>)> = loaded
        .into_iter()
        .enumerate()
        .map(|(i, b)| (member_name(cfg, i), b))
        .collect();
    run_jobs(jobs, cfg, start)
}
