use serde_json::Value;

use pace_core::classifier::train_labeled;
use pace_core::feature_io::{l2_normalize, load_bundle, save_bundle};
use pace_core::padd::padd_align;
use pace_core::pipeline::{bagged_bundle, run_bundles, run_member, run_pipeline, strip_timing, MemberStatus};
use pace_core::self_training::self_train;
use pace_core::synthetic::{generate, perturb_member};
use pace_core::{
    Combiner, DataBundle, ErrorKind, FeatureMatrix, GdConfig, LabeledSet, PipelineConfig, SplitSpec, SynthConfig,
};

fn bundle(seed: u64) -> DataBundle {
    generate(&SynthConfig {
        num_classes: 4,
        d: 8,
        n_source: 240,
        n_target: 240,
        shots: 2,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn config(items: &[(&str, &str)]) -> PipelineConfig {
    let pairs: Vec<(String, String)> = items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let mut cfg = PipelineConfig::default();
    cfg.apply(&pairs).unwrap();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn single_member_average_matches_member() {
    let cfg = config(&[("selftrain.rounds", "3")]);
    let (report, outputs) = run_bundles(&[bundle(1)], &cfg).unwrap();
    let member = report.members[0].target_accuracy.unwrap();
    assert_eq!(report.ensemble_accuracy(Combiner::Average), Some(member));
    assert_eq!(report.mean_member_accuracy, Some(member));
    assert_eq!(outputs[0].as_ref().unwrap().traces.len(), 3);
}

#[test]
fn no_alignment_and_no_rounds_is_the_labeled_stage() {
    let b = bundle(2);
    let cfg = config(&[("aligner", "none"), ("selftrain.rounds", "0")]);
    let out = run_member(&b, &cfg, 0, "m").unwrap();
    let direct = train_labeled(
        &b.map_features(l2_normalize).unwrap(),
        0.4,
        0.2,
        &GdConfig::new(40.0, 400),
    )
    .unwrap();
    assert_eq!(out.classifier, direct.classifier);
    assert!(out.traces.is_empty());
    assert_eq!(out.report.labeled_target_accuracy, out.report.target_accuracy);
}

#[test]
fn padd_path_matches_manual_steps() {
    let b = bundle(3);
    let cfg = config(&[("aligner", "padd"), ("padd.rounds", "4"), ("selftrain.rounds", "2")]);
    let out = run_member(&b, &cfg, 0, "m").unwrap();

    let tl = b.target_labeled.as_ref().unwrap();
    let res = padd_align(&b.source.features, Some(&tl.features), &b.target_unlabeled, &cfg.padd).unwrap();
    let val = b.target_validation.as_ref().unwrap();
    let manual = DataBundle::new(
        LabeledSet::new(res.source.clone(), b.source.labels.clone()).unwrap(),
        Some(LabeledSet::new(res.target_labeled.clone().unwrap(), tl.labels.clone()).unwrap()),
        res.target_unlabeled.clone(),
        Some(LabeledSet::new(res.apply(&val.features).unwrap(), val.labels.clone()).unwrap()),
        b.target_eval_labels.clone(),
    )
    .unwrap()
    .map_features(l2_normalize)
    .unwrap();
    let w0 = train_labeled(&manual, 0.4, 0.2, &GdConfig::new(40.0, 400)).unwrap();
    let (w, traces) = self_train(&w0.classifier, &manual, &cfg.selftrain).unwrap();
    assert_eq!(out.classifier, w);
    assert_eq!(out.traces, traces);
}

#[test]
fn members_are_independent_of_each_other() {
    let base = bundle(4);
    let members: Vec<DataBundle> = (0..3).map(|m| perturb_member(&base, 0.3, m + 1).unwrap()).collect();
    let cfg = config(&[("selftrain.rounds", "2")]);
    let (together, _) = run_bundles(&members, &cfg).unwrap();
    for (i, m) in members.iter().enumerate() {
        let alone = run_member(m, &cfg, i, "x").unwrap();
        assert_eq!(together.members[i].target_accuracy, alone.report.target_accuracy);
        assert_eq!(together.members[i].labeled_losses, alone.report.labeled_losses);
    }

    let mut parallel_cfg = cfg.clone();
    parallel_cfg.parallelism = 3;
    let (parallel, _) = run_bundles(&members, &parallel_cfg).unwrap();
    let strip = |r: &pace_core::RunReport| {
        let mut v: Value = serde_json::from_str(&r.to_json()).unwrap();
        strip_timing(&mut v);
        v["config"]["parallelism"] = Value::Null;
        v
    };
    assert_eq!(strip(&together), strip(&parallel));
}

#[test]
fn failed_member_does_not_stop_the_others() {
    let good = bundle(5);
    let mut bad = good.clone();
    // all-zero target rows cannot be normalized
    bad.target_unlabeled = FeatureMatrix::new(ndarray::Array2::zeros((good.target_unlabeled.n(), 8))).unwrap();
    let cfg = config(&[("selftrain.rounds", "1"), ("coral.lambda", "0")]);
    let (report, outputs) = run_bundles(&[good, bad], &cfg).unwrap();
    assert_eq!(report.members[0].status, MemberStatus::Ok);
    assert_eq!(report.members[1].status, MemberStatus::Failed);
    assert!(report.members[1].error.is_some());
    assert!(outputs[1].is_err());
    assert_eq!(
        report.ensemble_accuracy(Combiner::Average),
        report.members[0].target_accuracy
    );
}

#[test]
fn pca_fusion_runs_as_one_member() {
    let base = bundle(6);
    let members: Vec<DataBundle> = (0..2).map(|m| perturb_member(&base, 0.2, m + 10).unwrap()).collect();
    let cfg = config(&[("pca_k", "6"), ("selftrain.rounds", "1")]);
    let (report, outputs) = run_bundles(&members, &cfg).unwrap();
    assert_eq!(report.members.len(), 1);
    assert_eq!(report.members[0].name, "pca");
    assert_eq!(outputs[0].as_ref().unwrap().classifier.d(), 6);
}

#[test]
fn bagging_resamples_labeled_rows_only() {
    let b = bundle(7);
    let bag = bagged_bundle(&b, 9, 1).unwrap();
    assert_eq!(bag.source.features.n(), b.source.features.n());
    assert_ne!(bag.source, b.source);
    assert_eq!(bag.target_unlabeled, b.target_unlabeled);
    assert_eq!(bag.target_validation, b.target_validation);
    assert_eq!(bagged_bundle(&b, 9, 1).unwrap(), bag);

    let cfg = config(&[("bagging", "3"), ("selftrain.rounds", "1"), ("combiners", "all")]);
    let (report, _) = run_bundles(&[b], &cfg).unwrap();
    let names: Vec<&str> = report.members.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["bag_0", "bag_1", "bag_2"]);
    assert_eq!(report.ensemble.len(), 4);
}

#[test]
fn conflicting_modes_are_config_errors() {
    let cfg = PipelineConfig {
        pca_k: Some(4),
        bagging: Some(2),
        ..PipelineConfig::default()
    };
    assert_eq!(cfg.validate().unwrap_err().kind(), ErrorKind::Config);
    let err = run_bundles(&[bundle(8)], &cfg).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);

    let mut bad = PipelineConfig::default();
    assert!(bad.apply(&[("selftrain.nope".into(), "1".into())]).is_err());
    assert!(bad.apply(&[("selftrain.alpha".into(), "0.1,0.2".into())]).is_err());
}

#[test]
fn schedules_follow_the_round_count() {
    let cfg = config(&[("selftrain.rounds", "6"), ("selftrain.alpha", "0.5*3,0.2*3")]);
    assert_eq!(cfg.selftrain.alpha, [0.5, 0.5, 0.5, 0.2, 0.2, 0.2]);
    assert_eq!(cfg.selftrain.tau_target, [0.9, 0.9, 0.8, 0.8, 0.7, 0.7]);
    assert_eq!(cfg.selftrain.learning_rate, [80.0; 6]);
}

#[test]
fn reports_repeat_except_for_timing() {
    let cfg = config(&[("selftrain.rounds", "2"), ("combiners", "all")]);
    let run = || {
        let (r, _) = run_bundles(&[bundle(9), perturb_member(&bundle(9), 0.2, 1).unwrap()], &cfg).unwrap();
        let mut v: Value = serde_json::from_str(&r.to_json()).unwrap();
        strip_timing(&mut v);
        serde_json::to_string(&v).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(!a.contains("timing_ms"));
}

#[test]
fn saved_bundles_run_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(10);
    save_bundle(&b, dir.path()).unwrap();
    // stored as f32, so compare against what was read back
    let b = load_bundle(dir.path(), &SplitSpec::default()).unwrap();

    let mut cfg = config(&[("selftrain.rounds", "2")]);
    cfg.members = vec![dir.path().to_path_buf(), dir.path().join("missing")];
    let (report, outputs) = run_pipeline(&cfg).unwrap();
    let (direct, _) = run_bundles(&[b], &cfg).unwrap();
    assert_eq!(report.members[0].target_accuracy, direct.members[0].target_accuracy);
    assert_eq!(report.members[1].status, MemberStatus::Failed);
    assert_eq!(outputs[1].as_ref().unwrap_err().kind(), ErrorKind::Data);
}
