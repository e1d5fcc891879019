use std::path::PathBuf;

use proptest::prelude::*;

use super::*;
use crate::features::SplitRatios;
use crate::trainer::TrialResult;

fn summary(dev: f64, test: f64) -> RunSummary {
    let trials = DEFAULT_SEEDS
        .iter()
        .map(|&seed| TrialResult {
            config: TrainConfig {
                seed,
                ..TrainConfig::new(HeadKind::Dense, TargetLayer::Single(0))
            },
            dev_accuracy: dev,
            test_accuracy: test,
            epochs_run: 12,
            best_epoch: 2,
            train_loss: vec![1.0, 0.5],
            test_confusion: vec![vec![1, 0], vec![0, 1]],
            layer_weights: None,
        })
        .collect();
    RunSummary::from_trials(trials).unwrap()
}

fn sweep(dev: &[f64]) -> SweepResult {
    SweepResult {
        model_id: "wav2vec2-base".into(),
        dataset_id: "emodb".into(),
        head_kind: HeadKind::Dense,
        per_layer: dev.iter().map(|&d| summary(d, d)).collect(),
    }
}

#[test]
fn best_layer_is_dev_argmax() {
    assert_eq!(select_best_layer(&sweep(&[0.5, 0.9, 0.7])).unwrap(), 1);
}

#[test]
fn best_layer_ties_go_low() {
    assert_eq!(select_best_layer(&sweep(&[0.9, 0.9, 0.3])).unwrap(), 0);
    assert!(matches!(
        select_best_layer(&sweep(&[])),
        Err(Error::EmptySweep)
    ));
}

#[test]
fn error_reduction_examples() {
    assert_eq!(error_reduction(0.80, 0.90).unwrap(), Some(50.0));
    assert_eq!(error_reduction(0.90, 0.90).unwrap(), Some(0.0));
    for a in [0.0, 0.3, 0.77, 0.99] {
        assert_eq!(error_reduction(a, 1.0).unwrap(), Some(100.0));
    }
    assert_eq!(error_reduction(1.0, 0.5).unwrap(), None);
    assert!(error_reduction(1.2, 0.5).is_err());
    assert!(error_reduction(0.5, -0.1).is_err());
}

#[test]
fn average_reduction_examples() {
    assert_eq!(
        average_error_reduction([Some(20.0), Some(44.0)]).unwrap(),
        32.0
    );
    assert_eq!(average_error_reduction([Some(100.0)]).unwrap(), 100.0);
    assert_eq!(
        average_error_reduction([Some(20.0), None, Some(44.0)]).unwrap(),
        32.0
    );
    assert!(average_error_reduction([None, None]).is_err());
}

proptest! {
    #[test]
    fn reduction_sign_and_monotonicity(a in 0.0f64..0.999, p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let r = error_reduction(a, p).unwrap().unwrap();
        prop_assert_eq!(r > 0.0, p > a);
        prop_assert!(r <= 100.0);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(error_reduction(a, lo).unwrap().unwrap() <= error_reduction(a, hi).unwrap().unwrap());
    }

    #[test]
    fn best_layer_survives_monotone_transforms(dev in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let base = select_best_layer(&sweep(&dev)).unwrap();
        let squashed: Vec<f64> = dev.iter().map(|d| d.powi(3) * 0.5 + 0.1).collect();
        prop_assert_eq!(select_best_layer(&sweep(&squashed)).unwrap(), base);
        let argmax_first = dev.iter().position(|&d| d == dev.iter().cloned().fold(f64::MIN, f64::max)).unwrap();
        prop_assert_eq!(base, argmax_first);
    }
}

fn meta() -> ReportMeta {
    ReportMeta::new(
        vec!["wav2vec2-base".into()],
        vec!["emodb".into()],
        vec![HeadKind::Dense],
        TrainerDefaults::default(),
        SplitRatios::STANDARD,
    )
}

fn golden_report() -> BenchmarkReport {
    let mut s = sweep(&[0.60, 0.75, 0.85, 0.90, 0.88]);
    s.per_layer[3] = summary(0.90, 0.917);
    let agg = AggregationEntry {
        model_id: "wav2vec2-base".into(),
        dataset_id: "emodb".into(),
        summary: summary(0.85, 0.85),
    };
    BenchmarkReport::assemble(meta(), vec![s], vec![agg]).unwrap()
}

#[test]
fn grid_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&golden_report(), dir.path()).unwrap();
    let grid = std::fs::read_to_string(dir.path().join("grid_dense.csv")).unwrap();
    assert_eq!(grid, include_str!("../../tests/golden/grid_dense.csv"));
    assert!(grid.contains("91.7 [3]"));
}

#[test]
fn report_files_are_deterministic_and_complete() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let report = golden_report();
    let files = emit_report(&report, a.path()).unwrap();
    emit_report(&report, b.path()).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "grid_dense.csv",
            "layer_curves.jsonl",
            "error_reduction.jsonl",
            "report_meta.json",
            "benchmark.json"
        ]
    );
    for n in &names {
        assert_eq!(
            std::fs::read(a.path().join(n)).unwrap(),
            std::fs::read(b.path().join(n)).unwrap()
        );
    }
    let curves = std::fs::read_to_string(a.path().join("layer_curves.jsonl")).unwrap();
    assert_eq!(curves.lines().count(), 5);
    let first: serde_json::Value = serde_json::from_str(curves.lines().next().unwrap()).unwrap();
    assert_eq!(first["layer"], 0);
    assert_eq!(first["head"], "dense");
    assert!(first.get("std_test").is_some());

    let reduction = std::fs::read_to_string(a.path().join("error_reduction.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(reduction.trim()).unwrap();
    let want = 100.0 * ((1.0 - 0.85) - (1.0 - 0.917)) / (1.0 - 0.85);
    assert!((rec["error_reduction_pct"].as_f64().unwrap() - want).abs() < 1e-9);

    assert_eq!(
        load_report(a.path().join("benchmark.json")).unwrap(),
        report
    );
}

#[test]
fn perfect_aggregation_reports_na() {
    let agg = AggregationEntry {
        model_id: "wav2vec2-base".into(),
        dataset_id: "emodb".into(),
        summary: summary(1.0, 1.0),
    };
    let report = BenchmarkReport::assemble(meta(), vec![sweep(&[0.5, 0.6])], vec![agg]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("error_reduction.jsonl")).unwrap();
    assert!(text.contains("\"error_reduction_pct\":\"n/a\""));
    assert!(report
        .average_error_reduction("wav2vec2-base", HeadKind::Dense)
        .is_err());
}

#[test]
fn empty_curve_is_rejected() {
    let mut report = golden_report();
    report.sweeps[0].per_layer.clear();
    let dir = tempfile::tempdir().unwrap();
    let err = emit_report(&report, dir.path()).unwrap_err();
    assert_eq!(err.to_string(), "empty sweep");
}

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        layer_count: 4,
        time_steps: 4,
        feature_dim: 6,
        num_classes: 3,
        num_speakers: 6,
        utterances_per_class: 20,
        planted_layer: 2,
        seed,
        ..SyntheticSpec::default()
    }
}

fn fast_defaults() -> TrainerDefaults {
    TrainerDefaults {
        max_epochs: 30,
        patience: 5,
        learning_rate: 1e-2,
        ..TrainerDefaults::default()
    }
}

#[test]
fn synth_rejects_bad_specs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SyntheticSpec {
        signal_to_noise: 0.0,
        ..small_spec(0)
    };
    let err = synthesize_planted_dataset(&bad, dir.path()).unwrap_err();
    assert!(err.to_string().contains("signal_to_noise > 0"));
    let bad = SyntheticSpec {
        planted_layer: 4,
        ..small_spec(0)
    };
    assert!(synthesize_planted_dataset(&bad, dir.path()).is_err());
    let bad = SyntheticSpec {
        num_speakers: 2,
        ..small_spec(0)
    };
    assert!(synthesize_planted_dataset(&bad, dir.path())
        .unwrap_err()
        .to_string()
        .contains("≥ 3 speakers"));
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_bit_identical_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ds = synthesize_planted_dataset(&small_spec(5), a.path()).unwrap();
    synthesize_planted_dataset(&small_spec(5), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 60 + 2);
    assert_eq!(ta, tb);
    assert!(ds.manifest_path.ends_with("manifests/planted.tsv"));
    assert!(ds.split_path.ends_with("splits/planted.split"));
    assert_eq!(ds.manifest.speaker_count(), 6);
    assert!(validate_split(&ds.manifest, &ds.split).is_empty());
}

#[test]
fn planted_layer_carries_the_class_mean() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        signal_to_noise: 50.0,
        ..small_spec(1)
    };
    let ds = synthesize_planted_dataset(&spec, dir.path()).unwrap();
    let u = &ds.manifest.utterances[0];
    let rec = read_feature_record(
        ds.store
            .record_path("synthetic", "planted", &u.utterance_id),
    )
    .unwrap();
    let norm = |layer: usize| {
        let m = rec.layer(layer).unwrap();
        let mean: Vec<f64> = (0..m.cols())
            .map(|j| (0..m.rows()).map(|t| m.get(t, j) as f64).sum::<f64>() / m.rows() as f64)
            .collect();
        mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    assert!((norm(2) - 50.0).abs() < 5.0);
    assert!(norm(0) < 5.0);
}

fn source(ds: &SyntheticDataset) -> DatasetSource {
    DatasetSource::open(
        ds.store.clone(),
        "synthetic",
        &ds.manifest_path,
        &ds.split_path,
    )
    .unwrap()
}

#[test]
fn sweep_recovers_planted_layer_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthesize_planted_dataset(&small_spec(2), dir.path()).unwrap();
    let src = source(&ds);
    let a = probe_sweep(&src, HeadKind::Linear, &fast_defaults()).unwrap();
    assert_eq!(a.per_layer.len(), 4);
    assert!(a.per_layer.iter().all(|s| s.trials.len() == 5));
    assert_eq!(select_best_layer(&a).unwrap(), 2);
    let b = probe_sweep(&src, HeadKind::Linear, &fast_defaults()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn two_layer_toy_sweep_has_two_entries() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        layer_count: 2,
        planted_layer: 1,
        ..small_spec(3)
    };
    let ds = synthesize_planted_dataset(&spec, dir.path()).unwrap();
    let s = probe_sweep(&source(&ds), HeadKind::Linear, &fast_defaults()).unwrap();
    assert_eq!(s.per_layer.len(), 2);
    assert!(probe_sweep(&source(&ds), HeadKind::Aggregate, &fast_defaults()).is_err());
}

#[test]
fn aggregation_puts_weight_on_the_planted_layer() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthesize_planted_dataset(&small_spec(4), dir.path()).unwrap();
    let defaults = TrainerDefaults {
        max_epochs: 10,
        ..fast_defaults()
    };
    let summary = run_aggregation(&source(&ds), &defaults).unwrap();
    for t in &summary.trials {
        let w = t.layer_weights.as_ref().unwrap();
        assert_eq!(w.len(), 4);
        assert!(w[2] > 0.25, "weights {w:?}");
    }
}

#[test]
fn missing_feature_file_names_the_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthesize_planted_dataset(&small_spec(6), dir.path()).unwrap();
    let victim = ds.manifest.utterances[7].utterance_id.clone();
    std::fs::remove_file(ds.store.record_path("synthetic", "planted", &victim)).unwrap();
    let err = probe_sweep(&source(&ds), HeadKind::Linear, &fast_defaults()).unwrap_err();
    assert!(matches!(&err, Error::MissingFeature { utterance, .. } if *utterance == victim));
    assert!(err.to_string().contains(&victim));
}

#[test]
fn missing_model_directory_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthesize_planted_dataset(&small_spec(6), dir.path()).unwrap();
    let err = DatasetSource::open(
        ds.store.clone(),
        "nonexistent",
        &ds.manifest_path,
        &ds.split_path,
    )
    .unwrap_err();
    assert!(err.to_string().contains("nonexistent"));
    assert_eq!(err.kind(), crate::ErrorKind::Io);
}

#[test]
fn inconsistent_layer_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthesize_planted_dataset(&small_spec(7), dir.path()).unwrap();
    let victim = &ds.manifest.utterances[3].utterance_id;
    let rec =
        crate::features::FeatureRecord::new(victim.as_str(), "synthetic", 3, 4, 6, vec![0.0; 72])
            .unwrap();
    crate::features::write_feature_record(
        &rec,
        ds.store.record_path("synthetic", "planted", victim),
    )
    .unwrap();
    let err = probe_sweep(&source(&ds), HeadKind::Linear, &fast_defaults()).unwrap_err();
    assert!(matches!(err, Error::InvalidRecord(_)));
}

#[test]
fn worker_pool_size_is_validated() {
    assert_eq!(
        with_workers(Some(2), rayon::current_num_threads).unwrap(),
        2
    );
    assert!(with_workers(Some(0), || ()).is_err());
}
