//! Layer sweeps, the aggregation baseline, best-layer selection, error
//! reduction, synthetic planted-layer corpora, and report files.

mod report;
mod synth;

use std::io::ErrorKind as IoKind;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    emit_report, format_cell, load_report, AggregationEntry, BenchmarkReport, BestLayer,
    ErrorReductionEntry, ReportMeta,
};
pub use synth::{synthesize_planted_dataset, SyntheticDataset, SyntheticSpec};

use crate::error::{Error, Result};
use crate::features::{
    load_manifest, load_split, read_feature_header, read_feature_layer, read_feature_record,
    validate_split, FeatureStore, Manifest, Partition, SplitAssignment,
};
use crate::heads::{FeatureView, HeadKind};
use crate::trainer::{
    run_trials, LabeledViews, RunSummary, SplitData, TargetLayer, TrainConfig, DEFAULT_SEEDS,
};

/// Trainer settings shared by every task of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerDefaults {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub standardize: bool,
    pub seeds: Vec<u64>,
}

impl Default for TrainerDefaults {
    fn default() -> Self {
        let base = TrainConfig::new(HeadKind::Linear, TargetLayer::Single(0));
        Self {
            learning_rate: base.learning_rate,
            batch_size: base.batch_size,
            max_epochs: base.max_epochs,
            patience: base.patience,
            standardize: base.standardize,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

impl TrainerDefaults {
    pub fn validate(&self) -> Result<()> {
        self.config(HeadKind::Linear, TargetLayer::Single(0))
            .validate()
    }

    pub fn config(&self, head_kind: HeadKind, target_layer: TargetLayer) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            standardize: self.standardize,
            ..TrainConfig::new(head_kind, target_layer)
        }
    }
}

/// One (model, dataset) pair ready to be read: manifest, split, and the
/// feature tree.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    pub model_id: String,
    pub manifest: Manifest,
    pub split: SplitAssignment,
    pub store: FeatureStore,
}

impl DatasetSource {
    /// Fails if the split does not cover the manifest speaker-disjointly.
    pub fn new(
        model_id: impl Into<String>,
        manifest: Manifest,
        split: SplitAssignment,
        store: FeatureStore,
    ) -> Result<Self> {
        if let Some(v) = validate_split(&manifest, &split).into_iter().next() {
            return Err(Error::Split(v.to_string()));
        }
        let model_id = model_id.into();
        let dir = store.dataset_dir(&model_id, &manifest.dataset_id);
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(IoKind::NotFound, "feature directory not found"),
            ));
        }
        Ok(Self {
            model_id,
            manifest,
            split,
            store,
        })
    }

    pub fn open(
        store: FeatureStore,
        model_id: &str,
        manifest_path: impl AsRef<Path>,
        split_path: impl AsRef<Path>,
    ) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let split = load_split(split_path)?;
        Self::new(model_id, manifest, split, store)
    }

    pub fn dataset_id(&self) -> &str {
        &self.manifest.dataset_id
    }

    fn path_of(&self, utterance_id: &str) -> std::path::PathBuf {
        self.store
            .record_path(&self.model_id, &self.manifest.dataset_id, utterance_id)
    }

    fn missing(&self, utterance_id: &str, err: Error) -> Error {
        match err {
            Error::Io { path, source } if source.kind() == IoKind::NotFound => {
                Error::MissingFeature {
                    utterance: utterance_id.to_string(),
                    path,
                }
            }
            other => other,
        }
    }

    /// Layer count shared by every utterance's record.
    pub fn layer_count(&self) -> Result<usize> {
        let mut count = None;
        for u in &self.manifest.utterances {
            let id = &u.utterance_id;
            let header = read_feature_header(self.path_of(id)).map_err(|e| self.missing(id, e))?;
            match count {
                None => count = Some(header.layer_count),
                Some(c) if c != header.layer_count => {
                    return Err(Error::InvalidRecord(format!(
                        "utterance {id} has {} layers, earlier utterances have {c}",
                        header.layer_count
                    )))
                }
                Some(_) => {}
            }
        }
        count.ok_or(Error::EmptySplit("manifest"))
    }

    fn assemble(&self, mut load: impl FnMut(&str) -> Result<FeatureView>) -> Result<SplitData> {
        let classes = self.manifest.class_count();
        let labels = self.manifest.label_indices();
        let mut parts: [Vec<(FeatureView, usize)>; 3] = Default::default();
        for (u, label) in self.manifest.utterances.iter().zip(labels) {
            let partition = self
                .split
                .partition_of(&u.utterance_id)
                .ok_or_else(|| Error::Split(format!("uncovered utterance: {}", u.utterance_id)))?;
            let idx = Partition::ALL
                .iter()
                .position(|p| *p == partition)
                .expect("known partition");
            parts[idx].push((load(&u.utterance_id)?, label));
        }
        let [train, dev, test] = parts;
        Ok(SplitData {
            train: LabeledViews::new(classes, train),
            dev: LabeledViews::new(classes, dev),
            test: LabeledViews::new(classes, test),
        })
    }

    fn check_header(&self, id: &str, model: &str, utt: &str) -> Result<()> {
        if model != self.model_id || utt != id {
            return Err(Error::InvalidRecord(format!(
                "{} holds ({model}, {utt}), expected ({}, {id})",
                self.path_of(id).display(),
                self.model_id
            )));
        }
        Ok(())
    }

    /// Frames of one layer for every utterance, grouped by partition.
    pub fn load_layer(&self, layer: usize) -> Result<SplitData> {
        let mut layers = None;
        self.assemble(|id| {
            let (header, m) =
                read_feature_layer(self.path_of(id), layer).map_err(|e| self.missing(id, e))?;
            self.check_header(id, &header.model_id, &header.utterance_id)?;
            if *layers.get_or_insert(header.layer_count) != header.layer_count {
                return Err(Error::InvalidRecord(format!(
                    "utterance {id} has {} layers",
                    header.layer_count
                )));
            }
            Ok(FeatureView::Frames(m))
        })
    }

    /// Every layer for every utterance.
    pub fn load_stack(&self) -> Result<SplitData> {
        self.assemble(|id| {
            let rec = read_feature_record(self.path_of(id)).map_err(|e| self.missing(id, e))?;
            self.check_header(id, &rec.model_id, &rec.utterance_id)?;
            Ok(FeatureView::Stack(rec.stack()))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub model_id: String,
    pub dataset_id: String,
    pub head_kind: HeadKind,
    /// Indexed by layer.
    pub per_layer: Vec<RunSummary>,
}

/// One [`run_trials`] per layer, every (layer, seed) task on the current
/// rayon pool. Results are ordered by layer regardless of completion order.
pub fn probe_sweep(
    source: &DatasetSource,
    head_kind: HeadKind,
    defaults: &TrainerDefaults,
) -> Result<SweepResult> {
    if head_kind == HeadKind::Aggregate {
        return Err(Error::Config(
            "layer sweeps use the linear or dense head".into(),
        ));
    }
    let layers = source.layer_count()?;
    let per_layer = (0..layers)
        .into_par_iter()
        .map(|layer| {
            let data = source.load_layer(layer)?;
            let cfg = defaults.config(head_kind, TargetLayer::Single(layer));
            run_trials(&cfg, &data, &defaults.seeds)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        model_id: source.model_id.clone(),
        dataset_id: source.dataset_id().to_string(),
        head_kind,
        per_layer,
    })
}

/// Aggregation head over the full layer stack.
pub fn run_aggregation(source: &DatasetSource, defaults: &TrainerDefaults) -> Result<RunSummary> {
    source.layer_count()?;
    let data = source.load_stack()?;
    run_trials(
        &defaults.config(HeadKind::Aggregate, TargetLayer::All),
        &data,
        &defaults.seeds,
    )
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Layer with the highest mean dev accuracy.
pub fn select_best_layer(sweep: &SweepResult) -> Result<usize> {
    let dev: Vec<f64> = sweep.per_layer.iter().map(|s| s.mean_dev).collect();
    argmax_first(&dev).ok_or(Error::EmptySweep)
}

/// Percentage of the aggregation model's error removed by the probe.
/// `None` when the aggregation model makes no errors.
pub fn error_reduction(agg_test_acc: f64, probe_test_acc: f64) -> Result<Option<f64>> {
    for (what, v) in [("aggregate", agg_test_acc), ("probe", probe_test_acc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{what} accuracy {v} outside [0, 1]")));
        }
    }
    if agg_test_acc == 1.0 {
        return Ok(None);
    }
    let agg_err = 1.0 - agg_test_acc;
    let probe_err = 1.0 - probe_test_acc;
    Ok(Some(100.0 * ((agg_err - probe_err) / agg_err)))
}

/// Unweighted mean over the defined entries.
pub fn average_error_reduction(values: impl IntoIterator<Item = Option<f64>>) -> Result<f64> {
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::Config(
            "no dataset has a defined error reduction".into(),
        ));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool
/// when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests;
