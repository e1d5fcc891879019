//! On-disk feature records, corpus manifests, and speaker-independent splits.

mod manifest;
mod record;
mod split;

use std::path::{Path, PathBuf};

pub use manifest::{load_manifest, write_manifest, Manifest, UtteranceMeta};
pub use record::{
    read_feature_header, read_feature_layer, read_feature_record, write_feature_record,
    FeatureRecord, RecordHeader, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use split::{
    load_split, make_speaker_split, speaker_allocation, validate_split, write_split, Partition,
    SplitAssignment, SplitRatios, SplitRng, SplitViolation,
};

/// Root of a `<model_id>/<dataset_id>/<utterance_id>.fstr` tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureStore {
    root: PathBuf,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self, model_id: &str, dataset_id: &str) -> PathBuf {
        self.root.join(model_id).join(dataset_id)
    }

    pub fn record_path(&self, model_id: &str, dataset_id: &str, utterance_id: &str) -> PathBuf {
        self.dataset_dir(model_id, dataset_id)
            .join(format!("{utterance_id}.fstr"))
    }
}
