use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    make_speaker_split, write_feature_record, write_manifest, write_split, FeatureRecord,
    FeatureStore, Manifest, SplitAssignment, SplitRatios, UtteranceMeta,
};

/// Seconds per synthetic frame, used only for manifest durations.
const FRAME_SECONDS: f64 = 0.02;

/// A corpus whose class signal lives in exactly one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dataset_id: String,
    pub model_id: String,
    pub layer_count: usize,
    pub time_steps: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_speakers: usize,
    pub utterances_per_class: usize,
    pub planted_layer: usize,
    pub signal_to_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dataset_id: "planted".into(),
            model_id: "synthetic".into(),
            layer_count: 13,
            time_steps: 10,
            feature_dim: 16,
            num_classes: 4,
            num_speakers: 10,
            utterances_per_class: 40,
            planted_layer: 6,
            signal_to_noise: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal_to_noise.is_finite() && self.signal_to_noise > 0.0) {
            return Err(Error::Config("signal_to_noise > 0 required".into()));
        }
        if self.planted_layer >= self.layer_count {
            return Err(Error::Config(format!(
                "planted_layer {} must be below layer_count {}",
                self.planted_layer, self.layer_count
            )));
        }
        if self.num_speakers < 3 {
            return Err(Error::Config("≥ 3 speakers required".into()));
        }
        if self.time_steps == 0
            || self.feature_dim == 0
            || self.num_classes == 0
            || self.utterances_per_class == 0
        {
            return Err(Error::Config(
                "synthetic dimensions must be positive".into(),
            ));
        }
        if self.num_classes * self.utterances_per_class < self.num_speakers {
            return Err(Error::Config(
                "every speaker needs at least one utterance".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest_path: PathBuf,
    pub split_path: PathBuf,
    pub store: FeatureStore,
    pub manifest: Manifest,
    pub split: SplitAssignment,
}

/// Writes `manifests/<dataset>.tsv`, `splits/<dataset>.split`, and
/// `features/<model>/<dataset>/*.fstr` under `root`.
///
/// Each class gets a random unit direction. Every layer of every utterance is
/// i.i.d. standard normal noise; frames of the planted layer additionally carry
/// `signal_to_noise` times their class direction. Utterances are ordered by
/// class and speakers are dealt round-robin.
pub fn synthesize_planted_dataset(
    spec: &SyntheticSpec,
    root: impl AsRef<Path>,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    let root = root.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t, d) = (spec.time_steps, spec.feature_dim);

    let directions: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let total = spec.num_classes * spec.utterances_per_class;
    let width = total.to_string().len().max(4);
    let spk_width = spec.num_speakers.to_string().len().max(2);
    let store = FeatureStore::new(root.join("features"));
    let mut utterances = Vec::with_capacity(total);
    for k in 0..total {
        let class = k / spec.utterances_per_class;
        let utterance_id = format!("u{k:0width$}");
        let mut data = Vec::with_capacity(spec.layer_count * t * d);
        for layer in 0..spec.layer_count {
            let planted = layer == spec.planted_layer;
            for _ in 0..t {
                for &mu in &directions[class] {
                    let noise: f64 = rng.sample(StandardNormal);
                    let v = if planted {
                        noise + spec.signal_to_noise * mu
                    } else {
                        noise
                    };
                    data.push(v as f32);
                }
            }
        }
        let record =
            FeatureRecord::new(&utterance_id, &spec.model_id, spec.layer_count, t, d, data)?;
        write_feature_record(
            &record,
            store.record_path(&spec.model_id, &spec.dataset_id, &utterance_id),
        )?;
        utterances.push(UtteranceMeta {
            audio_path: format!("synthetic/{utterance_id}.wav"),
            utterance_id,
            speaker_id: format!("s{:0spk_width$}", k % spec.num_speakers),
            label: format!("c{class}"),
            duration_s: t as f64 * FRAME_SECONDS,
        });
    }
    let class_names = (0..spec.num_classes).map(|c| format!("c{c}")).collect();
    let manifest = Manifest::new(spec.dataset_id.clone(), class_names, utterances)?;
    let split = make_speaker_split(&manifest, &SplitRatios::STANDARD, spec.seed)?;

    let manifest_path = root
        .join("manifests")
        .join(format!("{}.tsv", spec.dataset_id));
    let split_path = root
        .join("splits")
        .join(format!("{}.split", spec.dataset_id));
    write_manifest(&manifest, &manifest_path)?;
    write_split(&split, &split_path)?;
    Ok(SyntheticDataset {
        manifest_path,
        split_path,
        store,
        manifest,
        split,
    })
}
