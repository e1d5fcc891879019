//! Static descriptions of the benchmark corpora and the frozen feature extractors.
//!
//! Layer counts here are encoder depths; feature records carry one extra
//! layer for the convolutional front end (the zeroth layer).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetInfo {
    pub id: &'static str,
    pub name: &'static str,
    pub language: &'static str,
    pub classes: usize,
    pub utterances: usize,
    pub speakers: usize,
    pub avg_duration_s: f64,
    pub total_duration_h: f64,
}

pub const DATASETS: [DatasetInfo; 7] = [
    DatasetInfo {
        id: "aesdd",
        name: "AESDD",
        language: "Greek",
        classes: 5,
        utterances: 604,
        speakers: 6,
        avg_duration_s: 4.2,
        total_duration_h: 0.7,
    },
    DatasetInfo {
        id: "cafe",
        name: "CaFE",
        language: "French",
        classes: 7,
        utterances: 864,
        speakers: 12,
        avg_duration_s: 4.5,
        total_duration_h: 1.1,
    },
    DatasetInfo {
        id: "emodb",
        name: "EmoDB",
        language: "German",
        classes: 7,
        utterances: 535,
        speakers: 10,
        avg_duration_s: 2.8,
        total_duration_h: 0.4,
    },
    DatasetInfo {
        id: "emovo",
        name: "EMOVO",
        language: "Italian",
        classes: 7,
        utterances: 588,
        speakers: 6,
        avg_duration_s: 3.1,
        total_duration_h: 0.5,
    },
    DatasetInfo {
        id: "iem4",
        name: "IEMOCAP",
        language: "English",
        classes: 4,
        utterances: 5531,
        speakers: 10,
        avg_duration_s: 3.4,
        total_duration_h: 7.0,
    },
    DatasetInfo {
        id: "ravdess",
        name: "RAVDESS",
        language: "English",
        classes: 8,
        utterances: 1440,
        speakers: 24,
        avg_duration_s: 3.7,
        total_duration_h: 1.5,
    },
    DatasetInfo {
        id: "shemo",
        name: "ShEMO",
        language: "Persian",
        classes: 6,
        utterances: 3000,
        speakers: 87,
        avg_duration_s: 4.0,
        total_duration_h: 3.3,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Wav2vec2,
    Xlsr,
    Hubert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    Pretrained,
    AsrFinetuned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelInfo {
    pub id: &'static str,
    pub name: &'static str,
    pub family: ModelFamily,
    pub variant: ModelVariant,
    pub encoder_layers: usize,
}

impl ModelInfo {
    /// Layers present in an extracted feature record, zeroth layer included.
    pub fn layer_count(&self) -> usize {
        self.encoder_layers + 1
    }
}

pub const MODELS: [ModelInfo; 8] = [
    ModelInfo {
        id: "wav2vec2-base",
        name: "wav2vec2 Base",
        family: ModelFamily::Wav2vec2,
        variant: ModelVariant::Pretrained,
        encoder_layers: 12,
    },
    ModelInfo {
        id: "wav2vec2-large",
        name: "wav2vec2 Large",
        family: ModelFamily::Wav2vec2,
        variant: ModelVariant::Pretrained,
        encoder_layers: 24,
    },
    ModelInfo {
        id: "wav2vec2-xlsr-53",
        name: "wav2vec2 XLSR 53",
        family: ModelFamily::Xlsr,
        variant: ModelVariant::Pretrained,
        encoder_layers: 24,
    },
    ModelInfo {
        id: "wav2vec2-xlsr-300m",
        name: "wav2vec2 XLSR 300M",
        family: ModelFamily::Xlsr,
        variant: ModelVariant::Pretrained,
        encoder_layers: 24,
    },
    ModelInfo {
        id: "wav2vec2-asr-large",
        name: "wav2vec2 ASR Large",
        family: ModelFamily::Wav2vec2,
        variant: ModelVariant::AsrFinetuned,
        encoder_layers: 24,
    },
    ModelInfo {
        id: "hubert-base",
        name: "HuBERT Base",
        family: ModelFamily::Hubert,
        variant: ModelVariant::Pretrained,
        encoder_layers: 12,
    },
    ModelInfo {
        id: "hubert-large",
        name: "HuBERT Large",
        family: ModelFamily::Hubert,
        variant: ModelVariant::Pretrained,
        encoder_layers: 24,
    },
    ModelInfo {
        id: "hubert-asr-large",
        name: "HuBERT ASR Large",
        family: ModelFamily::Hubert,
        variant: ModelVariant::AsrFinetuned,
        encoder_layers: 24,
    },
];

fn matches(key: &str, id: &str, name: &str) -> bool {
    key.eq_ignore_ascii_case(id) || key.eq_ignore_ascii_case(name)
}

/// Looks up a corpus by id or display name, case-insensitively.
/// `iemocap` is accepted as an alias for the four-class subset.
pub fn dataset(key: &str) -> Option<&'static DatasetInfo> {
    let key = if key.eq_ignore_ascii_case("iemocap") {
        "iem4"
    } else {
        key
    };
    DATASETS.iter().find(|d| matches(key, d.id, d.name))
}

pub fn model(key: &str) -> Option<&'static ModelInfo> {
    MODELS.iter().find(|m| matches(key, m.id, m.name))
}

pub fn require_model(key: &str) -> Result<&'static ModelInfo> {
    model(key).ok_or_else(|| Error::Config(format!("unknown model '{key}'")))
}
