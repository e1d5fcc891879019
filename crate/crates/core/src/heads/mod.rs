//! Classifier heads over frozen features.
//!
//! * [`LinearHead`]: time-average, one 128-unit ReLU layer, logits.
//! * [`DenseHead`]: two per-frame 256-unit ReLU layers, time-average, logits.
//! * [`AggregationHead`]: learned softmax mixture of all layers feeding a
//!   dense head.

mod aggregate;
mod checkpoint;
mod dense;
pub mod gradcheck;
mod linear;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aggregate::AggregationHead;
pub use checkpoint::{read_checkpoint, write_checkpoint, HEAD_MAGIC, HEAD_VERSION};
pub use dense::DenseHead;
pub use linear::LinearHead;

use crate::error::{Error, Result};
use crate::nn::{Differentiable, Matrix};

pub const LINEAR_HIDDEN: usize = 128;
pub const DENSE_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Dense,
    Aggregate,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::Dense => "dense",
            HeadKind::Aggregate => "aggregate",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            HeadKind::Linear => 0,
            HeadKind::Dense => 1,
            HeadKind::Aggregate => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadKind::Linear),
            1 => Some(HeadKind::Dense),
            2 => Some(HeadKind::Aggregate),
            _ => None,
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(HeadKind::Linear),
            "dense" => Ok(HeadKind::Dense),
            "aggregate" | "aggregation" => Ok(HeadKind::Aggregate),
            _ => Err(Error::Config(format!("unknown head kind '{s}'"))),
        }
    }
}

/// Shapes needed to build a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Required for [`HeadKind::Aggregate`], ignored otherwise.
    pub layer_count: Option<usize>,
}

/// What a head consumes for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureView {
    /// `[T][D]` frames from a single layer.
    Frames(Matrix),
    /// Every layer, each `[T][D]`.
    Stack(Vec<Matrix>),
}

impl FeatureView {
    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureView::Frames(m) => m.cols(),
            FeatureView::Stack(layers) => layers.first().map_or(0, Matrix::cols),
        }
    }

    pub fn layer_count(&self) -> usize {
        match self {
            FeatureView::Frames(_) => 1,
            FeatureView::Stack(layers) => layers.len(),
        }
    }

    pub fn frames(&self) -> Option<&Matrix> {
        match self {
            FeatureView::Frames(m) => Some(m),
            FeatureView::Stack(_) => None,
        }
    }

    pub fn stack(&self) -> Option<&[Matrix]> {
        match self {
            FeatureView::Frames(_) => None,
            FeatureView::Stack(s) => Some(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Linear(LinearHead),
    Dense(DenseHead),
    Aggregate(AggregationHead),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Linear(_) => HeadKind::Linear,
            Head::Dense(_) => HeadKind::Dense,
            Head::Aggregate(_) => HeadKind::Aggregate,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Head::Linear(h) => h.input_dim(),
            Head::Dense(h) => h.input_dim(),
            Head::Aggregate(h) => h.dense.input_dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Head::Linear(h) => h.num_classes(),
            Head::Dense(h) => h.num_classes(),
            Head::Aggregate(h) => h.dense.num_classes(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Head::Linear(h) => h.param_count(),
            Head::Dense(h) => h.param_count(),
            Head::Aggregate(h) => h.param_count(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f32]> {
        match self {
            Head::Linear(h) => h.tensors(),
            Head::Dense(h) => h.tensors(),
            Head::Aggregate(h) => h.tensors(),
        }
    }

    pub fn logits(&self, view: &FeatureView) -> Result<Vec<f64>> {
        match (self, view) {
            (Head::Linear(h), FeatureView::Frames(x)) => h.logits(x),
            (Head::Dense(h), FeatureView::Frames(x)) => h.logits(x),
            (Head::Aggregate(h), FeatureView::Stack(s)) => h.logits(s),
            (head, _) => Err(Error::Shape(format!(
                "{} head cannot consume this feature view",
                head.kind()
            ))),
        }
    }

    pub fn layer_weights(&self) -> Option<Vec<f64>> {
        match self {
            Head::Aggregate(h) => Some(h.layer_weights()),
            _ => None,
        }
    }
}

/// Glorot-uniform weights and zero biases drawn from a ChaCha8 stream seeded
/// with `seed`; aggregation layer logits start at zero.
pub fn init_head(spec: &HeadSpec, seed: u64) -> Result<Head> {
    if spec.input_dim == 0 || spec.num_classes == 0 {
        return Err(Error::Config("head dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match spec.kind {
        HeadKind::Linear => {
            Head::Linear(LinearHead::init(spec.input_dim, spec.num_classes, &mut rng))
        }
        HeadKind::Dense => Head::Dense(DenseHead::init(spec.input_dim, spec.num_classes, &mut rng)),
        HeadKind::Aggregate => {
            let layers = spec.layer_count.filter(|&l| l > 0).ok_or_else(|| {
                Error::Config("aggregation head needs a positive layer count".into())
            })?;
            Head::Aggregate(AggregationHead::init(
                layers,
                spec.input_dim,
                spec.num_classes,
                &mut rng,
            ))
        }
    })
}

#[cfg(test)]
mod tests;
