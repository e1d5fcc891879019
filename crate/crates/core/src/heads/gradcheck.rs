//! Randomized finite-difference checks over all three head kinds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{init_head, Head, HeadKind, HeadSpec};
use crate::error::Result;
use crate::nn::{finite_difference_check_with, GradCheckOptions, Matrix, PlantedBug};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub eps: f64,
    pub coords_per_tensor: usize,
    pub seed: u64,
    /// Scale one coordinate of the output bias gradient in every instance.
    pub plant_bug: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            eps: 1e-3,
            coords_per_tensor: 24,
            seed: 0,
            plant_bug: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub index: usize,
    pub kind: HeadKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub batch: usize,
    pub max_rel_error: f64,
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped_at_kink: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub eps: f64,
    pub max_rel_error: f64,
    pub instances: Vec<InstanceReport>,
}

impl SuiteReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        !self.instances.is_empty() && self.max_rel_error < tolerance
    }
}

/// A small random problem: head, inputs, labels.
struct Instance {
    head: Head,
    inputs: Vec<Vec<Matrix>>,
    labels: Vec<usize>,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    Matrix::new(rows, cols, data).expect("sizes match")
}

fn make_instance(index: usize, seed: u64) -> Result<Instance> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let kind = [HeadKind::Linear, HeadKind::Dense, HeadKind::Aggregate][index % 3];
    let d = rng.random_range(2..=6);
    let c = rng.random_range(2..=5);
    let b = rng.random_range(1..=3);
    let layers = if kind == HeadKind::Aggregate {
        rng.random_range(2..=4)
    } else {
        1
    };
    let spec = HeadSpec {
        kind,
        input_dim: d,
        num_classes: c,
        layer_count: (kind == HeadKind::Aggregate).then_some(layers),
    };
    let mut head = init_head(&spec, rng.random())?;
    // Move biases and layer logits off zero so their gradients are exercised.
    let tensors: Vec<&mut [f32]> = match &mut head {
        Head::Linear(h) => crate::nn::Differentiable::tensors_mut(h),
        Head::Dense(h) => crate::nn::Differentiable::tensors_mut(h),
        Head::Aggregate(h) => crate::nn::Differentiable::tensors_mut(h),
    };
    for t in tensors {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.2f32..0.2);
        }
    }
    let mut inputs = Vec::with_capacity(b);
    let mut labels = Vec::with_capacity(b);
    for _ in 0..b {
        let t = rng.random_range(1..=3);
        inputs.push((0..layers).map(|_| random_matrix(&mut rng, t, d)).collect());
        labels.push(rng.random_range(0..c));
    }
    Ok(Instance {
        head,
        inputs,
        labels,
    })
}

fn check_instance(index: usize, cfg: &SuiteConfig) -> Result<InstanceReport> {
    let inst = make_instance(index, cfg.seed)?;
    let tensor_count = inst.head.tensors().len();
    let opts = GradCheckOptions {
        eps: cfg.eps,
        max_coords_per_tensor: Some(cfg.coords_per_tensor),
        sample_seed: cfg.seed.wrapping_add(index as u64),
        planted_bug: cfg.plant_bug.map(|factor| PlantedBug {
            tensor: tensor_count - 1,
            index: 0,
            factor,
        }),
    };
    let report = match &inst.head {
        Head::Linear(h) => {
            let batch: Vec<_> = inst
                .inputs
                .iter()
                .map(|x| &x[0])
                .zip(inst.labels.iter().copied())
                .collect();
            finite_difference_check_with(h, &batch, &opts)?
        }
        Head::Dense(h) => {
            let batch: Vec<_> = inst
                .inputs
                .iter()
                .map(|x| &x[0])
                .zip(inst.labels.iter().copied())
                .collect();
            finite_difference_check_with(h, &batch, &opts)?
        }
        Head::Aggregate(h) => {
            let batch: Vec<_> = inst
                .inputs
                .iter()
                .map(|x| x.as_slice())
                .zip(inst.labels.iter().copied())
                .collect();
            finite_difference_check_with(h, &batch, &opts)?
        }
    };
    Ok(InstanceReport {
        index,
        kind: inst.head.kind(),
        input_dim: inst.head.input_dim(),
        num_classes: inst.head.num_classes(),
        batch: inst.labels.len(),
        max_rel_error: report.max_rel_error,
        worst: report.worst,
        checked: report.checked,
        skipped_at_kink: report.skipped_at_kink,
    })
}

/// Runs every instance in parallel on the current rayon pool.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let instances = (0..cfg.instances)
        .into_par_iter()
        .map(|i| check_instance(i, cfg))
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = instances
        .iter()
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    Ok(SuiteReport {
        eps: cfg.eps,
        max_rel_error,
        instances,
    })
}
