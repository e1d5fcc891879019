use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Affine;
use super::ops::{affine_forward, cross_entropy_loss, cross_entropy_with_grad};
use crate::error::{Error, Result};

/// One gradient buffer per parameter tensor, in the model's declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like<M: Differentiable + ?Sized>(model: &M) -> Self {
        Self {
            tensors: model.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn zero_tensor(&mut self, i: usize) {
        self.tensors[i].iter_mut().for_each(|g| *g = 0.0);
    }

    /// Mutable views of every tensor, used by composite models to split the
    /// buffer between sub-networks.
    pub(crate) fn split_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors.iter_mut().map(|t| t.as_mut_slice()).collect()
    }
}

/// A classifier whose parameters are flat `f32` tensors and whose loss is
/// softmax cross-entropy over its logits.
pub trait Differentiable {
    type Input: ?Sized;

    fn tensors(&self) -> Vec<&[f32]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f32]>;

    /// Computes logits. When `pattern` is given, the sign of every ReLU
    /// pre-activation is appended to it (`true` = active).
    fn forward(&self, x: &Self::Input, pattern: Option<&mut Vec<bool>>) -> Result<Vec<f64>>;

    /// Adds `scale · ∂loss/∂θ` for one sample to `grads` and returns that
    /// sample's loss.
    fn accumulate_gradient(
        &self,
        x: &Self::Input,
        label: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64>;

    fn logits(&self, x: &Self::Input) -> Result<Vec<f64>> {
        self.forward(x, None)
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

pub fn batch_loss<M: Differentiable + ?Sized>(
    model: &M,
    batch: &[(&M::Input, usize)],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptySplit("batch"));
    }
    let mut total = 0.0;
    for (x, label) in batch {
        total += cross_entropy_loss(&model.logits(x)?, *label)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean batch loss and its exact gradient with respect to every parameter.
pub fn backward<M: Differentiable + ?Sized>(
    model: &M,
    batch: &[(&M::Input, usize)],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptySplit("batch"));
    }
    let mut grads = Gradients::zeros_like(model);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, label) in batch {
        total += model.accumulate_gradient(x, *label, scale, &mut grads)?;
    }
    Ok((total * scale, grads))
}

fn loss_and_pattern<M: Differentiable + ?Sized>(
    model: &M,
    batch: &[(&M::Input, usize)],
    pattern: &mut Vec<bool>,
) -> Result<f64> {
    pattern.clear();
    let mut total = 0.0;
    for (x, label) in batch {
        total += cross_entropy_loss(&model.forward(x, Some(pattern))?, *label)?;
    }
    Ok(total / batch.len() as f64)
}

/// Multiplies one analytic gradient coordinate before comparison. Used to
/// confirm that the check detects a wrong gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedBug {
    pub tensor: usize,
    pub index: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Upper bound on coordinates checked per tensor; larger tensors are
    /// sampled without replacement. `None` checks everything.
    pub max_coords_per_tensor: Option<usize>,
    pub sample_seed: u64,
    pub planted_bug: Option<PlantedBug>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_coords_per_tensor: None,
            sample_seed: 0,
            planted_bug: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor, index)` of the coordinate with the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates sitting on a ReLU kink at every tried step size.
    pub skipped_at_kink: usize,
}

/// Largest relative error between analytic and central-difference gradients.
pub fn finite_difference_check<M>(model: &M, batch: &[(&M::Input, usize)], eps: f64) -> Result<f64>
where
    M: Differentiable + Clone,
{
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    Ok(finite_difference_check_with(model, batch, &opts)?.max_rel_error)
}

// Attempts per coordinate, shrinking the step 4x each time a ReLU flips.
const KINK_RETRIES: usize = 5;

/// Central differences `(L(θ+h) − L(θ−h)) / (θ₊ − θ₋)`, where the denominator
/// is the step actually realized in `f32` storage. If either side changes the
/// ReLU activation pattern the difference straddles a kink; the step is then
/// shrunk and, failing that, the coordinate is counted as skipped.
pub fn finite_difference_check_with<M>(
    model: &M,
    batch: &[(&M::Input, usize)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    M: Differentiable + Clone,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::Config("eps must be positive".into()));
    }
    let (_, mut analytic) = backward(model, batch)?;
    if let Some(bug) = opts.planted_bug {
        analytic.tensor_mut(bug.tensor)[bug.index] *= bug.factor;
    }

    let mut base_pattern = Vec::new();
    loss_and_pattern(model, batch, &mut base_pattern)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.sample_seed);
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut probe = model.clone();
    let mut pattern = Vec::new();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_at_kink: 0,
    };

    for (ti, &len) in sizes.iter().enumerate() {
        let mut coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(cap) if cap < len => rand::seq::index::sample(&mut rng, len, cap).into_vec(),
            _ => (0..len).collect(),
        };
        if let Some(bug) = opts.planted_bug {
            if bug.tensor == ti && !coords.contains(&bug.index) {
                coords.push(bug.index);
            }
        }
        coords.sort_unstable();

        for ci in coords {
            let original = probe.tensors()[ti][ci];
            let mut step = opts.eps;
            let mut numeric = None;
            for _ in 0..KINK_RETRIES {
                let plus = (original as f64 + step) as f32;
                let minus = (original as f64 - step) as f32;
                probe.tensors_mut()[ti][ci] = plus;
                let lp = loss_and_pattern(&probe, batch, &mut pattern)?;
                let plus_ok = pattern == base_pattern;
                probe.tensors_mut()[ti][ci] = minus;
                let lm = loss_and_pattern(&probe, batch, &mut pattern)?;
                let minus_ok = pattern == base_pattern;
                probe.tensors_mut()[ti][ci] = original;
                if plus_ok && minus_ok {
                    numeric = Some((lp - lm) / (plus as f64 - minus as f64));
                    break;
                }
                step /= 4.0;
            }
            let Some(n) = numeric else {
                report.skipped_at_kink += 1;
                continue;
            };
            let a = analytic.tensor(ti)[ci];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((ti, ci));
            }
        }
    }
    Ok(report)
}

/// Multinomial logistic regression on a plain feature vector: one affine
/// map straight into the softmax. Small enough to differentiate by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineClassifier {
    pub layer: Affine,
}

impl Differentiable for AffineClassifier {
    type Input = [f64];

    fn tensors(&self) -> Vec<&[f32]> {
        vec![self.layer.weight.as_slice(), &self.layer.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        vec![self.layer.weight.as_mut_slice(), &mut self.layer.bias]
    }

    fn forward(&self, x: &[f64], _pattern: Option<&mut Vec<bool>>) -> Result<Vec<f64>> {
        affine_forward(x, &self.layer)
    }

    fn accumulate_gradient(
        &self,
        x: &[f64],
        label: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let logits = self.forward(x, None)?;
        let (loss, g) = cross_entropy_with_grad(&logits, label)?;
        let cols = self.layer.in_dim();
        let gw = grads.tensor_mut(0);
        for (o, &go) in g.iter().enumerate() {
            for (i, &xi) in x.iter().enumerate() {
                gw[o * cols + i] += scale * go * xi;
            }
        }
        for (gb, &go) in grads.tensor_mut(1).iter_mut().zip(&g) {
            *gb += scale * go;
        }
        Ok(loss)
    }
}
