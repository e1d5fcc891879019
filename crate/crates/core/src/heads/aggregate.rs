use rand::Rng;

use super::dense::DenseHead;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_with_grad, softmax, Differentiable, Gradients, Matrix};

/// Softmax-weighted average of every layer, fed frame by frame into a
/// [`DenseHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationHead {
    /// One logit per layer; the mixing weights are their softmax.
    pub layer_logits: Vec<f32>,
    pub dense: DenseHead,
}

impl AggregationHead {
    /// Uniform layer weights; the dense part is drawn from `rng` exactly as
    /// [`DenseHead::init`] would draw it.
    pub fn init<R: Rng + ?Sized>(
        layer_count: usize,
        input_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            layer_logits: vec![0.0; layer_count],
            dense: DenseHead::init(input_dim, num_classes, rng),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layer_logits.len()
    }

    pub fn layer_weights(&self) -> Vec<f64> {
        let logits: Vec<f64> = self.layer_logits.iter().map(|&l| l as f64).collect();
        softmax(&logits)
    }

    /// Weights every frame of every layer and sums. Returns the fused
    /// `[T·D]` frames and the frame count.
    fn fuse(&self, stack: &[Matrix], weights: &[f64]) -> Result<(Vec<f64>, usize)> {
        if stack.len() != self.layer_count() {
            return Err(Error::Shape(format!(
                "aggregation head has {} layer weights, input has {} layers",
                self.layer_count(),
                stack.len()
            )));
        }
        let first = &stack[0];
        let (frames, d) = (first.rows(), first.cols());
        if d != self.dense.input_dim() {
            return Err(Error::Shape(format!(
                "aggregation head expects {} features per frame, got {d}",
                self.dense.input_dim()
            )));
        }
        if stack.iter().any(|m| m.rows() != frames || m.cols() != d) {
            return Err(Error::Shape(
                "layers of one utterance differ in shape".into(),
            ));
        }
        let mut fused = vec![0.0f64; frames * d];
        for (layer, &w) in stack.iter().zip(weights) {
            for (f, &v) in fused.iter_mut().zip(layer.as_slice()) {
                *f += w * v as f64;
            }
        }
        Ok((fused, frames))
    }
}

impl Differentiable for AggregationHead {
    type Input = [Matrix];

    fn tensors(&self) -> Vec<&[f32]> {
        let mut v: Vec<&[f32]> = vec![&self.layer_logits];
        v.extend(self.dense.tensor_refs());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v: Vec<&mut [f32]> = vec![&mut self.layer_logits];
        v.extend(self.dense.tensor_muts());
        v
    }

    fn forward(&self, stack: &[Matrix], pattern: Option<&mut Vec<bool>>) -> Result<Vec<f64>> {
        let weights = self.layer_weights();
        let (fused, frames) = self.fuse(stack, &weights)?;
        Ok(self.dense.forward_frames(&fused, frames, pattern)?.logits)
    }

    fn accumulate_gradient(
        &self,
        stack: &[Matrix],
        label: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let weights = self.layer_weights();
        let (fused, frames) = self.fuse(stack, &weights)?;
        let trace = self.dense.forward_frames(&fused, frames, None)?;
        let (loss, mut g) = cross_entropy_with_grad(&trace.logits, label)?;
        g.iter_mut().for_each(|v| *v *= scale);

        let mut views = grads.split_mut();
        let (logit_grad, dense_grads) = views.split_at_mut(1);
        debug_assert_eq!(dense_grads.len(), DenseHead::TENSORS);
        let g_fused = self
            .dense
            .backward_frames(&fused, &trace, &g, dense_grads, true)
            .expect("input gradient requested");

        // ∂L/∂w_l = Σ g_fused · x_l, then back through the softmax.
        let g_w: Vec<f64> = stack
            .iter()
            .map(|layer| {
                layer
                    .as_slice()
                    .iter()
                    .zip(&g_fused)
                    .map(|(&v, &gf)| v as f64 * gf)
                    .sum()
            })
            .collect();
        let mean: f64 = weights.iter().zip(&g_w).map(|(w, g)| w * g).sum();
        for ((gl, &w), &gw) in logit_grad[0].iter_mut().zip(&weights).zip(&g_w) {
            *gl += w * (gw - mean);
        }
        Ok(loss)
    }
}
