use rand::Rng;

use super::DENSE_HIDDEN;
use crate::error::{Error, Result};
use crate::nn::{
    affine_into, cross_entropy_with_grad, mean_rows, relu_in_place, Affine, Differentiable,
    Gradients, Matrix,
};

/// Two per-frame (kernel-size-1) 256-unit affine+ReLU layers, averaged over
/// time, then a classification affine.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub pw1: Affine,
    pub pw2: Affine,
    pub out: Affine,
}

/// Activations kept for the backward pass. Frames are flattened row-major.
pub(crate) struct DenseTrace {
    pub frames: usize,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl DenseHead {
    pub fn new(pw1: Affine, pw2: Affine, out: Affine) -> Result<Self> {
        let ok = pw1.out_dim() == DENSE_HIDDEN
            && pw2.in_dim() == DENSE_HIDDEN
            && pw2.out_dim() == DENSE_HIDDEN
            && out.in_dim() == DENSE_HIDDEN;
        if !ok {
            return Err(Error::Shape(format!(
                "dense head pointwise widths must be {DENSE_HIDDEN}"
            )));
        }
        Ok(Self { pw1, pw2, out })
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let pw1 = Affine::glorot(DENSE_HIDDEN, input_dim, rng);
        let pw2 = Affine::glorot(DENSE_HIDDEN, DENSE_HIDDEN, rng);
        let out = Affine::glorot(num_classes, DENSE_HIDDEN, rng);
        Self { pw1, pw2, out }
    }

    pub fn input_dim(&self) -> usize {
        self.pw1.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.out.out_dim()
    }

    pub(crate) const TENSORS: usize = 6;

    pub(crate) fn tensor_refs(&self) -> [&[f32]; 6] {
        [
            self.pw1.weight.as_slice(),
            &self.pw1.bias,
            self.pw2.weight.as_slice(),
            &self.pw2.bias,
            self.out.weight.as_slice(),
            &self.out.bias,
        ]
    }

    pub(crate) fn tensor_muts(&mut self) -> [&mut [f32]; 6] {
        [
            self.pw1.weight.as_mut_slice(),
            &mut self.pw1.bias,
            self.pw2.weight.as_mut_slice(),
            &mut self.pw2.bias,
            self.out.weight.as_mut_slice(),
            &mut self.out.bias,
        ]
    }

    /// Forward over `frames` rows of `input_dim()` values each.
    pub(crate) fn forward_frames(
        &self,
        x: &[f64],
        frames: usize,
        mut pattern: Option<&mut Vec<bool>>,
    ) -> Result<DenseTrace> {
        let d = self.input_dim();
        if frames == 0 {
            return Err(Error::EmptySequence);
        }
        if x.len() != frames * d {
            return Err(Error::Shape(format!(
                "dense head expects {frames}x{d} inputs, got {} values",
                x.len()
            )));
        }
        let mut h1 = vec![0.0; frames * DENSE_HIDDEN];
        let mut h2 = vec![0.0; frames * DENSE_HIDDEN];
        for t in 0..frames {
            let a1 = &mut h1[t * DENSE_HIDDEN..(t + 1) * DENSE_HIDDEN];
            affine_into(&x[t * d..(t + 1) * d], &self.pw1, a1);
            if let Some(p) = pattern.as_deref_mut() {
                p.extend(a1.iter().map(|&z| z > 0.0));
            }
            relu_in_place(a1);
            let a2 = &mut h2[t * DENSE_HIDDEN..(t + 1) * DENSE_HIDDEN];
            affine_into(&h1[t * DENSE_HIDDEN..(t + 1) * DENSE_HIDDEN], &self.pw2, a2);
            if let Some(p) = pattern.as_deref_mut() {
                p.extend(a2.iter().map(|&z| z > 0.0));
            }
            relu_in_place(a2);
        }
        let pooled = mean_rows(&h2, frames, DENSE_HIDDEN);
        let mut logits = vec![0.0; self.num_classes()];
        affine_into(&pooled, &self.out, &mut logits);
        Ok(DenseTrace {
            frames,
            h1,
            h2,
            pooled,
            logits,
        })
    }

    /// Accumulates parameter gradients for logit gradient `g` (already
    /// scaled) into `grads[0..6]`. With `input_grad`, also returns
    /// `∂/∂x` for every input value.
    pub(crate) fn backward_frames(
        &self,
        x: &[f64],
        trace: &DenseTrace,
        g: &[f64],
        grads: &mut [&mut [f64]],
        input_grad: bool,
    ) -> Option<Vec<f64>> {
        let d = self.input_dim();
        let n = DENSE_HIDDEN;
        let [gw1, gb1, gw2, gb2, gw3, gb3] = grads else {
            unreachable!("dense head always has six tensors");
        };

        let mut g_pooled = vec![0.0; n];
        for (o, &go) in g.iter().enumerate() {
            gb3[o] += go;
            let row = self.out.weight.row(o);
            let grow = &mut gw3[o * n..(o + 1) * n];
            for k in 0..n {
                grow[k] += go * trace.pooled[k];
                g_pooled[k] += go * row[k] as f64;
            }
        }
        let inv_t = 1.0 / trace.frames as f64;
        g_pooled.iter_mut().for_each(|v| *v *= inv_t);

        let mut gx = input_grad.then(|| vec![0.0; x.len()]);
        let mut g_z2 = vec![0.0; n];
        let mut g_h1 = vec![0.0; n];
        for t in 0..trace.frames {
            let h1 = &trace.h1[t * n..(t + 1) * n];
            let h2 = &trace.h2[t * n..(t + 1) * n];
            let xt = &x[t * d..(t + 1) * d];

            for k in 0..n {
                g_z2[k] = if h2[k] > 0.0 { g_pooled[k] } else { 0.0 };
            }
            g_h1.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..n {
                let gk = g_z2[k];
                if gk == 0.0 {
                    continue;
                }
                gb2[k] += gk;
                let wrow = self.pw2.weight.row(k);
                let grow = &mut gw2[k * n..(k + 1) * n];
                for j in 0..n {
                    grow[j] += gk * h1[j];
                    g_h1[j] += gk * wrow[j] as f64;
                }
            }
            for j in 0..n {
                if h1[j] <= 0.0 {
                    continue;
                }
                let gj = g_h1[j];
                gb1[j] += gj;
                let grow = &mut gw1[j * d..(j + 1) * d];
                for (gw, &xi) in grow.iter_mut().zip(xt) {
                    *gw += gj * xi;
                }
                if let Some(gx) = gx.as_mut() {
                    let wrow = self.pw1.weight.row(j);
                    for (gxi, &w) in gx[t * d..(t + 1) * d].iter_mut().zip(wrow) {
                        *gxi += gj * w as f64;
                    }
                }
            }
        }
        gx
    }

    pub(crate) fn frames_to_f64(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "dense head expects {} features per frame, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(x.as_slice().iter().map(|&v| v as f64).collect())
    }
}

impl Differentiable for DenseHead {
    type Input = Matrix;

    fn tensors(&self) -> Vec<&[f32]> {
        self.tensor_refs().to_vec()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.tensor_muts().into_iter().collect()
    }

    fn forward(&self, x: &Matrix, pattern: Option<&mut Vec<bool>>) -> Result<Vec<f64>> {
        let xf = self.frames_to_f64(x)?;
        Ok(self.forward_frames(&xf, x.rows(), pattern)?.logits)
    }

    fn accumulate_gradient(
        &self,
        x: &Matrix,
        label: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let xf = self.frames_to_f64(x)?;
        let trace = self.forward_frames(&xf, x.rows(), None)?;
        let (loss, mut g) = cross_entropy_with_grad(&trace.logits, label)?;
        g.iter_mut().for_each(|v| *v *= scale);
        let mut views = grads.split_mut();
        self.backward_frames(&xf, &trace, &g, &mut views, false);
        Ok(loss)
    }
}
