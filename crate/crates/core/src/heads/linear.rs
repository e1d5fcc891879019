use rand::Rng;

use super::LINEAR_HIDDEN;
use crate::error::{Error, Result};
use crate::nn::{
    affine_into, cross_entropy_with_grad, relu_in_place, time_average, Affine, Differentiable,
    Gradients, Matrix,
};

/// Time-average → 128-unit affine → ReLU → class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub hidden: Affine,
    pub out: Affine,
}

impl LinearHead {
    pub fn new(hidden: Affine, out: Affine) -> Result<Self> {
        if hidden.out_dim() != LINEAR_HIDDEN || out.in_dim() != LINEAR_HIDDEN {
            return Err(Error::Shape(format!(
                "linear head hidden width must be {LINEAR_HIDDEN}"
            )));
        }
        Ok(Self { hidden, out })
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let hidden = Affine::glorot(LINEAR_HIDDEN, input_dim, rng);
        let out = Affine::glorot(num_classes, LINEAR_HIDDEN, rng);
        Self { hidden, out }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.out.out_dim()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "linear head expects {} features per frame, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Returns (time-averaged input, post-ReLU hidden, logits).
    fn trace(
        &self,
        x: &Matrix,
        pattern: Option<&mut Vec<bool>>,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check(x)?;
        let avg = time_average(x)?;
        let mut h = vec![0.0; LINEAR_HIDDEN];
        affine_into(&avg, &self.hidden, &mut h);
        if let Some(p) = pattern {
            p.extend(h.iter().map(|&z| z > 0.0));
        }
        relu_in_place(&mut h);
        let mut logits = vec![0.0; self.num_classes()];
        affine_into(&h, &self.out, &mut logits);
        Ok((avg, h, logits))
    }
}

impl Differentiable for LinearHead {
    type Input = Matrix;

    fn tensors(&self) -> Vec<&[f32]> {
        vec![
            self.hidden.weight.as_slice(),
            &self.hidden.bias,
            self.out.weight.as_slice(),
            &self.out.bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        vec![
            self.hidden.weight.as_mut_slice(),
            &mut self.hidden.bias,
            self.out.weight.as_mut_slice(),
            &mut self.out.bias,
        ]
    }

    fn forward(&self, x: &Matrix, pattern: Option<&mut Vec<bool>>) -> Result<Vec<f64>> {
        Ok(self.trace(x, pattern)?.2)
    }

    fn accumulate_gradient(
        &self,
        x: &Matrix,
        label: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let (avg, h, logits) = self.trace(x, None)?;
        let (loss, mut g) = cross_entropy_with_grad(&logits, label)?;
        g.iter_mut().for_each(|v| *v *= scale);
        let d = self.input_dim();
        let [gw1, gb1, gw2, gb2] = &mut grads.split_mut()[..] else {
            return Err(Error::Shape("linear head gradients need 4 tensors".into()));
        };

        let mut gh = vec![0.0; LINEAR_HIDDEN];
        for (o, &go) in g.iter().enumerate() {
            gb2[o] += go;
            let row = self.out.weight.row(o);
            let grow = &mut gw2[o * LINEAR_HIDDEN..(o + 1) * LINEAR_HIDDEN];
            for k in 0..LINEAR_HIDDEN {
                grow[k] += go * h[k];
                gh[k] += go * row[k] as f64;
            }
        }
        for k in 0..LINEAR_HIDDEN {
            if h[k] <= 0.0 {
                continue;
            }
            gb1[k] += gh[k];
            let grow = &mut gw1[k * d..(k + 1) * d];
            for (gw, &a) in grow.iter_mut().zip(&avg) {
                *gw += gh[k] * a;
            }
        }
        Ok(loss)
    }
}
