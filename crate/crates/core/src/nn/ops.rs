//! Forward primitives. Parameters are stored as `f32`; activations and
//! all accumulation run in `f64`.

use super::matrix::{Affine, Matrix};
use crate::error::{Error, Result};

/// Mean over the time axis of a `[T][D]` sequence.
pub fn time_average(seq: &Matrix) -> Result<Vec<f64>> {
    if seq.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let mut acc = vec![0.0f64; seq.cols()];
    for row in seq.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / seq.rows() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Same as [`time_average`] over `frames` rows of width `dim` held in `f64`.
pub(crate) fn mean_rows(data: &[f64], frames: usize, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; dim];
    for row in data.chunks_exact(dim).take(frames) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = 1.0 / frames as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

pub fn affine_forward(x: &[f64], p: &Affine) -> Result<Vec<f64>> {
    if x.len() != p.in_dim() {
        return Err(Error::Shape(format!(
            "affine expects input of width {}, got {}",
            p.in_dim(),
            x.len()
        )));
    }
    let mut out = vec![0.0; p.out_dim()];
    affine_into(x, p, &mut out);
    Ok(out)
}

/// Unchecked kernel: `out = W·x + b`. Caller guarantees shapes.
pub(crate) fn affine_into(x: &[f64], p: &Affine, out: &mut [f64]) {
    for (o, (row, &b)) in out.iter_mut().zip(p.weight.iter_rows().zip(p.bias.iter())) {
        let mut s = b as f64;
        for (&w, &xi) in row.iter().zip(x) {
            s += w as f64 * xi;
        }
        *o = s;
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Loss and `∂loss/∂logits = softmax(logits) − onehot(label)`.
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let loss = cross_entropy_loss(logits, label)?;
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn time_average_cases() {
        let m = Matrix::from_rows(&[[1.0f32, 3.0], [3.0, 5.0]]).unwrap();
        assert_eq!(time_average(&m).unwrap(), vec![2.0, 4.0]);
        let single = Matrix::from_rows(&[[0.25f32, -7.5, 3.0]]).unwrap();
        assert_eq!(time_average(&single).unwrap(), vec![0.25, -7.5, 3.0]);
        assert!(matches!(
            time_average(&Matrix::zeros(0, 3)),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn time_average_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..15).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let m = Matrix::new(5, 3, data.clone()).unwrap();
        let got = time_average(&m).unwrap();
        for d in 0..3 {
            let mut s = 0.0f64;
            for t in 0..5 {
                s += data[t * 3 + d] as f64;
            }
            assert!((got[d] - s / 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_cases() {
        let id = Affine::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(affine_forward(&[3.0, 7.0], &id).unwrap(), vec![3.0, 7.0]);
        let zero_w = Affine::new(Matrix::zeros(2, 5), vec![1.0, 2.0]).unwrap();
        assert_eq!(
            affine_forward(&[9.0, -1.0, 4.0, 0.5, 2.0], &zero_w).unwrap(),
            vec![1.0, 2.0]
        );
        assert!(affine_forward(&[1.0], &id).is_err());
    }

    #[test]
    fn affine_matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f32> = (0..12).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let b: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = Affine::new(Matrix::new(4, 3, w.clone()).unwrap(), b.clone()).unwrap();
        let got = affine_forward(&x, &p).unwrap();
        let want: Vec<f64> = (0..4)
            .map(|o| b[o] as f64 + (0..3).map(|i| w[o * 3 + i] as f64 * x[i]).sum::<f64>())
            .collect();
        assert!(close(&got, &want, 1e-6));
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-3.0, -0.1]), vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-4.0..4.0)).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        for ((p, n), v) in relu(&x).iter().zip(relu(&neg)).zip(&x) {
            assert_eq!(p + n, v.abs());
        }
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&[0.3; 13]);
        assert!(s.iter().all(|&p| (p - 1.0 / 13.0).abs() < 1e-12));
        let big = softmax(&[1000.0, 0.0]);
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] < 1e-300 && big[1] >= 0.0);
        let logits = [0.5, -1.25, 2.0, 0.0];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let want: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        assert!(close(&softmax(&logits), &want, 1e-6));
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = cross_entropy_loss(&[0.7; 4], 2).unwrap();
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&[0.0, 80.0, 0.0], 1).unwrap() < 1e-30);
        assert!(matches!(
            cross_entropy_loss(&[0.0, 1.0], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
        let logits: [f64; 3] = [0.2, -0.4, 1.1];
        let want: f64 = -(logits[1].exp() / logits.iter().map(|l: &f64| l.exp()).sum::<f64>()).ln();
        assert!((cross_entropy_loss(&logits, 1).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn argmax_prefers_lowest_on_tie() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_shift_invariant_probability(
                logits in prop::collection::vec(-50.0f64..50.0, 1..12),
                shift in -100.0f64..100.0,
            ) {
                let p = softmax(&logits);
                prop_assert!(p.iter().all(|&v| v >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
                let q = softmax(&shifted);
                prop_assert_eq!(argmax(&p), argmax(&q));
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }

            #[test]
            fn cross_entropy_nonnegative(
                logits in prop::collection::vec(-1e3f64..1e3, 1..10),
                pick in 0usize..10,
            ) {
                let label = pick % logits.len();
                prop_assert!(cross_entropy_loss(&logits, label).unwrap() >= 0.0);
            }
        }
    }
}
