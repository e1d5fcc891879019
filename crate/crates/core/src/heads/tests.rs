use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{softmax, Affine};

// Plain nested-Vec reference implementation in f64.
fn ref_affine(x: &[f64], a: &Affine) -> Vec<f64> {
    (0..a.out_dim())
        .map(|o| {
            let mut s = a.bias[o] as f64;
            for (i, xi) in x.iter().enumerate().take(a.in_dim()) {
                s += a.weight.get(o, i) as f64 * xi;
            }
            s
        })
        .collect()
}

fn ref_relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter()
        .map(|z| if z > 0.0 { z } else { 0.0 })
        .collect()
}

fn ref_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

fn frames64(x: &Matrix) -> Vec<Vec<f64>> {
    x.iter_rows()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

fn ref_linear(h: &LinearHead, x: &Matrix) -> Vec<f64> {
    let avg = ref_mean(&frames64(x));
    ref_affine(&ref_relu(ref_affine(&avg, &h.hidden)), &h.out)
}

fn ref_dense_frames(h: &DenseHead, frames: &[Vec<f64>]) -> Vec<f64> {
    let hs: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| ref_relu(ref_affine(&ref_relu(ref_affine(f, &h.pw1)), &h.pw2)))
        .collect();
    ref_affine(&ref_mean(&hs), &h.out)
}

fn ref_aggregate(h: &AggregationHead, stack: &[Matrix]) -> Vec<f64> {
    let logits: Vec<f64> = h.layer_logits.iter().map(|&v| v as f64).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|v| v / z).collect();
    let t = stack[0].rows();
    let d = stack[0].cols();
    let fused: Vec<Vec<f64>> = (0..t)
        .map(|ti| {
            (0..d)
                .map(|di| {
                    (0..stack.len())
                        .map(|l| w[l] * stack[l].get(ti, di) as f64)
                        .sum()
                })
                .collect()
        })
        .collect();
    ref_dense_frames(&h.dense, &fused)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-2.0f32..2.0))
            .collect(),
    )
    .unwrap()
}

fn perturb(tensors: Vec<&mut [f32]>, rng: &mut ChaCha8Rng) {
    for t in tensors {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3f32..0.3);
        }
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn spec(kind: HeadKind, d: usize, c: usize, layers: Option<usize>) -> HeadSpec {
    HeadSpec {
        kind,
        input_dim: d,
        num_classes: c,
        layer_count: layers,
    }
}

#[test]
fn zero_linear_head_gives_zero_logits() {
    let h = LinearHead {
        hidden: Affine::zeros(LINEAR_HIDDEN, 5),
        out: Affine::zeros(3, LINEAR_HIDDEN),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 4, 5);
    let logits = h.logits(&x).unwrap();
    assert_eq!(logits, vec![0.0; 3]);
    assert_eq!(softmax(&logits), vec![1.0 / 3.0; 3]);
}

#[test]
fn zero_dense_head_returns_output_bias() {
    let mut h = match init_head(&spec(HeadKind::Dense, 6, 4, None), 0).unwrap() {
        Head::Dense(h) => h,
        _ => unreachable!(),
    };
    for t in h.tensors_mut() {
        t.fill(0.0);
    }
    h.out.bias = vec![0.5, -1.25, 2.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in 1..4 {
        let x = random_matrix(&mut rng, t, 6);
        assert_eq!(h.logits(&x).unwrap(), vec![0.5, -1.25, 2.0, 0.0]);
    }
}

#[test]
fn single_frame_linear_equals_per_frame_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = LinearHead::init(4, 3, &mut rng);
    let x = random_matrix(&mut rng, 1, 4);
    let frame: Vec<f64> = x.row(0).iter().map(|&v| v as f64).collect();
    let want = ref_affine(&ref_relu(ref_affine(&frame, &h.hidden)), &h.out);
    assert_close(&h.logits(&x).unwrap(), &want, 1e-12);
}

#[test]
fn single_frame_dense_equals_per_frame_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = DenseHead::init(4, 3, &mut rng);
    let x = random_matrix(&mut rng, 1, 4);
    let frame: Vec<f64> = x.row(0).iter().map(|&v| v as f64).collect();
    let h2 = ref_relu(ref_affine(&ref_relu(ref_affine(&frame, &h.pw1)), &h.pw2));
    assert_close(&h.logits(&x).unwrap(), &ref_affine(&h2, &h.out), 1e-12);
}

#[test]
fn linear_matches_reference_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut h = LinearHead::init(8, 5, &mut rng);
        perturb(h.tensors_mut(), &mut rng);
        let x = random_matrix(&mut rng, 6, 8);
        assert_close(&h.logits(&x).unwrap(), &ref_linear(&h, &x), 1e-5);
    }
}

#[test]
fn dense_matches_reference_on_4x8_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let mut h = DenseHead::init(8, 4, &mut rng);
        perturb(h.tensors_mut(), &mut rng);
        let x = random_matrix(&mut rng, 4, 8);
        assert_close(
            &h.logits(&x).unwrap(),
            &ref_dense_frames(&h, &frames64(&x)),
            1e-5,
        );
    }
}

#[test]
fn aggregate_matches_reference_on_3x2x4_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let mut h = AggregationHead::init(3, 4, 3, &mut rng);
        perturb(h.tensors_mut(), &mut rng);
        let stack: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 2, 4)).collect();
        assert_close(&h.logits(&stack).unwrap(), &ref_aggregate(&h, &stack), 1e-5);
    }
}

#[test]
fn one_hot_layer_logit_collapses_to_that_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut h = AggregationHead::init(4, 5, 3, &mut rng);
    let stack: Vec<Matrix> = (0..4).map(|_| random_matrix(&mut rng, 3, 5)).collect();
    for k in 0..4 {
        h.layer_logits = vec![0.0; 4];
        h.layer_logits[k] = 1e4;
        let agg = h.logits(&stack).unwrap();
        let direct = h.dense.logits(&stack[k]).unwrap();
        assert_close(&agg, &direct, 1e-4);
    }
}

#[test]
fn equal_layer_logits_average_two_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut h = AggregationHead::init(2, 3, 2, &mut rng);
    h.layer_logits = vec![0.7, 0.7];
    let stack = vec![random_matrix(&mut rng, 2, 3), random_matrix(&mut rng, 2, 3)];
    let mean: Vec<Vec<f64>> = (0..2)
        .map(|t| {
            (0..3)
                .map(|d| 0.5 * (stack[0].get(t, d) as f64 + stack[1].get(t, d) as f64))
                .collect()
        })
        .collect();
    assert_close(
        &h.logits(&stack).unwrap(),
        &ref_dense_frames(&h.dense, &mean),
        1e-12,
    );
}

#[test]
fn linear_parameter_count_for_768_by_7() {
    let head = init_head(&spec(HeadKind::Linear, 768, 7, None), 0).unwrap();
    assert_eq!(head.param_count(), 768 * 128 + 128 + 128 * 7 + 7);
    assert_eq!(head.param_count(), 99_335);
}

#[test]
fn init_is_deterministic_per_seed() {
    for kind in [HeadKind::Linear, HeadKind::Dense, HeadKind::Aggregate] {
        let s = spec(kind, 10, 4, Some(5));
        assert_eq!(init_head(&s, 42).unwrap(), init_head(&s, 42).unwrap());
        assert_ne!(init_head(&s, 42).unwrap(), init_head(&s, 43).unwrap());
    }
}

#[test]
fn aggregation_starts_with_uniform_weights() {
    let head = init_head(&spec(HeadKind::Aggregate, 8, 4, Some(13)), 0).unwrap();
    for w in head.layer_weights().unwrap() {
        assert!((w - 1.0 / 13.0).abs() < 1e-15);
    }
}

#[test]
fn aggregate_dense_part_matches_dense_init() {
    let agg = init_head(&spec(HeadKind::Aggregate, 8, 4, Some(3)), 11).unwrap();
    let dense = init_head(&spec(HeadKind::Dense, 8, 4, None), 11).unwrap();
    match (agg, dense) {
        (Head::Aggregate(a), Head::Dense(d)) => assert_eq!(a.dense, d),
        _ => unreachable!(),
    }
}

#[test]
fn glorot_bounds_and_zero_biases() {
    let head = match init_head(&spec(HeadKind::Linear, 30, 5, None), 3).unwrap() {
        Head::Linear(h) => h,
        _ => unreachable!(),
    };
    let lim = (6.0f64 / (30.0 + 128.0)).sqrt() as f32;
    assert!(head.hidden.weight.as_slice().iter().all(|w| w.abs() <= lim));
    assert!(head.hidden.bias.iter().all(|&b| b == 0.0));
    assert!(head.out.bias.iter().all(|&b| b == 0.0));
}

#[test]
fn shape_mismatches_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let lin = LinearHead::init(4, 2, &mut rng);
    assert!(matches!(
        lin.logits(&random_matrix(&mut rng, 2, 5)),
        Err(Error::Shape(_))
    ));
    let dense = DenseHead::init(4, 2, &mut rng);
    assert!(matches!(
        dense.logits(&random_matrix(&mut rng, 2, 3)),
        Err(Error::Shape(_))
    ));
    let agg = AggregationHead::init(3, 4, 2, &mut rng);
    let two: Vec<Matrix> = (0..2).map(|_| random_matrix(&mut rng, 2, 4)).collect();
    assert!(matches!(agg.logits(&two), Err(Error::Shape(_))));
    let ragged = vec![
        random_matrix(&mut rng, 2, 4),
        random_matrix(&mut rng, 3, 4),
        random_matrix(&mut rng, 2, 4),
    ];
    assert!(matches!(agg.logits(&ragged), Err(Error::Shape(_))));
    assert!(matches!(
        lin.logits(&Matrix::zeros(0, 4)),
        Err(Error::EmptySequence)
    ));
    assert!(matches!(
        dense.logits(&Matrix::zeros(0, 4)),
        Err(Error::EmptySequence)
    ));

    let head = Head::Linear(lin);
    assert!(head.logits(&FeatureView::Stack(two)).is_err());
    assert!(init_head(&spec(HeadKind::Aggregate, 4, 2, None), 0).is_err());
    assert!(init_head(&spec(HeadKind::Dense, 0, 2, None), 0).is_err());
}

#[test]
fn head_kind_parses_and_prints() {
    for kind in [HeadKind::Linear, HeadKind::Dense, HeadKind::Aggregate] {
        assert_eq!(kind.to_string().parse::<HeadKind>().unwrap(), kind);
        assert_eq!(HeadKind::from_code(kind.code()), Some(kind));
    }
    assert!("conv".parse::<HeadKind>().is_err());
}

#[test]
fn checkpoint_round_trips_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    for (i, kind) in [HeadKind::Linear, HeadKind::Dense, HeadKind::Aggregate]
        .into_iter()
        .enumerate()
    {
        let mut head = init_head(&spec(kind, 7, 3, Some(4)), i as u64).unwrap();
        if let Head::Aggregate(h) = &mut head {
            h.layer_logits = vec![0.5, -1.0, 2.0, 0.25];
        }
        let path = dir.path().join(format!("{kind}.head"));
        write_checkpoint(&head, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"HEAD");
        assert_eq!(bytes[8], kind.code());
        assert_eq!(bytes.len(), 21 + 4 * head.param_count());
        assert_eq!(read_checkpoint(&path).unwrap(), head);
    }
}

#[test]
fn checkpoint_rejects_damage() {
    let head = init_head(&spec(HeadKind::Linear, 3, 2, None), 0).unwrap();
    let bytes = checkpoint::encode_checkpoint(&head);
    assert!(checkpoint::decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    assert!(checkpoint::decode_checkpoint(&bytes[..10]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode_checkpoint(&bad).is_err());
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        checkpoint::decode_checkpoint(&bad),
        Err(Error::UnsupportedVersion(9))
    ));
    let mut bad = bytes;
    bad[8] = 7;
    assert!(checkpoint::decode_checkpoint(&bad).is_err());
}

#[test]
fn gradient_suite_passes_on_a_few_instances() {
    let cfg = gradcheck::SuiteConfig {
        instances: 6,
        coords_per_tensor: 8,
        ..Default::default()
    };
    let report = gradcheck::run_suite(&cfg).unwrap();
    assert!(
        report.passed(1e-3),
        "max rel error {}",
        report.max_rel_error
    );
}

#[test]
fn gradient_suite_flags_planted_bug() {
    let cfg = gradcheck::SuiteConfig {
        instances: 3,
        coords_per_tensor: 4,
        plant_bug: Some(2.0),
        ..Default::default()
    };
    let report = gradcheck::run_suite(&cfg).unwrap();
    assert!(report.max_rel_error > 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn time_permutation_leaves_logits_unchanged(seed in any::<u64>(), t in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, t, 5);
        let mut order: Vec<usize> = (0..t).collect();
        order.reverse();
        order.rotate_left(rng.random_range(0..t));
        let rows: Vec<&[f32]> = order.iter().map(|&i| x.row(i)).collect();
        let shuffled = Matrix::from_rows(&rows).unwrap();

        let lin = LinearHead::init(5, 3, &mut rng);
        assert_close(&lin.logits(&x).unwrap(), &lin.logits(&shuffled).unwrap(), 1e-9);
        let dense = DenseHead::init(5, 3, &mut rng);
        assert_close(&dense.logits(&x).unwrap(), &dense.logits(&shuffled).unwrap(), 1e-9);
    }

    #[test]
    fn layer_weights_form_a_distribution(logits in prop::collection::vec(-20.0f32..20.0, 1..14)) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = AggregationHead::init(logits.len(), 2, 2, &mut rng);
        h.layer_logits = logits;
        let w = h.layer_weights();
        prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
