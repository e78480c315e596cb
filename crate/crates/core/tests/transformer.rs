use abpsynth::linalg::Matrix;
use abpsynth::nn::train::batch_gradient;
use abpsynth::nn::{
    build_model, count_params, load_weights, loss, positional_encoding, save_weights, scaled_dot_attention,
    table1_mismatches, train, transformer_grad_check, LossKind, MultiHeadAttention, Parameters, Sample,
    TrainConfig, TransformerConfig, TABLE1_GOLDENS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reduced() -> TransformerConfig {
    TransformerConfig {
        seq_len: 8,
        d_model: 8,
        num_heads: 2,
        key_dim: 4,
        ff_dim: 8,
        num_blocks: 1,
        dropout: 0.0,
        ..Default::default()
    }
}

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, uniform(rows * cols, rng)).unwrap()
}

#[test]
fn default_model_matches_table1() {
    let model = build_model(TransformerConfig::default(), 0).unwrap();
    let counts = count_params(&model);
    assert!(table1_mismatches(&counts).is_empty());
    let total = counts.iter().find(|c| c.layer == "total").unwrap().params;
    assert_eq!(total, 520_513);
    assert_eq!(model.param_count(), 520_513);
    assert_eq!(TABLE1_GOLDENS.len(), counts.len());
}

#[test]
fn narrower_model_is_flagged() {
    let cfg = TransformerConfig {
        d_model: 32,
        ..Default::default()
    };
    let counts = count_params(&build_model(cfg, 0).unwrap());
    assert!(!table1_mismatches(&counts).is_empty());
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(4, 6).unwrap();
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!((pe[(1, 0)] - 1f64.sin()).abs() < 1e-15);
    assert!((pe[(1, 1)] - 1f64.cos()).abs() < 1e-15);
    let angle = 3.0 / 10000f64.powf(2.0 / 6.0);
    assert!((pe[(3, 2)] - angle.sin()).abs() < 1e-15);
    assert!((pe[(3, 3)] - angle.cos()).abs() < 1e-15);
    assert!(positional_encoding(4, 5).is_err());
}

#[test]
fn attention_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (q, k, v) = (
        random_matrix(5, 3, &mut rng),
        random_matrix(7, 3, &mut rng),
        random_matrix(7, 2, &mut rng),
    );
    let (out, w) = scaled_dot_attention(&q, &k, &v).unwrap();
    for i in 0..5 {
        let scores: Vec<f64> = (0..7)
            .map(|j| (0..3).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() / 3f64.sqrt())
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..7 {
            assert!((w[(i, j)] - exps[j] / z).abs() < 1e-12);
        }
        for c in 0..2 {
            let expected: f64 = (0..7).map(|j| exps[j] / z * v[(j, c)]).sum();
            assert!((out[(i, c)] - expected).abs() < 1e-12);
        }
    }
    assert!(scaled_dot_attention(&q, &v, &v).is_err());
}

#[test]
fn single_head_with_identity_projections_is_plain_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mha = MultiHeadAttention::new(4, 1, 4, &mut rng);
    for dense in [&mut mha.query, &mut mha.key, &mut mha.value, &mut mha.output] {
        dense.w = Matrix::identity(4);
        dense.b = Matrix::zeros(1, 4);
    }
    let xq = random_matrix(3, 4, &mut rng);
    let xkv = random_matrix(6, 4, &mut rng);
    let (out, _) = mha.forward(&xq, &xkv).unwrap();
    let (expected, _) = scaled_dot_attention(&xq, &xkv, &xkv).unwrap();
    assert!(out.sub(&expected).frobenius_norm() < 1e-12);
}

#[test]
fn reduced_model_passes_gradient_check() {
    for seed in 0..3 {
        let model = build_model(reduced(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = uniform(8, &mut rng);
        // a target just off the prediction keeps every gradient well above finite-difference noise
        let target: Vec<f64> = model
            .forward(&x)
            .unwrap()
            .iter()
            .map(|p| p + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let report = transformer_grad_check(&model, &x, &target, LossKind::Mse, 1e-5).unwrap();
        assert_eq!(report.checked, model.param_count());
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let input = uniform(8, &mut rng);
            let target = input.iter().rev().map(|v| 0.5 * v).collect();
            Sample { input, target }
        })
        .collect()
}

#[test]
fn perfect_prediction_has_zero_gradient() {
    let model = build_model(reduced(), 4).unwrap();
    let x = samples(1, 5).remove(0).input;
    let s = Sample {
        target: model.forward(&x).unwrap(),
        input: x,
    };
    let (l, grad) = batch_gradient(&model, &[&s], LossKind::Mse, None).unwrap();
    assert_eq!(l, 0.0);
    assert!(grad.named_params().iter().all(|(_, m)| m.frobenius_norm() == 0.0));
}

#[test]
fn batch_gradient_is_the_mean_of_example_gradients() {
    let model = build_model(reduced(), 6).unwrap();
    let data = samples(3, 7);
    let refs: Vec<&Sample> = data.iter().collect();
    let (l_all, g_all) = batch_gradient(&model, &refs, LossKind::Mse, None).unwrap();
    let mut l_sum = 0.0;
    let mut g_sum = model.zeros_like();
    for s in &data {
        let (l, g) = batch_gradient(&model, &[s], LossKind::Mse, None).unwrap();
        l_sum += l / 3.0;
        for (acc, (_, p)) in g_sum.params_mut().into_iter().zip(g.named_params()) {
            acc.add_scaled(p, 1.0 / 3.0);
        }
    }
    assert!((l_all - l_sum).abs() < 1e-12);
    for ((_, a), (_, b)) in g_all.named_params().iter().zip(g_sum.named_params()) {
        assert!(a.sub(b).frobenius_norm() < 1e-12);
    }
    // doubling the batch with itself leaves the mean gradient unchanged
    let doubled: Vec<&Sample> = data.iter().chain(&data).collect();
    let (l2, g2) = batch_gradient(&model, &doubled, LossKind::Mse, None).unwrap();
    assert!((l2 - l_all).abs() < 1e-12);
    for ((_, a), (_, b)) in g2.named_params().iter().zip(g_all.named_params()) {
        assert!(a.sub(b).frobenius_norm() < 1e-12);
    }
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let mut model = build_model(reduced(), 8).unwrap();
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 0.0,
        ..Default::default()
    };
    train(&mut model, &samples(8, 9), &[], &cfg).unwrap();
    assert_eq!(model, before);
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let data = samples(16, 10);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: 3,
        ..Default::default()
    };
    let dropout = TransformerConfig {
        dropout: 0.1,
        ..reduced()
    };
    let run = || {
        let mut m = build_model(dropout, 11).unwrap();
        let h = train(&mut m, &data, &data[..4], &cfg).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(m1, m2);
    assert_eq!(h1, h2);
    assert_eq!(h1.step_loss.len(), 80);
    assert!(h1.epoch_train_loss.last().unwrap() < &h1.epoch_train_loss[0]);
    assert_eq!(h1.epoch_val_loss.len(), 40);
}

#[test]
fn weights_round_trip_through_f32_files() {
    let model = build_model(reduced(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&model, &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    assert_eq!(loaded.config, model.config);
    for ((na, a), (nb, b)) in loaded.named_params().iter().zip(model.named_params()) {
        assert_eq!(na, &nb);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    let again = dir.path().join("again.bin");
    save_weights(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    let x = samples(1, 13).remove(0);
    let l = loss(&loaded.forward(&x.input).unwrap(), &model.forward(&x.input).unwrap(), LossKind::Mae).unwrap();
    assert!(l < 1e-5);
}

#[test]
fn truncated_weights_are_rejected() {
    let model = build_model(reduced(), 14).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_weights(&path).is_err());
}
