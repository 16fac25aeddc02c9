use std::collections::HashMap;

use super::*;
use crate::gradcheck::{grad_check, random_tensor};
use crate::model::ModelConfig;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

fn probs_tensor(rows: &[[f64; 2]]) -> Tensor<f64> {
    Tensor::new(
        vec![rows.len(), 2],
        rows.iter().flatten().copied().collect(),
    )
    .unwrap()
}

#[test]
fn rmse_examples() {
    let tape = Tape::new();
    let exact = tape.constant(probs_tensor(&[[1.0, 0.0], [0.0, 1.0]]));
    assert_eq!(
        rmse_loss(exact, &[0, 1]).unwrap().value().item().unwrap(),
        0.0
    );
    let half = tape.constant(probs_tensor(&[[0.5, 0.5]]));
    assert!((rmse_loss(half, &[0]).unwrap().value().item().unwrap() - 0.5).abs() < 1e-15);
    let p = probs_tensor(&[[0.2, 0.8], [0.7, 0.3]]);
    let swapped = probs_tensor(&[[0.8, 0.2], [0.3, 0.7]]);
    let a = rmse_loss(tape.constant(p), &[0, 0])
        .unwrap()
        .value()
        .item()
        .unwrap();
    let b = rmse_loss(tape.constant(swapped), &[1, 1])
        .unwrap()
        .value()
        .item()
        .unwrap();
    assert_eq!(a, b);
    assert!(rmse_loss(tape.constant(probs_tensor(&[[0.5, 0.5]])), &[0, 1]).is_err());
    assert!(rmse_loss(tape.constant(probs_tensor(&[[0.5, 0.5]])), &[2]).is_err());
}

#[test]
fn rmse_of_softmax_lies_in_unit_interval() {
    for seed in 0..50 {
        let tape = Tape::new();
        let logits = tape.constant(random_tensor(&[5, 2], 30.0, seed));
        let labels: Vec<usize> = (0..5).map(|i| (i + seed as usize) % 2).collect();
        let l = rmse_loss(logits.softmax(1).unwrap(), &labels)
            .unwrap()
            .value()
            .item()
            .unwrap();
        assert!((0.0..=1.0).contains(&l));
    }
}

#[test]
fn cross_entropy_example() {
    let tape = Tape::new();
    let p = tape.constant(probs_tensor(&[[0.25, 0.75], [0.5, 0.5]]));
    let l = cross_entropy_loss(p, &[1, 0])
        .unwrap()
        .value()
        .item()
        .unwrap();
    assert!((l - (-(0.75f64.ln() + 0.5f64.ln()) / 2.0)).abs() < 1e-15);
}

#[test]
fn losses_have_correct_gradients() {
    let x = random_tensor(&[4, 3], 2.0, 5);
    for kind in [LossKind::Rmse, LossKind::CrossEntropy] {
        let err = grad_check(|_, v| kind.apply(v.softmax(1)?, &[0, 2, 1, 1]), &x, 1e-6).unwrap();
        assert!(err < 1e-6, "{kind:?}: {err}");
    }
}

fn single_param_store(value: &[f64]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add_param("w", Tensor::new(vec![value.len()], value.to_vec()).unwrap())
        .unwrap();
    s
}

fn grads(g: &[f64]) -> HashMap<String, Tensor<f64>> {
    HashMap::from([(
        "w".to_string(),
        Tensor::new(vec![g.len()], g.to_vec()).unwrap(),
    )])
}

#[test]
fn adamw_zero_gradient_cases() {
    let cfg = AdamWConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut store = single_param_store(&[1.5, -2.0]);
    let mut opt = AdamW::new();
    opt.step(&mut store, &grads(&[0.0, 0.0]), 2e-3, &cfg)
        .unwrap();
    assert_eq!(store.param("w").unwrap().data(), &[1.5, -2.0]);

    let cfg = AdamWConfig {
        weight_decay: 0.05,
        ..cfg
    };
    opt.step(&mut store, &grads(&[0.0, 0.0]), 2e-3, &cfg)
        .unwrap();
    let w = store.param("w").unwrap().data();
    assert!((w[0] - 1.5 * (1.0 - 1e-4)).abs() < 1e-15);
    assert!((w[1] + 2.0 * (1.0 - 1e-4)).abs() < 1e-15);
}

/// Scalar AdamW written out step by step.
fn scalar_trace(
    mut p: f64,
    g: impl Fn(usize, f64) -> f64,
    lr: f64,
    wd: f64,
    steps: usize,
) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v) = (0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let gt = g(t, p);
        p -= lr * wd * p;
        m = b1 * m + (1.0 - b1) * gt;
        v = b2 * v + (1.0 - b2) * gt * gt;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        p -= lr * mh / (vh.sqrt() + eps);
        out.push(p);
    }
    out
}

#[test]
fn adamw_matches_scalar_oracle() {
    for wd in [0.0, 0.05] {
        let cfg = AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        };
        // gradient of (p − 3)², plus a constant-gradient coordinate
        let oracle_a = scalar_trace(0.7, |_, p| 2.0 * (p - 3.0), 2e-3, wd, 10);
        let oracle_b = scalar_trace(-1.0, |_, _| 0.25, 2e-3, wd, 10);
        let mut store = single_param_store(&[0.7, -1.0]);
        let mut opt = AdamW::new();
        for t in 0..10 {
            let w = store.param("w").unwrap().data().to_vec();
            opt.step(&mut store, &grads(&[2.0 * (w[0] - 3.0), 0.25]), 2e-3, &cfg)
                .unwrap();
            let w = store.param("w").unwrap().data();
            assert!((w[0] - oracle_a[t]).abs() < 1e-12);
            assert!((w[1] - oracle_b[t]).abs() < 1e-12);
        }
        assert_eq!(opt.steps(), 10);
        // Constant gradients move by about lr per step once bias correction settles.
        assert!((oracle_b[9] - oracle_b[8] + 2e-3).abs() < 2e-4);
    }
}

#[test]
fn adamw_rejects_non_finite_gradients_without_changes() {
    let cfg = AdamWConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.05,
    };
    let mut store = single_param_store(&[1.0]);
    let mut opt = AdamW::new();
    let err = opt
        .step(&mut store, &grads(&[f64::NAN]), 1e-3, &cfg)
        .unwrap_err();
    assert_eq!(err.category(), "numeric");
    assert_eq!(store.param("w").unwrap().data(), &[1.0]);
    assert_eq!(opt.steps(), 0);
}

#[test]
fn cosine_schedule() {
    let hp = Hyperparams {
        epochs: 4,
        ..Hyperparams::default()
    };
    assert_eq!(hp.lr_at(0), 2e-3);
    assert!((hp.lr_at(2) - 1e-3).abs() < 1e-18);
    assert!(hp.lr_at(3) < hp.lr_at(2));
    let flat = Hyperparams {
        schedule: Schedule::Constant,
        ..hp
    };
    assert_eq!(flat.lr_at(3), 2e-3);
}

#[test]
fn warmup_ramps_per_batch() {
    let hp = Hyperparams {
        epochs: 4,
        warmup_epochs: 2.0,
        schedule: Schedule::Constant,
        ..Hyperparams::default()
    };
    assert!((hp.lr_at_step(0, 0, 4) - 2e-3 / 8.0).abs() < 1e-18);
    assert!((hp.lr_at_step(0, 3, 4) - 1e-3).abs() < 1e-18);
    assert_eq!(hp.lr_at_step(1, 3, 4), 2e-3);
    assert_eq!(hp.lr_at_step(3, 0, 4), 2e-3);
    let none = Hyperparams {
        warmup_epochs: 0.0,
        ..Hyperparams::default()
    };
    assert_eq!(none.lr_at_step(0, 0, 10), none.lr_at(0));
    let mut bad = Hyperparams::default();
    bad.set("warmup_epochs", "-1").unwrap();
    assert!(bad.validate().is_err());
}

#[test]
fn hyperparams_text_and_validation() {
    let mut hp = Hyperparams::default();
    for line in hp.to_text().lines() {
        let (k, v) = line.split_once(" = ").unwrap();
        hp.set(k, v).unwrap();
    }
    assert_eq!(hp, Hyperparams::default());
    assert!(hp.set("momentum", "0.9").is_err());
    assert!(hp.set("loss", "hinge").is_err());
    assert!(Hyperparams {
        beta1: 1.0,
        ..Hyperparams::default()
    }
    .validate()
    .is_err());
    assert!(Hyperparams {
        batch_fraction: 0.0,
        ..Hyperparams::default()
    }
    .validate()
    .is_err());
}

fn small_run(seed: u64, epochs: usize) -> (Model<f32>, TrainOutcome) {
    let ds = crate::data::synth_generate(6, 1);
    let (train_set, test_set) = ds.split(0.5, 2).unwrap();
    let mut model = Model::<f32>::build(&ModelConfig::tiny()).unwrap();
    let hp = Hyperparams {
        epochs,
        batch_fraction: 0.5,
        seed,
        ..Hyperparams::default()
    };
    let out = train(
        &mut model,
        &train_set,
        &test_set,
        &hp,
        TrainOptions::default(),
    )
    .unwrap();
    (model, out)
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let (model, out) = small_run(0, 0);
    let fresh = Model::<f32>::build(&ModelConfig::tiny()).unwrap();
    assert_eq!(model.params, fresh.params);
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn training_is_reproducible() {
    let (a, ha) = small_run(3, 2);
    let (b, hb) = small_run(3, 2);
    assert_eq!(a.params, b.params);
    let strip = |h: &[EpochRecord]| history_csv(h, false);
    assert_eq!(strip(&ha.history), strip(&hb.history));
    assert_eq!(ha.history.len(), 2);
    assert!(ha.best_epoch >= 1);
    let (c, _) = small_run(4, 2);
    assert_ne!(a.params, c.params);
}

#[test]
fn training_rejects_mismatched_data() {
    let ds = crate::data::synth_generate(2, 1);
    let rgb = ds.map_images(|_| Ok(Tensor::zeros(&[3, 64, 64]))).unwrap();
    let mut model = Model::<f32>::build(&ModelConfig::tiny()).unwrap();
    let err = train(
        &mut model,
        &rgb,
        &rgb,
        &Hyperparams::default(),
        TrainOptions::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("channels"));
    let mut three = ds.clone();
    three.class_names.push("van".into());
    assert!(evaluate(&model, &three, Exec::Sequential).is_err());
}

#[test]
fn history_and_confusion_files() {
    let rec = EpochRecord {
        epoch: 1,
        lr: 0.002,
        train_loss: 0.5,
        train_acc: 0.75,
        test_acc: 0.5,
        seconds: 1.25,
    };
    let csv = history_csv(std::slice::from_ref(&rec), false);
    assert_eq!(csv, "# dtnt history v1\nepoch,lr,train_loss,train_acc,test_acc,seconds\n1,0.002,0.5,0.75,0.5,NA\n");
    assert!(history_csv(&[rec], true).ends_with(",1.250\n"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("confusion.csv");
    let rows = vec![
        (
            "m".to_string(),
            "normal".to_string(),
            ConfusionMatrix {
                tp: 3,
                tn: 1,
                fp: 1,
                fn_: 1,
            },
        ),
        (
            "m".to_string(),
            "fog0.24".to_string(),
            ConfusionMatrix {
                tp: 0,
                tn: 2,
                fp: 0,
                fn_: 4,
            },
        ),
    ];
    write_confusion(&path, &rows).unwrap();
    assert_eq!(read_confusion(&path).unwrap(), rows);
    std::fs::write(&path, "tag,condition,tp\n").unwrap();
    assert!(read_confusion(&path).is_err());
}
