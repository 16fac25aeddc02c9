//! The rayon path must reproduce the sequential path bit for bit.

use dtnt_core::data::synth_generate;
use dtnt_core::kernels::{
    conv2d_backward, conv2d_forward, gemm_nn, gemm_nt, gemm_tn, ConvGeom, Exec,
};
use dtnt_core::model::{save_bytes, CheckpointMeta, Model, ModelConfig};
use dtnt_core::train::{history_csv, train, Hyperparams, TrainOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Runs `f` on a four-thread pool so the parallel split is exercised even
/// on a single-core machine.
fn with_threads<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    f()
}

#[test]
fn gemm_variants_agree() {
    let (m, k, n) = (97, 130, 211);
    let a = random(m * k, 1);
    let b = random(k * n, 2);
    let at = random(k * m, 3);
    let bt = random(n * k, 4);
    let run = |exec| {
        let mut nn = vec![0.0; m * n];
        let mut tn = vec![0.0; m * n];
        let mut nt = vec![0.0; m * n];
        gemm_nn(exec, m, k, n, &a, &b, &mut nn);
        gemm_tn(exec, m, k, n, &at, &b, &mut tn);
        gemm_nt(exec, m, k, n, &a, &bt, &mut nt);
        [bits(&nn), bits(&tn), bits(&nt)]
    };
    let seq = run(Exec::Sequential);
    let par = with_threads(|| run(Exec::Parallel));
    assert_eq!(seq, par);
}

#[test]
fn convolution_agrees() {
    let g = ConvGeom {
        channels: 3,
        height: 17,
        width: 13,
        kh: 3,
        kw: 3,
        stride: 2,
        pad: 1,
    };
    let (batch, c_out) = (5, 4);
    let x = random(batch * 3 * 17 * 13, 5);
    let kernel = random(c_out * g.patch_len(), 6);
    let bias = random(c_out, 7);
    let grad = random(batch * c_out * g.out_len(), 8);
    let run = |exec| {
        let (out, cols) = conv2d_forward(exec, &g, batch, c_out, &x, &kernel, Some(&bias));
        let (dx, dk) = conv2d_backward(exec, &g, c_out, &cols, &kernel, &grad, true, true);
        (bits(&out), bits(&dx.unwrap()), bits(&dk.unwrap()))
    };
    let seq = run(Exec::Sequential);
    let par = with_threads(|| run(Exec::Parallel));
    assert_eq!(seq, par);
}

#[test]
fn training_run_agrees() {
    let data = synth_generate(6, 12);
    let (tr, te) = data.split(0.75, 12).unwrap();
    let hp = Hyperparams {
        epochs: 2,
        batch_fraction: 0.25,
        ..Hyperparams::default()
    };
    let run = |exec| {
        let mut model = Model::<f32>::build(&ModelConfig::tiny()).unwrap();
        let out = train(
            &mut model,
            &tr,
            &te,
            &hp,
            TrainOptions {
                exec,
                evaluate_each_epoch: true,
            },
        )
        .unwrap();
        (
            history_csv(&out.history, false),
            save_bytes(&model, CheckpointMeta { epoch: 2 }).unwrap(),
        )
    };
    let seq = run(Exec::Sequential);
    let par = with_threads(|| run(Exec::Parallel));
    assert_eq!(seq.0, par.0);
    assert!(seq.1 == par.1, "checkpoint bytes differ");
}
