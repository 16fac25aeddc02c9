use std::rc::Rc;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::gradcheck::{grad_check, project, random_tensor};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_hand_values() {
    let tape = Tape::new();
    let b = random_tensor(&[3, 4], 1.0, 1);
    let out = tape
        .constant(Tensor::eye(3))
        .matmul(tape.constant(b.clone()))
        .unwrap();
    assert_eq!(*out.value(), b);

    let out = tape
        .constant(t(&[1, 2], &[1.0, 2.0]))
        .matmul(tape.constant(t(&[2, 1], &[3.0, 4.0])))
        .unwrap();
    assert_eq!(out.value().data(), &[11.0]);

    let out = tape
        .constant(Tensor::zeros(&[2, 3]))
        .matmul(tape.constant(random_tensor(&[3, 4], 5.0, 2)))
        .unwrap();
    assert_eq!(*out.value(), Tensor::zeros(&[2, 4]));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::<f64>::new();
    let err = tape
        .constant(Tensor::zeros(&[2, 3]))
        .matmul(tape.constant(Tensor::zeros(&[4, 5])))
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn elementwise_examples() {
    let tape = Tape::new();
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape
        .elementwise(ElementwiseOp::Relu, x, None, None)
        .unwrap();
    assert_eq!(r.value().data(), &[0.0, 0.0, 2.0]);
    let z = tape.constant(Tensor::zeros(&[3]));
    let s = tape
        .elementwise(ElementwiseOp::Add, x, Some(z), None)
        .unwrap();
    assert_eq!(*s.value(), *x.value());
    let g = tape.constant(Tensor::zeros(&[1])).gelu();
    assert_eq!(g.value().data(), &[0.0]);
    let sc = tape
        .elementwise(ElementwiseOp::Scale, x, None, Some(2.0))
        .unwrap();
    assert_eq!(sc.value().data(), &[-2.0, 0.0, 4.0]);
}

#[test]
fn elementwise_errors() {
    assert!(matches!(
        "tanh".parse::<ElementwiseOp>(),
        Err(Error::UnknownOp(_))
    ));
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    assert!(a.add(b).is_err());
    assert!(a.mul(b).is_err());
    assert!(tape.elementwise(ElementwiseOp::Add, a, None, None).is_err());
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::ones(&[4]));
    let zeros = tape.constant(Tensor::zeros(&[4]));
    let y = tape
        .constant(t(&[4], &[5.0; 4]))
        .layer_norm(ones, zeros, 1e-5)
        .unwrap();
    assert_eq!(y.value().data(), &[0.0; 4]);

    let g2 = tape.constant(Tensor::ones(&[2]));
    let b2 = tape.constant(Tensor::zeros(&[2]));
    let y = tape
        .constant(t(&[2], &[1.0, 3.0]))
        .layer_norm(g2, b2, 1e-15)
        .unwrap();
    assert_abs_diff_eq!(y.value().data()[0], -1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(y.value().data()[1], 1.0, epsilon = 1e-12);

    let beta = t(&[4], &[0.5, -1.0, 2.0, 3.0]);
    let y = tape
        .constant(random_tensor(&[3, 4], 2.0, 3))
        .layer_norm(zeros, tape.constant(beta.clone()), 1e-5)
        .unwrap();
    for row in y.value().data().chunks(4) {
        assert_eq!(row, beta.data());
    }
    assert!(tape
        .constant(Tensor::zeros(&[2, 3]))
        .layer_norm(ones, zeros, 1e-5)
        .is_err());
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let y = tape.constant(t(&[2], &[0.0, 0.0])).softmax(0).unwrap();
    assert_eq!(y.value().data(), &[0.5, 0.5]);
    let y = tape
        .constant(t(&[2], &[1000.0, 1000.0]))
        .softmax(0)
        .unwrap();
    assert_eq!(y.value().data(), &[0.5, 0.5]);
    let y = tape
        .constant(t(&[2], &[0.0, 3f64.ln()]))
        .softmax(0)
        .unwrap();
    assert_abs_diff_eq!(y.value().data()[0], 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(y.value().data()[1], 0.75, epsilon = 1e-15);
    assert!(tape.constant(t(&[2], &[0.0, 0.0])).softmax(1).is_err());
}

#[test]
fn softmax_sums_to_one_along_middle_axis() {
    let tape = Tape::new();
    let y = tape
        .constant(random_tensor(&[3, 5, 4], 1e4, 9))
        .softmax(1)
        .unwrap();
    let v = y.value();
    for o in 0..3 {
        for i in 0..4 {
            let s: f64 = (0..5).map(|j| v.at(&[o, j, i])).sum();
            assert!((s - 1.0).abs() <= 1e-12, "{s}");
        }
    }
}

#[test]
fn conv2d_examples() {
    let tape = Tape::new();
    // 1×1 unit kernel over two channels sums the channels.
    let x = random_tensor(&[1, 2, 3, 3], 1.0, 4);
    let y = tape
        .constant(x.clone())
        .conv2d(tape.constant(Tensor::ones(&[1, 2, 1, 1])), None, 1, 0)
        .unwrap();
    for p in 0..9 {
        assert_abs_diff_eq!(
            y.value().data()[p],
            x.data()[p] + x.data()[9 + p],
            epsilon = 1e-15
        );
    }

    let y = tape
        .constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]))
        .conv2d(tape.constant(Tensor::ones(&[1, 1, 2, 2])), None, 1, 0)
        .unwrap();
    assert_eq!(y.shape(), vec![1, 1, 1, 1]);
    assert_eq!(y.value().data(), &[10.0]);

    let y = tape
        .constant(random_tensor(&[2, 3, 5, 5], 1.0, 5))
        .conv2d(tape.constant(Tensor::zeros(&[4, 3, 3, 3])), None, 2, 1)
        .unwrap();
    assert_eq!(y.shape(), vec![2, 4, 3, 3]);
    assert!(y.value().data().iter().all(|&v| v == 0.0));

    let err = tape
        .constant(Tensor::zeros(&[1, 1, 2, 2]))
        .conv2d(tape.constant(Tensor::zeros(&[1, 1, 5, 5])), None, 1, 1)
        .unwrap_err();
    assert!(err.to_string().contains("larger than padded input"));
}

#[test]
fn conv2d_is_cross_correlation() {
    // An asymmetric kernel picks out the right-hand neighbour, not the left.
    let tape = Tape::new();
    let x = t(&[1, 1, 1, 3], &[1.0, 2.0, 3.0]);
    let k = t(&[1, 1, 1, 2], &[0.0, 1.0]);
    let y = tape
        .constant(x)
        .conv2d(tape.constant(k), None, 1, 0)
        .unwrap();
    assert_eq!(y.value().data(), &[2.0, 3.0]);
}

#[test]
fn pool_examples() {
    let tape = Tape::new();
    let y = tape
        .constant(Tensor::full(&[1, 2, 4, 4], 3.5))
        .avg_pool2d(2, 2)
        .unwrap();
    assert!(y.value().data().iter().all(|&v| v == 3.5));
    let y = tape
        .constant(t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]))
        .avg_pool2d(2, 2)
        .unwrap();
    assert_eq!(y.value().data(), &[4.0]);
    // Tiling windows cover each input exactly once: the sum is preserved up to the window area.
    let x = random_tensor(&[1, 1, 6, 6], 1.0, 6);
    let y = tape.constant(x.clone()).avg_pool2d(3, 3).unwrap();
    let total: f64 = y.value().data().iter().sum::<f64>() * 9.0;
    assert_abs_diff_eq!(total, x.data().iter().sum::<f64>(), epsilon = 1e-12);
    assert!(tape
        .constant(Tensor::zeros(&[1, 1, 2, 2]))
        .avg_pool2d(3, 1)
        .is_err());
}

#[test]
fn batch_norm_examples() {
    let tape = Tape::new();
    let x = random_tensor(&[4, 3, 2, 2], 3.0, 7);
    let ones = tape.constant(Tensor::ones(&[3]));
    let zeros = tape.constant(Tensor::zeros(&[3]));
    let (y, stats) = tape
        .constant(x.clone())
        .batch_norm(ones, zeros, None, 1e-5)
        .unwrap();
    let stats = stats.unwrap();
    let v = y.value();
    for ch in 0..3 {
        let mut total = 0.0;
        for b in 0..4 {
            for p in 0..4 {
                total += v.data()[(b * 3 + ch) * 4 + p];
            }
        }
        assert!(total.abs() < 1e-12);
        assert!(stats.1[ch] > 0.0);
    }
    drop(v);

    let rm = vec![0.0; 3];
    let rv = vec![1.0; 3];
    let (y, none) = tape
        .constant(x.clone())
        .batch_norm(ones, zeros, Some((&rm, &rv)), 1e-10)
        .unwrap();
    assert!(none.is_none());
    assert!(y.value().max_abs_diff(&x).unwrap() < 1e-8);

    let single = tape
        .constant(Tensor::zeros(&[1, 3, 1, 1]))
        .batch_norm(ones, zeros, None, 1e-5);
    assert!(single.is_err(), "one value per channel has no variance");
    // A single image is fine when it has spatial extent.
    assert!(tape
        .constant(x)
        .slice(0, 0, 1)
        .unwrap()
        .batch_norm(ones, zeros, None, 1e-5)
        .is_ok());
}

#[test]
fn concat_examples() {
    let tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[1], &[3.0]));
    assert_eq!(tape.concat(&[a], 0).unwrap().value().data(), &[1.0, 2.0]);
    assert_eq!(
        tape.concat(&[a, b], 0).unwrap().value().data(),
        &[1.0, 2.0, 3.0]
    );
    let maps: Vec<_> = (0..3)
        .map(|s| tape.constant(random_tensor(&[2, 4, 3, 3], 1.0, s)))
        .collect();
    assert_eq!(tape.concat(&maps, 1).unwrap().shape(), vec![2, 12, 3, 3]);
    let bad = tape.constant(Tensor::zeros(&[3, 4, 3, 3]));
    assert!(tape.concat(&[maps[0], bad], 1).is_err());
}

#[test]
fn concat_then_slice_recovers_inputs() {
    let tape = Tape::new();
    let parts: Vec<_> = [1, 3, 2]
        .iter()
        .enumerate()
        .map(|(i, &c)| tape.constant(random_tensor(&[2, c, 4], 1.0, i as u64)))
        .collect();
    let cat = tape.concat(&parts, 1).unwrap();
    let mut start = 0;
    for p in &parts {
        let c = p.shape()[1];
        let s = cat.slice(1, start, c).unwrap();
        assert_eq!(*s.value(), *p.value());
        start += c;
    }
}

#[test]
fn unfold_geometry() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::zeros(&[1, 1, 64, 64]));
    assert_eq!(
        x.unfold_patches(16, 16).unwrap().shape(),
        vec![1, 16, 1, 256]
    );
    assert_eq!(
        x.unfold_patches(16, 4).unwrap().shape(),
        vec![1, 16, 16, 16]
    );
    assert!(x.unfold_patches(24, 4).is_err());
    let block = tape.constant(Tensor::<f64>::zeros(&[4, 4]));
    assert_eq!(block.reshape(&[16]).unwrap().shape(), vec![16]);
}

#[test]
fn unfold_picks_word_pixels_in_raster_order() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64));
    let u = x.unfold_patches(4, 2).unwrap();
    let v = u.value();
    // Second word of the single sentence is the top-right 2×2 block.
    assert_eq!(&v.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
}

#[test]
fn backward_simple_cases() {
    let tape = Tape::new();
    let x = tape.param(random_tensor(&[2, 3], 1.0, 10));
    let g = tape.backward(x.sum()).unwrap();
    assert_eq!(*g.get(x).unwrap(), Tensor::ones(&[2, 3]));

    let tape = Tape::new();
    let xv = random_tensor(&[5], 1.0, 11);
    let x = tape.param(xv.clone());
    let g = tape.backward(x.mul(x).unwrap().sum()).unwrap();
    assert_eq!(*g.get(x).unwrap(), xv.map(|v| 2.0 * v));
}

#[test]
fn backward_errors() {
    let tape = Tape::new();
    let x = tape.param(Tensor::<f64>::ones(&[3]));
    assert!(tape.backward(x).is_err(), "non-scalar loss");
    let c = tape.constant(Tensor::<f64>::ones(&[3])).sum();
    assert!(tape.backward(c).is_err(), "nothing trainable recorded");
    let loss = x.sum();
    assert!(tape.backward(loss).is_ok());
    assert!(tape.backward(loss).is_err(), "tape consumed");
}

#[test]
fn vars_from_different_tapes_are_rejected() {
    let t1 = Tape::<f64>::new();
    let t2 = Tape::<f64>::new();
    let a = t1.constant(Tensor::ones(&[2]));
    let b = t2.constant(Tensor::ones(&[2]));
    assert!(matches!(a.add(b), Err(Error::Graph(_))));
}

#[test]
fn shared_subexpression_accumulates() {
    // y = sum(x*x + x) has gradient 2x + 1 with x reached through two paths.
    let tape = Tape::new();
    let xv = random_tensor(&[4], 1.0, 12);
    let x = tape.param(xv.clone());
    let y = x.mul(x).unwrap().add(x).unwrap().sum();
    let g = tape.backward(y).unwrap();
    assert_eq!(*g.get(x).unwrap(), xv.map(|v| 2.0 * v + 1.0));
}

const PRIMITIVE_TOL: f64 = 1e-6;
const STEP: f64 = 1e-5;

/// Checks a primitive over ten random instances.
fn check_primitive<F>(shape: &[usize], scale: f64, f: F)
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>> + Sync,
{
    for seed in 0..10 {
        let x = random_tensor(shape, scale, 100 + seed);
        let err = grad_check(|tape, v| project(f(tape, v)?, seed), &x, STEP).unwrap();
        assert!(err < PRIMITIVE_TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn grad_identity_is_exact() {
    let x = random_tensor(&[1], 1.0, 1);
    let err = grad_check(|_, v| v.reshape(&[]), &x, STEP).unwrap();
    assert!(err < 1e-10, "{err:e}");
}

#[test]
fn grad_matmul() {
    let w = random_tensor(&[4, 3], 1.0, 1);
    check_primitive(&[2, 4], 1.0, |tape, x| x.matmul(tape.constant(w.clone())));
    let a = random_tensor(&[3, 2], 1.0, 2);
    check_primitive(&[2, 4], 1.0, |tape, x| tape.constant(a.clone()).matmul(x));
}

#[test]
fn grad_bmm() {
    let w = random_tensor(&[2, 4, 3], 1.0, 1);
    check_primitive(&[2, 3, 4], 1.0, |tape, x| x.bmm(tape.constant(w.clone())));
    check_primitive(&[2, 3, 4], 1.0, |tape, x| tape.constant(w.clone()).bmm(x));
    let v = random_tensor(&[2, 5, 4], 1.0, 2);
    check_primitive(&[2, 3, 4], 1.0, |tape, x| {
        x.bmm_nt(tape.constant(v.clone()))
    });
    check_primitive(&[2, 5, 4], 1.0, |tape, x| {
        tape.constant(v.clone()).bmm_nt(x)
    });
}

#[test]
fn grad_elementwise() {
    let other = random_tensor(&[3, 4], 1.0, 3);
    check_primitive(&[3, 4], 1.0, |tape, x| x.add(tape.constant(other.clone())));
    check_primitive(&[3, 4], 1.0, |tape, x| x.sub(tape.constant(other.clone())));
    check_primitive(&[3, 4], 1.0, |tape, x| tape.constant(other.clone()).sub(x));
    check_primitive(&[3, 4], 1.0, |tape, x| x.mul(tape.constant(other.clone())));
    check_primitive(&[3, 4], 1.0, |_, x| Ok(x.scale(-2.5)));
    check_primitive(&[3, 4], 1.0, |_, x| Ok(x.relu()));
    check_primitive(&[3, 4], 2.0, |_, x| Ok(x.gelu()));
    check_primitive(&[3, 4], 1.0, |_, x| {
        Ok(x.mul(x)?
            .add(x.tape().constant(Tensor::ones(&[3, 4])))?
            .sqrt())
    });
    check_primitive(&[3, 4], 1.0, |_, x| {
        Ok(x.mul(x)?
            .add(x.tape().constant(Tensor::ones(&[3, 4])))?
            .ln())
    });
    check_primitive(&[3, 4], 1.0, |_, x| x.mean().reshape(&[1]));
}

#[test]
fn grad_add_bias() {
    let b = random_tensor(&[4], 1.0, 4);
    check_primitive(&[3, 4], 1.0, |tape, x| x.add_bias(tape.constant(b.clone())));
    let a = random_tensor(&[2, 3, 4], 1.0, 5);
    check_primitive(&[4], 1.0, |tape, x| tape.constant(a.clone()).add_bias(x));
}

#[test]
fn grad_layer_norm() {
    let g = random_tensor(&[5], 1.0, 6);
    let b = random_tensor(&[5], 1.0, 7);
    check_primitive(&[3, 5], 2.0, |tape, x| {
        x.layer_norm(tape.constant(g.clone()), tape.constant(b.clone()), 1e-5)
    });
    let x0 = random_tensor(&[3, 5], 2.0, 8);
    check_primitive(&[5], 1.0, |tape, gam| {
        tape.constant(x0.clone())
            .layer_norm(gam, tape.constant(b.clone()), 1e-5)
    });
    check_primitive(&[5], 1.0, |tape, bet| {
        tape.constant(x0.clone())
            .layer_norm(tape.constant(g.clone()), bet, 1e-5)
    });
}

#[test]
fn grad_softmax() {
    check_primitive(&[3, 5], 3.0, |_, x| x.softmax(1));
    check_primitive(&[3, 5, 2], 3.0, |_, x| x.softmax(1));
    check_primitive(&[4, 2], 3.0, |_, x| x.softmax(0));
}

#[test]
fn grad_conv2d() {
    let k = random_tensor(&[3, 2, 3, 3], 1.0, 9);
    let bias = random_tensor(&[3], 1.0, 10);
    check_primitive(&[2, 2, 5, 5], 1.0, |tape, x| {
        x.conv2d(
            tape.constant(k.clone()),
            Some(tape.constant(bias.clone())),
            1,
            1,
        )
    });
    check_primitive(&[2, 2, 6, 5], 1.0, |tape, x| {
        x.conv2d(tape.constant(k.clone()), None, 2, 1)
    });
    let x0 = random_tensor(&[2, 2, 5, 5], 1.0, 11);
    check_primitive(&[3, 2, 3, 3], 1.0, |tape, kk| {
        tape.constant(x0.clone()).conv2d(kk, None, 1, 0)
    });
    check_primitive(&[3], 1.0, |tape, bb| {
        tape.constant(x0.clone())
            .conv2d(tape.constant(k.clone()), Some(bb), 1, 1)
    });
}

#[test]
fn grad_avg_pool() {
    check_primitive(&[2, 3, 4, 4], 1.0, |_, x| x.avg_pool2d(2, 2));
    check_primitive(&[1, 2, 5, 5], 1.0, |_, x| x.avg_pool2d(3, 1));
}

#[test]
fn grad_batch_norm() {
    let g = random_tensor(&[3], 1.0, 12);
    let b = random_tensor(&[3], 1.0, 13);
    check_primitive(&[4, 3, 2, 2], 2.0, |tape, x| {
        Ok(x.batch_norm(
            tape.constant(g.clone()),
            tape.constant(b.clone()),
            None,
            1e-5,
        )?
        .0)
    });
    let rm = vec![0.1, -0.2, 0.3];
    let rv = vec![1.5, 0.5, 2.0];
    check_primitive(&[2, 3, 2, 2], 2.0, |tape, x| {
        Ok(x.batch_norm(
            tape.constant(g.clone()),
            tape.constant(b.clone()),
            Some((&rm, &rv)),
            1e-5,
        )?
        .0)
    });
    let x0 = random_tensor(&[4, 3, 2, 2], 2.0, 14);
    check_primitive(&[3], 1.0, |tape, gam| {
        Ok(tape
            .constant(x0.clone())
            .batch_norm(gam, tape.constant(b.clone()), None, 1e-5)?
            .0)
    });
}

#[test]
fn grad_concat_and_reindexing() {
    let other = random_tensor(&[2, 2, 3], 1.0, 15);
    check_primitive(&[2, 1, 3], 1.0, |tape, x| {
        tape.concat(&[tape.constant(other.clone()), x], 1)
    });
    check_primitive(&[2, 3, 4], 1.0, |_, x| x.permute(&[2, 0, 1]));
    check_primitive(&[2, 3, 4], 1.0, |_, x| x.slice(1, 1, 2));
    check_primitive(&[3], 1.0, |_, x| x.tile(4));
    check_primitive(&[1, 2, 4, 4], 1.0, |_, x| x.unfold_patches(4, 2));
    check_primitive(&[2, 6], 1.0, |_, x| x.reshape(&[3, 4]));
    check_primitive(&[4], 1.0, |_, x| x.reindex(&[2], Rc::new(vec![3, 3])));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reshape_and_permute_round_trip_exactly(
        dims in prop::collection::vec(1usize..4, 1..5),
        seed in any::<u64>(),
    ) {
        let tape = Tape::new();
        let x = random_tensor(&dims, 1.0, seed);
        let v = tape.constant(x.clone());
        let flat = v.reshape(&[x.len()]).unwrap().reshape(&dims).unwrap();
        prop_assert_eq!(&*flat.value(), &x);

        let r = dims.len();
        let axes: Vec<usize> = (0..r).rev().collect();
        let back = v.permute(&axes).unwrap().permute(&axes).unwrap();
        prop_assert_eq!(&*back.value(), &x);
    }

    #[test]
    fn unfold_is_a_bijection(n in 1usize..3, c in 1usize..3, gh in 1usize..3, gw in 1usize..3, words in 1usize..3) {
        let word = 2;
        let patch = word * words;
        let shape = [n, c, gh * patch, gw * patch];
        let (_, map) = ops::unfold_map(&shape, patch, word).unwrap();
        let mut seen = vec![false; map.len()];
        for &i in &map {
            prop_assert!(!seen[i]);
            seen[i] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn softmax_normalizes_large_inputs(seed in any::<u64>(), scale in 1.0f64..1e4) {
        let tape = Tape::new();
        let y = tape.constant(random_tensor(&[4, 7], scale, seed)).softmax(1).unwrap();
        for row in y.value().data().chunks(7) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}
