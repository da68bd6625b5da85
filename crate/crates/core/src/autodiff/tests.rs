use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const STEP: f64 = 1e-5;

/// Central differences of a scalar function of a flat input.
fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

/// Records `build` on a fresh tape with `x` as a variable; returns the loss
/// value and the tape gradient with respect to `x`.
fn loss_and_grad(shape: &[usize], x: &[f64], build: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let v = tape.variable(t(shape, x));
    let loss = build(&mut tape, v);
    let value = tape.value(loss).item();
    tape.backward(loss).unwrap();
    (value, tape.grad(v).unwrap().to_f64_vec())
}

fn check_gradient(shape: &[usize], x: &[f64], build: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let (_, analytic) = loss_and_grad(shape, x, build);
    let f = |p: &[f64]| {
        let mut tape = Tape::new();
        let v = tape.constant(t(shape, p));
        let loss = build(&mut tape, v);
        tape.value(loss).item()
    };
    max_rel_err(&analytic, &finite_diff(&f, x))
}

/// Random weighted sum, so every output coordinate contributes to the loss.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = tape.constant(t(&shape, &random_vec(&mut rng, n)));
    let prod = tape.mul(y, w).unwrap();
    tape.sum(prod).unwrap()
}

#[test]
fn matmul_identity_and_zero_cases() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
    let m = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[&[0.0, 0.0], &[0.0, 1.0]]).unwrap());
    let z = tape.matmul(a, b).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let msg = err.to_string();
    assert!(msg.contains("[2, 3] and [2, 3]"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_vec(&mut rng, 9);
    let b = random_vec(&mut rng, 9);
    let err = check_gradient(&[3, 3], &a, &|tape, av| {
        let bv = tape.constant(t(&[3, 3], &b));
        let p = tape.matmul(av, bv).unwrap();
        tape.sum(p).unwrap()
    });
    assert!(err < 1e-6, "rel err {err}");
    // and with respect to the right operand
    let err = check_gradient(&[3, 3], &b, &|tape, bv| {
        let av = tape.constant(t(&[3, 3], &a));
        let p = tape.matmul(av, bv).unwrap();
        weighted_sum(tape, p, 2)
    });
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn softmax_symmetry_and_stability() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_rows(&[&[0.0, 0.0], &[1000.0, 0.0]]).unwrap());
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y).data();
    assert_eq!(&v[..2], &[0.5, 0.5]);
    assert!((v[2] - 1.0).abs() < 1e-12);
    assert!(v[3].abs() < 1e-12);
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_vec(&mut rng, 5);
    // one scalar function per output coordinate gives the full Jacobian
    for out in 0..5 {
        let err = check_gradient(&[1, 5], &x, &|tape, xv| {
            let y = tape.softmax_rows(xv).unwrap();
            let mut mask = vec![0.0; 5];
            mask[out] = 1.0;
            let m = tape.constant(t(&[1, 5], &mask));
            let picked = tape.mul(y, m).unwrap();
            tape.sum(picked).unwrap()
        });
        assert!(err < 1e-5, "row {out}: rel err {err}");
    }
}

#[test]
fn softmax_rejects_non_finite_input() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 2], &[f64::NAN, 0.0]));
    assert_eq!(
        tape.softmax_rows(x).unwrap_err(),
        AutodiffError::NonFinite { op: "softmax_rows" }
    );
}

fn unit_affine(tape: &mut Tape<f64>, width: usize) -> (Var, Var) {
    let g = tape.constant(Tensor::filled(vec![width], 1.0));
    let b = tape.constant(Tensor::zeros(vec![width]));
    (g, b)
}

#[test]
fn layer_norm_reference_rows() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 3], &[5.0, 5.0, 5.0]));
    let (g, b) = unit_affine(&mut tape, 3);
    let y = tape.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

    let x = tape.constant(t(&[1, 2], &[-1.0, 1.0]));
    let (g, b) = unit_affine(&mut tape, 2);
    let y = tape.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5, "{v:?}");
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_vec(&mut rng, 4 * 6);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(t(&[4, 6], &x));
    let (g, b) = unit_affine(&mut tape, 6);
    let y = tape.layer_norm(xv, g, b, LAYER_NORM_EPS).unwrap();
    for row in tape.value(y).data().chunks(6) {
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
}

#[test]
fn layer_norm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_vec(&mut rng, 3 * 4);
    let gain = random_vec(&mut rng, 4);
    let shift = random_vec(&mut rng, 4);
    let err = check_gradient(&[3, 4], &x, &|tape, xv| {
        let g = tape.constant(t(&[4], &gain));
        let b = tape.constant(t(&[4], &shift));
        let y = tape.layer_norm(xv, g, b, LAYER_NORM_EPS).unwrap();
        weighted_sum(tape, y, 6)
    });
    assert!(err < 1e-5, "x: rel err {err}");
    let err = check_gradient(&[4], &gain, &|tape, gv| {
        let xv = tape.constant(t(&[3, 4], &x));
        let b = tape.constant(t(&[4], &shift));
        let y = tape.layer_norm(xv, gv, b, LAYER_NORM_EPS).unwrap();
        weighted_sum(tape, y, 6)
    });
    assert!(err < 1e-5, "gain: rel err {err}");
    let err = check_gradient(&[4], &shift, &|tape, bv| {
        let xv = tape.constant(t(&[3, 4], &x));
        let g = tape.constant(t(&[4], &gain));
        let y = tape.layer_norm(xv, g, bv, LAYER_NORM_EPS).unwrap();
        weighted_sum(tape, y, 6)
    });
    assert!(err < 1e-5, "shift: rel err {err}");
}

#[test]
fn layer_norm_requires_width_two() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2, 1], &[1.0, 2.0]));
    let (g, b) = unit_affine(&mut tape, 1);
    assert!(tape.layer_norm(x, g, b, LAYER_NORM_EPS).is_err());
}

#[test]
fn gelu_values_and_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[0.0, 10.0]));
    let y = tape.gelu(x).unwrap();
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 10.0).abs() < 1e-6);

    let points = [-2.0, -0.5, 0.5, 2.0];
    let err = check_gradient(&[4], &points, &|tape, xv| {
        let y = tape.gelu(xv).unwrap();
        tape.sum(y).unwrap()
    });
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn cross_entropy_reference_values() {
    let mut tape = Tape::<f64>::new();
    let uniform = tape.constant(Tensor::zeros(vec![3, 10]));
    let loss = tape.cross_entropy(uniform, &[0, 4, 9]).unwrap();
    assert!((tape.value(loss).item() - 10f64.ln()).abs() < 1e-12);
    assert!((tape.value(loss).item() - std::f64::consts::LN_10).abs() < 1e-6);

    let confident = tape.constant(t(&[1, 3], &[0.0, 1000.0, 0.0]));
    let loss = tape.cross_entropy(confident, &[1]).unwrap();
    assert!(tape.value(loss).item().abs() < 1e-9);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_one_hot() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random_vec(&mut rng, 8);
    let labels = [2usize, 0];
    let (_, grad) = loss_and_grad(&[2, 4], &logits, &|tape, v| tape.cross_entropy(v, &labels).unwrap());
    // analytic oracle computed independently of the tape
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * 4..(b + 1) * 4];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        for j in 0..4 {
            let p = row[j].exp() / z;
            let target = if j == label { 1.0 } else { 0.0 };
            let expected = (p - target) / labels.len() as f64;
            assert!((grad[b * 4 + j] - expected).abs() < 1e-12);
        }
    }
    let err = check_gradient(&[2, 4], &logits, &|tape, v| tape.cross_entropy(v, &labels).unwrap());
    assert!(err < 1e-6);
}

#[test]
fn cross_entropy_rejects_out_of_range_label() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::zeros(vec![1, 3]));
    assert_eq!(
        tape.cross_entropy(logits, &[3]).unwrap_err(),
        AutodiffError::LabelOutOfRange { label: 3, classes: 3 }
    );
}

#[test]
fn backward_of_sum_of_squares() {
    let (value, grad) = loss_and_grad(&[2], &[1.0, 2.0], &|tape, x| {
        let sq = tape.mul(x, x).unwrap();
        tape.sum(sq).unwrap()
    });
    assert_eq!(value, 5.0);
    assert_eq!(grad, vec![2.0, 4.0]);
}

#[test]
fn unused_parameter_keeps_zero_gradient() {
    let mut params = vec![
        Parameter::new("used", t(&[2], &[1.0, 2.0])),
        Parameter::new("unused", t(&[3], &[1.0, 2.0, 3.0])),
    ];
    let mut tape = Tape::new();
    let a = tape.parameter(0, &params[0]);
    let _b = tape.parameter(1, &params[1]);
    let loss = tape.sum(a).unwrap();
    tape.backward_into(loss, &mut params).unwrap();
    assert_eq!(params[0].grad().data(), &[1.0, 1.0]);
    assert!(params[1].grad().data().iter().all(|&g| g == 0.0));
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let mut params = vec![Parameter::new("w", t(&[2], &[3.0, -1.0]))];
    for _ in 0..2 {
        let mut tape = Tape::new();
        let w = tape.parameter(0, &params[0]);
        let loss = tape.sum(w).unwrap();
        tape.backward_into(loss, &mut params).unwrap();
    }
    assert_eq!(params[0].grad().data(), &[2.0, 2.0]);
    zero_grad(&mut params);
    assert!(params[0].grad().data().iter().all(|&g| g == 0.0));
}

#[test]
fn second_backward_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(t(&[2], &[1.0, 2.0]));
    let loss = tape.sum(x).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.backward(loss).unwrap_err(), AutodiffError::BackwardReplayed);
}

#[test]
fn inference_tape_refuses_backward() {
    let mut tape = Tape::<f64>::inference();
    let x = tape.variable(t(&[2], &[1.0, 2.0]));
    let loss = tape.sum(x).unwrap();
    assert_eq!(tape.backward(loss).unwrap_err(), AutodiffError::GradDisabled);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss { .. })));
}

#[test]
fn structural_ops_forward_values() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap());
    let at = tape.transpose(a).unwrap();
    assert_eq!(tape.shape(at), &[3, 2]);
    assert_eq!(tape.value(at).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);

    let cat = tape.concat(&[a, a], 1).unwrap();
    assert_eq!(tape.shape(cat), &[2, 6]);
    assert_eq!(tape.value(cat).data()[..6], [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    let cat0 = tape.concat(&[a, a], 0).unwrap();
    assert_eq!(tape.shape(cat0), &[4, 3]);

    let m = tape.mean_axis(a, 0).unwrap();
    assert_eq!(tape.value(m).data(), &[2.5, 3.5, 4.5]);
    let m1 = tape.mean_axis(a, 1).unwrap();
    assert_eq!(tape.value(m1).data(), &[2.0, 5.0]);

    let bias = tape.constant(t(&[3], &[10.0, 20.0, 30.0]));
    let biased = tape.add_broadcast(a, bias).unwrap();
    assert_eq!(tape.value(biased).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);

    let r = tape.reshape(a, &[3, 2]).unwrap();
    assert_eq!(tape.shape(r), &[3, 2]);
    assert!(tape.reshape(a, &[4, 2]).is_err());

    let mean = tape.mean(a).unwrap();
    assert_eq!(tape.value(mean).item(), 3.5);
    let scaled = tape.scale(a, 2.0).unwrap();
    assert_eq!(tape.value(scaled).data()[5], 12.0);
}

#[test]
fn concat_checks_non_axis_extents() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![3, 3]));
    assert!(tape.concat(&[a, b], 1).is_err());
    assert!(tape.concat(&[a, b], 0).is_ok());
    assert_eq!(tape.concat(&[], 0).unwrap_err(), AutodiffError::EmptyConcat);
}

/// A composite exercising every structural op along one path.
fn composite(tape: &mut Tape<f64>, x: Var) -> Var {
    // x: [2, 3, 4]
    let xt = tape.transpose(x).unwrap(); // [2, 4, 3]
    let prod = tape.batch_matmul(x, xt).unwrap(); // [2, 3, 3]
    let soft = tape.softmax_rows(prod).unwrap();
    let mix = tape.batch_matmul(soft, x).unwrap(); // [2, 3, 4]
    let cat = tape.concat(&[mix, x], 2).unwrap(); // [2, 3, 8]
    let flat = tape.reshape(cat, &[6, 8]).unwrap();
    let g = tape.gelu(flat).unwrap();
    let bias = tape.constant(Tensor::filled(vec![8], 0.25));
    let biased = tape.add_broadcast(g, bias).unwrap();
    let scaled = tape.scale(biased, 0.5).unwrap();
    let sq = tape.mul(scaled, flat).unwrap();
    let summed = tape.add(sq, flat).unwrap();
    let grid = tape.reshape(summed, &[2, 3, 8]).unwrap();
    let pooled = tape.mean_axis(grid, 1).unwrap(); // [2, 8]
    let total = weighted_sum(tape, pooled, 11);
    let m = tape.mean(pooled).unwrap();
    tape.add(total, m).unwrap()
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_vec(&mut rng, 24);
    let err = check_gradient(&[2, 3, 4], &x, &composite);
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn repeated_runs_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_vec(&mut rng, 24);
    let a = loss_and_grad(&[2, 3, 4], &x, &composite);
    let b = loss_and_grad(&[2, 3, 4], &x, &composite);
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn float32_tape_runs() {
    let mut tape = Tape::<f32>::new();
    let x = tape.variable(Tensor::from_f64(vec![1, 3], &[1.0, 2.0, 3.0]).unwrap());
    assert_eq!(tape.value(x).precision(), Precision::F32);
    let y = tape.softmax_rows(x).unwrap();
    let loss = tape.cross_entropy(y, &[2]).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).unwrap().is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..7, scale in 0.1f64..500.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = random_vec(&mut rng, rows * cols).iter().map(|v| v * scale).collect();
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(t(&[rows, cols], &x));
        let y = tape.softmax_rows(xv).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn prop_matmul_is_associative(m in 1usize..5, k in 1usize..5, l in 1usize..5, n in 1usize..5, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[m, k], &random_vec(&mut rng, m * k)));
        let b = tape.constant(t(&[k, l], &random_vec(&mut rng, k * l)));
        let c = tape.constant(t(&[l, n], &random_vec(&mut rng, l * n)));
        let ab = tape.matmul(a, b).unwrap();
        let left = tape.matmul(ab, c).unwrap();
        let bc = tape.matmul(b, c).unwrap();
        let right = tape.matmul(a, bc).unwrap();
        prop_assert!(tape.value(left).max_abs_diff(tape.value(right)) < 1e-10);
    }

    #[test]
    fn prop_recorded_adjoints_match_finite_differences(m in 1usize..4, k in 2usize..5, n in 1usize..4, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vec(&mut rng, m * k);
        let w = random_vec(&mut rng, k * n);
        let gain = random_vec(&mut rng, k);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        let err = check_gradient(&[m, k], &x, &|tape, xv| {
            let g = tape.constant(t(&[k], &gain));
            let b = tape.constant(Tensor::zeros(vec![k]));
            let normed = tape.layer_norm(xv, g, b, LAYER_NORM_EPS).unwrap();
            let act = tape.gelu(normed).unwrap();
            let wv = tape.constant(t(&[k, n], &w));
            let logits = tape.matmul(act, wv).unwrap();
            tape.cross_entropy(logits, &labels).unwrap()
        });
        prop_assert!(err < 1e-4, "rel err {}", err);
    }
}

#[test]
fn finiteness_scan_sees_every_position() {
    for len in [1, 7, 8, 9, 17, 64] {
        assert!(Tensor::<f32>::filled(vec![len], 1.5).is_finite());
        for pos in 0..len {
            for bad in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
                let mut x = Tensor::<f32>::filled(vec![len], 1.5);
                x.data_mut()[pos] = bad;
                assert!(!x.is_finite(), "len {len} pos {pos} {bad}");
            }
        }
    }
    assert!(Tensor::<f64>::filled(vec![9], f64::MAX).is_finite());
}
