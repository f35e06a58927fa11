use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_gradients;
use super::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn params_of(rng: &mut ChaCha8Rng, shapes: &[(&str, &[usize])]) -> ParamSet {
    let mut ps = ParamSet::new();
    for (name, shape) in shapes {
        ps.insert(*name, rand_array(rng, shape)).unwrap();
    }
    ps
}

/// Reduces any output to a scalar with fixed random weights so every output
/// entry contributes a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, crate::Error> {
    let shape = tape.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_array(&mut rng, &shape));
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

#[test]
fn matmul_identity_forward() {
    let ps = ParamSet::new();
    let mut t = Tape::new(&ps);
    let i = t.constant(Array::identity(2));
    let x = t.constant(Array::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let y = t.matmul(i, x).unwrap();
    assert_eq!(t.value(y).data(), &[3.0, 4.0]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let ps = ParamSet::new();
    let mut t = Tape::new(&ps);
    let x = t.constant(Array::row(vec![0.0; 3]));
    let y = t.softmax(x);
    for v in t.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn square_derivative_at_three() {
    let mut ps = ParamSet::new();
    let id = ps.insert("x", Array::scalar(3.0)).unwrap();
    let mut t = Tape::new(&ps);
    let x = t.param(id);
    let y = t.mul(x, x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(id).unwrap().item(), 6.0);
}

#[test]
fn sigmoid_derivative_at_zero() {
    let mut ps = ParamSet::new();
    let id = ps.insert("x", Array::scalar(0.0)).unwrap();
    let mut t = Tape::new(&ps);
    let x = t.param(id);
    let y = t.sigmoid(x);
    assert_eq!(t.value(y).item(), 0.5);
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(id).unwrap().item(), 0.25);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut ps = ParamSet::new();
    let id = ps.insert("x", Array::row(vec![1.0, 2.0])).unwrap();
    let mut t = Tape::new(&ps);
    let x = t.param(id);
    let err = t.backward(x).unwrap_err();
    assert!(err.to_string().contains("scalar"), "{err}");
}

#[test]
fn nan_gradient_names_the_primitive() {
    // log(0) = -inf, sigmoid(-inf) = 0 keeps the loss finite, but the log
    // backward evaluates 0/0.
    let mut ps = ParamSet::new();
    let id = ps.insert("x", Array::scalar(0.0)).unwrap();
    let mut t = Tape::new(&ps);
    let x = t.param(id);
    let l = t.log(x);
    let s = t.sigmoid(l);
    assert_eq!(t.value(s).item(), 0.0);
    let err = t.backward(s).unwrap_err().to_string();
    assert!(err.contains("`log`"), "{err}");
}

#[test]
fn unreachable_params_get_zero_and_frozen_get_none() {
    let mut ps = ParamSet::new();
    let used = ps.insert("used", Array::scalar(2.0)).unwrap();
    let unused = ps.insert("unused", Array::row(vec![1.0, 1.0])).unwrap();
    let frozen = ps.insert("frozen", Array::scalar(1.0)).unwrap();
    ps.get_mut(frozen).trainable = false;
    let mut t = Tape::new(&ps);
    let a = t.param(used);
    let f = t.param(frozen);
    let y = t.mul(a, f).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(used).unwrap().item(), 1.0);
    assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0]);
    assert!(g.get(frozen).is_none());
}

#[test]
fn shape_errors_name_the_shapes() {
    let ps = ParamSet::new();
    let mut t = Tape::new(&ps);
    let a = t.constant(Array::zeros(&[2, 3]));
    let b = t.constant(Array::zeros(&[3, 2]));
    let err = t.add(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
}

fn check_unary(op: impl Fn(&mut Tape, Var) -> Result<Var, crate::Error>, shape: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps = params_of(&mut rng, &[("x", shape)]);
    let r = check_gradients(&ps, H, |t| {
        let x = t.param_named("x")?;
        let y = op(t, x)?;
        weighted_sum(t, y, seed + 1)
    })
    .unwrap();
    assert!(r.max_rel_err < TOL, "{r:?}");
}

fn check_binary(
    op: impl Fn(&mut Tape, Var, Var) -> Result<Var, crate::Error>,
    sa: &[usize],
    sb: &[usize],
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps = params_of(&mut rng, &[("a", sa), ("b", sb)]);
    let r = check_gradients(&ps, H, |t| {
        let a = t.param_named("a")?;
        let b = t.param_named("b")?;
        let y = op(t, a, b)?;
        weighted_sum(t, y, seed + 1)
    })
    .unwrap();
    assert!(r.max_rel_err < TOL, "{r:?}");
}

#[test]
fn finite_differences_elementwise_primitives() {
    for seed in 0..5 {
        check_unary(|t, x| Ok(t.sigmoid(x)), &[3, 4], seed);
        check_unary(|t, x| Ok(t.tanh(x)), &[3, 4], seed);
        check_unary(|t, x| Ok(t.exp(x)), &[2, 5], seed);
        check_unary(|t, x| {
            let e = t.exp(x);
            Ok(t.log(e))
        }, &[2, 5], seed);
        check_unary(|t, x| Ok(t.affine(x, -1.5, 0.3)), &[4], seed);
    }
}

#[test]
fn finite_differences_row_reductions() {
    for seed in 0..5 {
        check_unary(|t, x| Ok(t.softmax(x)), &[3, 4], seed);
        check_unary(|t, x| Ok(t.log_softmax(x)), &[3, 4], seed);
        check_unary(|t, x| Ok(t.log_sum_exp(x)), &[3, 4], seed);
        check_unary(|t, x| Ok(t.sum(x)), &[3, 4], seed);
        check_unary(|t, x| t.sum_axis(x, 0), &[3, 4], seed);
        check_unary(|t, x| t.sum_axis(x, 1), &[3, 4], seed);
        check_unary(|t, x| Ok(t.squash(x)), &[3, 8], seed);
    }
}

#[test]
fn finite_differences_structural_primitives() {
    for seed in 0..5 {
        check_unary(|t, x| Ok(t.transpose(x)), &[3, 4], seed);
        check_unary(|t, x| t.slice(x, 0, 1, 3), &[3, 4], seed);
        check_unary(|t, x| t.slice(x, 1, 1, 4), &[3, 4], seed);
        check_unary(|t, x| t.reshape(x, vec![2, 6]), &[3, 4], seed);
        check_unary(|t, x| Ok(t.repeat_cols(x, 3)), &[2, 4], seed);
        check_unary(|t, x| t.group_sum_cols(x, 2), &[2, 6], seed);
        check_unary(|t, x| t.gather(x, &[2, 0, 2, 1]), &[3, 4], seed);
        check_unary(|t, x| t.dropout(x, vec![0.0, 1.25, 1.25, 0.0, 1.25, 1.25]), &[2, 3], seed);
    }
}

#[test]
fn finite_differences_binary_primitives() {
    for seed in 0..5 {
        check_binary(|t, a, b| t.matmul(a, b), &[3, 4], &[4, 2], seed);
        check_binary(|t, a, b| t.add(a, b), &[3, 4], &[3, 4], seed);
        check_binary(|t, a, b| t.add(a, b), &[3, 4], &[1, 4], seed);
        check_binary(|t, a, b| t.sub(a, b), &[3, 4], &[3, 1], seed);
        check_binary(|t, a, b| t.mul(a, b), &[3, 4], &[1, 1], seed);
        check_binary(|t, a, b| t.mul(a, b), &[3, 4], &[3, 4], seed);
        check_binary(|t, a, b| t.concat(&[a, b], 0), &[2, 4], &[3, 4], seed);
        check_binary(|t, a, b| t.concat(&[a, b], 1), &[3, 2], &[3, 4], seed);
    }
}

#[test]
fn squash_at_origin_has_finite_zero_gradient() {
    let mut ps = ParamSet::new();
    let id = ps.insert("s", Array::zeros(&[1, 4])).unwrap();
    let mut t = Tape::new(&ps);
    let s = t.param(id);
    let q = t.squash(s);
    assert_eq!(t.value(q).data(), &[0.0; 4]);
    let l = t.sum(q);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(id).unwrap().data(), &[0.0; 4]);
}

#[test]
fn random_three_layer_composition_matches_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = params_of(
            &mut rng,
            &[
                ("x", &[2, 5]),
                ("w1", &[5, 6]),
                ("b1", &[1, 6]),
                ("w2", &[6, 4]),
                ("w3", &[4, 3]),
            ],
        );
        let r = check_gradients(&ps, H, |t| {
            let x = t.param_named("x")?;
            let w1 = t.param_named("w1")?;
            let b1 = t.param_named("b1")?;
            let w2 = t.param_named("w2")?;
            let w3 = t.param_named("w3")?;
            let h = t.matmul(x, w1)?;
            let h = t.add(h, b1)?;
            let h = t.tanh(h);
            let h = t.matmul(h, w2)?;
            let h = t.sigmoid(h);
            let h = t.matmul(h, w3)?;
            let h = t.log_softmax(h);
            weighted_sum(t, h, seed)
        })
        .unwrap();
        assert!(r.max_rel_err < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn dropout_with_fixed_mask_is_deterministic() {
    let mut ps = ParamSet::new();
    ps.insert("x", Array::row(vec![0.5, -0.25, 1.0])).unwrap();
    let run = || {
        let mut t = Tape::new(&ps);
        let x = t.param_named("x").unwrap();
        let y = t.dropout(x, vec![1.25, 0.0, 1.25]).unwrap();
        t.value(y).clone()
    };
    assert_eq!(run(), run());
    assert_eq!(run().data(), &[0.625, 0.0, 1.25]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in proptest::collection::vec(-15.0f64..15.0, 1..12)) {
        let ps = ParamSet::new();
        let mut t = Tape::new(&ps);
        let n = v.len();
        let x = t.constant(Array::row(v));
        let y = t.softmax(x);
        let s: f64 = t.value(y).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        for &p in t.value(y).data() {
            prop_assert!(p > 0.0 && p < 1.0 || n == 1);
        }
    }

    #[test]
    fn clipping_preserves_direction(g in proptest::collection::vec(-10.0f64..10.0, 1..8), clip in 0.1f64..5.0) {
        let mut ps = ParamSet::new();
        let id = ps.insert("w", Array::zeros(&[1, g.len()])).unwrap();
        let mut grads = Gradients::new();
        grads.insert(id, Array::row(g.clone()));
        sgd_update(&mut ps, &grads, 1.0, 0.0, clip).unwrap();
        // w = -scale * g with scale >= 0
        let w = ps.value(id).data().to_vec();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > clip { clip / norm } else { 1.0 };
        for (wi, gi) in w.iter().zip(&g) {
            prop_assert!((wi + scale * gi).abs() < 1e-12);
        }
    }
}
