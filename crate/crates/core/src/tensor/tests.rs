use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0, 7.0]);

    let z = tape.constant(Tensor::zeros(&[2, 3]));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let any = tape.constant(randn(&mut rng, &[3, 4]));
    let out = tape.matmul(z, any).unwrap();
    assert_eq!(tape.value(out), &Tensor::zeros(&[2, 4]));
    assert_eq!(tape.macs(), 2 * 2 + 2 * 3 * 4);

    let bad = tape.matmul(a, any).unwrap_err();
    assert!(matches!(bad, Error::Shape { .. }));
    let msg = bad.to_string();
    assert!(msg.contains("[2, 2]") && msg.contains("[3, 4]"), "{msg}");
}

#[test]
fn softmax_symmetry_and_shift_invariance() {
    let y = softmax(&Tensor::vector(vec![0.0; 3]), 0).unwrap();
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&mut rng, &[4, 5]);
    let shifted = x.map(|v| v + 123.456);
    let a = softmax(&x, 1).unwrap();
    let b = softmax(&shifted, 1).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
    assert!(softmax(&x, 2).is_err());
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::from_rows(&[vec![2.0, 1.0, 0.0]]).unwrap());
    let ce = tape.cross_entropy(l, &[0]).unwrap();
    // ln(1 + e^-1 + e^-2)
    let want = (1.0 + (-1f64).exp() + (-2f64).exp()).ln();
    assert!((tape.value(ce).item() - want).abs() < 1e-14);
    assert!((want - 0.407_605_96).abs() < 1e-8);

    let uniform = tape.constant(Tensor::zeros(&[3, 5]));
    let ce = tape.cross_entropy(uniform, &[0, 3, 4]).unwrap();
    assert!((tape.value(ce).item() - 5f64.ln()).abs() < 1e-14);

    let sharp = tape.constant(Tensor::from_rows(&[vec![20.0, 0.0, 0.0]]).unwrap());
    let ce = tape.cross_entropy(sharp, &[0]).unwrap();
    assert!(tape.value(ce).item() <= 1e-6);

    let err = tape.cross_entropy(l, &[3]).unwrap_err();
    assert!(matches!(err, Error::Index { .. }));
}

#[test]
fn backward_analytic_cases() {
    let mut set = ParamSet::new(0);
    let id = set.add("x", Tensor::full(&[2, 3], 0.7));
    let mut tape = Tape::new();
    let x = tape.param(&set, id);
    let s = tape.sum(x);
    tape.backward(s, &mut set).unwrap();
    assert_eq!(set.get(id).grad, Tensor::ones(&[2, 3]));

    let mut set = ParamSet::new(0);
    let id = set.add("x", Tensor::scalar(3.0));
    let mut tape = Tape::new();
    let x = tape.param(&set, id);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss, &mut set).unwrap();
    assert_eq!(set.get(id).grad.item(), 6.0);

    // a second call without zero_grad sums
    tape.backward(loss, &mut set).unwrap();
    assert_eq!(set.get(id).grad.item(), 12.0);
    set.zero_grad();
    assert_eq!(set.get(id).grad.item(), 0.0);
    tape.backward(loss, &mut set).unwrap();
    assert_eq!(set.get(id).grad.item(), 6.0);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::zeros(&[2, 2]));
    let y = tape.relu(x);
    assert!(matches!(tape.gradients(y), Err(Error::Contract(_))));
}

#[test]
fn zero_grad_then_backward_matches_fresh_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut set = ParamSet::new(0);
    let w = set.add("w", randn(&mut rng, &[3, 2]));
    let input = randn(&mut rng, &[4, 3]);
    let run = |set: &mut ParamSet| {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let wv = tape.param(set, w);
        let y = tape.matmul(x, wv).unwrap();
        let y = tape.tanh(y);
        let loss = tape.sum(y);
        tape.backward(loss, set).unwrap();
    };
    run(&mut set);
    run(&mut set);
    set.zero_grad();
    run(&mut set);
    let mut fresh = set.clone();
    fresh.zero_grad();
    run(&mut fresh);
    assert_eq!(set.get(w).grad, fresh.get(w).grad);
}

#[test]
fn grad_check_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[3, 4]);
    let err = grad_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "{err}");

    let err = grad_check(
        |t, _x| Ok(t.constant(Tensor::scalar(4.2))),
        &x,
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

/// Every tracked primitive against central differences.
#[test]
fn primitive_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let tol = 1e-6;
    for _ in 0..3 {
        let w = randn(&mut rng, &[4, 3]);
        let w2 = randn(&mut rng, &[3, 4]);
        let bias = randn(&mut rng, &[4]);
        let cw = randn(&mut rng, &[3, 2, 3]);
        let ctw = randn(&mut rng, &[2, 3, 4]);
        let cb = randn(&mut rng, &[3]);
        let wsum = randn(&mut rng, &[3, 4]);
        let x = randn(&mut rng, &[3, 4]);
        let xc = randn(&mut rng, &[2, 9]);
        let weighted = move |t: &mut Tape, y: Var| -> Result<Var, Error> {
            let shape = t.shape(y).to_vec();
            let n: usize = shape.iter().product();
            let ws = Tensor::new(shape, wsum.data().iter().cycle().take(n).copied().collect())?;
            let c = t.constant(ws);
            let p = t.mul(y, c)?;
            Ok(t.sum(p))
        };

        type Case<'a> = (&'a str, Tensor, Box<dyn Fn(&mut Tape, Var) -> Result<Var, Error> + 'a>);
        let cases: Vec<Case> = vec![
            ("matmul", x.clone(), Box::new(|t, v| { let c = t.constant(w.clone()); let y = t.matmul(v, c)?; weighted(t, y) })),
            ("matmul_rhs", x.clone(), Box::new(|t, v| { let c = t.constant(w.clone()); let y = t.matmul(c, v)?; weighted(t, y) })),
            ("add", x.clone(), Box::new(|t, v| { let c = t.constant(w2.clone()); let y = t.add(v, c)?; let y = t.mul(y, y)?; weighted(t, y) })),
            ("add_bias", x.clone(), Box::new(|t, v| { let b = t.constant(bias.clone()); let y = t.add_bias(v, b)?; let y = t.mul(y, y)?; weighted(t, y) })),
            ("mul", x.clone(), Box::new(|t, v| { let y = t.mul(v, v)?; weighted(t, y) })),
            ("scale_rows", x.clone(), Box::new(|t, v| { let s = t.narrow(v, 1, 0, 1)?; let s = t.reshape(s, &[3])?; let y = t.scale_rows(v, s)?; weighted(t, y) })),
            ("scale", x.clone(), Box::new(|t, v| { let y = t.scale(v, -2.5); let y = t.mul(y, v)?; weighted(t, y) })),
            ("div_scalar", x.clone(), Box::new(|t, v| { let y = t.div_scalar(v, 0.3); let y = t.mul(y, v)?; weighted(t, y) })),
            ("relu", x.clone(), Box::new(|t, v| { let y = t.relu(v); weighted(t, y) })),
            ("sigmoid", x.clone(), Box::new(|t, v| { let y = t.sigmoid(v); weighted(t, y) })),
            ("tanh", x.clone(), Box::new(|t, v| { let y = t.tanh(v); weighted(t, y) })),
            ("ln", x.map(|v| v.abs() + 0.5), Box::new(|t, v| { let y = t.ln(v)?; weighted(t, y) })),
            ("softmax0", x.clone(), Box::new(|t, v| { let y = t.softmax(v, 0)?; weighted(t, y) })),
            ("softmax1", x.clone(), Box::new(|t, v| { let y = t.softmax(v, 1)?; weighted(t, y) })),
            ("layer_norm", x.clone(), Box::new(|t, v| { let g = t.constant(bias.clone()); let b = t.constant(bias.map(|q| q * 0.3)); let y = t.layer_norm(v, g, b, 1e-5)?; weighted(t, y) })),
            ("conv1d", xc.clone(), Box::new(|t, v| { let cwv = t.constant(cw.clone()); let cbv = t.constant(cb.clone()); let y = t.conv1d(v, cwv, cbv, 2, 1)?; weighted(t, y) })),
            ("conv_transpose1d", xc.clone(), Box::new(|t, v| { let cwv = t.constant(ctw.clone()); let cbv = t.constant(cb.clone()); let y = t.conv_transpose1d(v, cwv, cbv, 2, 1)?; weighted(t, y) })),
            ("mean0", x.clone(), Box::new(|t, v| { let y = t.mean_axis(v, 0)?; let y = t.mul(y, y)?; weighted(t, y) })),
            ("mean1", x.clone(), Box::new(|t, v| { let y = t.mean_axis(v, 1)?; let y = t.mul(y, y)?; weighted(t, y) })),
            ("max1", x.clone(), Box::new(|t, v| { let y = t.max_axis(v, 1)?; weighted(t, y) })),
            ("concat", x.clone(), Box::new(|t, v| { let c = t.constant(w2.clone()); let y = t.concat(&[v, c, v], 1)?; let y = t.mul(y, y)?; weighted(t, y) })),
            ("narrow", x.clone(), Box::new(|t, v| { let y = t.narrow(v, 1, 1, 2)?; let y = t.mul(y, y)?; weighted(t, y) })),
            ("transpose", x.clone(), Box::new(|t, v| { let y = t.transpose(v)?; let c = t.constant(w2.clone()); let y = t.matmul(c, y)?; weighted(t, y) })),
            ("embedding", x.clone(), Box::new(|t, v| { let y = t.embedding(v, 2)?; let y = t.mul(y, y)?; weighted(t, y) })),
            ("cross_entropy", x.clone(), Box::new(|t, v| t.cross_entropy(v, &[1, 0, 3]))),
            ("bce", x.clone(), Box::new(|t, v| t.bce_with_logits(v, &[1.0, 0.0, 1.0, 0.0, 0.5, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0]))),
        ];
        for (name, input, f) in cases {
            let err = grad_check(|t, v| f(t, v), &input, h).unwrap();
            assert!(err <= tol, "{name}: {err}");
        }
    }
}

#[test]
fn conv1d_hand_case() {
    // single channel, kernel [1, 2, 3], no padding, stride 1
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let w = tape.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.5]));
    let y = tape.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[14.5, 20.5, 26.5]);
    assert_eq!(tape.macs(), 9);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> with shared weights and zero bias
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (c_in, c_out, k, stride, pad, l) = (3, 4, 3, 2, 1, 11);
    let w = randn(&mut rng, &[c_out, c_in, k]);
    let x = randn(&mut rng, &[c_in, l]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let b0 = tape.constant(Tensor::zeros(&[c_out]));
    let cx = tape.conv1d(xv, wv, b0, stride, pad).unwrap();
    let l_out = tape.shape(cx)[1];
    let y = randn(&mut rng, &[c_out, l_out]);
    let lhs: f64 = tape.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();

    // conv_transpose weight layout is [C_in', C_out', K] with C_in' = c_out here
    let yv = tape.constant(y);
    let bi = tape.constant(Tensor::zeros(&[c_in]));
    let mut wt = vec![0.0; c_out * c_in * k];
    for o in 0..c_out {
        for i in 0..c_in {
            for kk in 0..k {
                wt[(o * c_in + i) * k + kk] = w.data()[(o * c_in + i) * k + kk];
            }
        }
    }
    let wtv = tape.constant(Tensor::new(vec![c_out, c_in, k], wt).unwrap());
    let ty = tape.conv_transpose1d(yv, wtv, bi, stride, pad).unwrap();
    let ty_v = tape.value(ty);
    // transposed output may be shorter than l when the last input sample is
    // never touched by a stride; compare over the overlap
    let lt = ty_v.shape()[1];
    let mut rhs = 0.0;
    for i in 0..c_in {
        for p in 0..l.min(lt) {
            rhs += x.data()[i * l + p] * ty_v.data()[i * lt + p];
        }
    }
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn conv_rejects_too_short_input() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 5]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert!(tape.conv1d(x, w, b, 1, 0).is_err());
}

#[test]
fn adam_examples() {
    let mut set = ParamSet::new(0);
    let id = set.add("p", Tensor::scalar(1.0));
    let mut adam = Adam::with_defaults(&set, 0.1);
    set.get_mut(id).grad = Tensor::scalar(1.0);
    adam.step(&mut set).unwrap();
    // hand oracle: step = 0.1 * sqrt(1 - 0.999) / (1 - 0.9) * 0.1 / (sqrt(0.001) + 1e-8)
    let folded = 0.1 * (1.0f64 - 0.999).sqrt() / (1.0 - 0.9);
    let want = 1.0 - folded * 0.1 / (0.001f64.sqrt() + 1e-8);
    let got = set.value(id).item();
    assert!((got - want).abs() < 1e-15);
    assert!((got - 0.900_000_031_6).abs() < 1e-10, "{got}");
    assert_eq!(adam.states()[0].step_count, 1);

    // zero gradient leaves parameters and moments at zero
    let mut set = ParamSet::new(0);
    let id = set.add("p", Tensor::full(&[3], 0.25));
    let mut adam = Adam::with_defaults(&set, 0.1);
    adam.step(&mut set).unwrap();
    assert_eq!(set.value(id), &Tensor::full(&[3], 0.25));
    assert_eq!(adam.states()[0].m, Tensor::zeros(&[3]));
    assert_eq!(adam.states()[0].v, Tensor::zeros(&[3]));

    // identical params with identical grads move identically
    let mut set = ParamSet::new(0);
    let a = set.add("a", Tensor::full(&[2], 0.3));
    let b = set.add("b", Tensor::full(&[2], 0.3));
    let mut adam = Adam::with_defaults(&set, 0.01);
    for _ in 0..5 {
        set.get_mut(a).grad = Tensor::vector(vec![0.2, -1.0]);
        set.get_mut(b).grad = Tensor::vector(vec![0.2, -1.0]);
        adam.step(&mut set).unwrap();
    }
    assert_eq!(set.value(a), set.value(b));
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut set = ParamSet::new(0);
    let id = set.add("p", Tensor::scalar(1.0));
    let mut adam = Adam::with_defaults(&set, 0.1);
    set.get_mut(id).grad = Tensor::scalar(f64::NAN);
    let err = adam.step(&mut set).unwrap_err();
    assert!(err.to_string().contains("p"));
    assert_eq!(set.value(id).item(), 1.0);
    assert_eq!(adam.states()[0].step_count, 0);
}

#[test]
fn frozen_group_receives_no_gradient() {
    let mut gen = ParamSet::new(0);
    let mut disc = ParamSet::new(1);
    let g = gen.add("g", Tensor::scalar(2.0));
    let d = disc.add("d", Tensor::scalar(3.0));
    let mut tape = Tape::new().freeze_group(1);
    let gv = tape.param(&gen, g);
    let dv = tape.param(&disc, d);
    let y = tape.mul(gv, dv).unwrap();
    let grads = tape.gradients(y).unwrap();
    assert!(grads.touches_group(0));
    assert!(!grads.touches_group(1));
}
