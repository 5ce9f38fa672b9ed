use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{grad_check, ParamStore};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> NdArray {
    let n = shape.iter().product();
    NdArray::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum so every output element carries a distinct gradient.
fn project(t: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, t.shape(y));
    let w = t.constant(w);
    let p = t.mul(y, w).unwrap();
    t.sum(p)
}

const TOL: f64 = 1e-3;

#[test]
fn conv1d_length_formula() {
    let mut t = Tape::new();
    let x = t.constant(NdArray::zeros(&[1, 8]));
    let w = t.constant(NdArray::zeros(&[1, 1, 4]));
    let y = t.conv1d(x, w, None, 4, 0, 1).unwrap();
    assert_eq!(t.shape(y), &[1, 2]);
}

#[test]
fn conv1d_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xv = random(&mut rng, &[1, 9]);
    let mut t = Tape::new();
    let x = t.constant(xv.clone());
    let w = t.constant(NdArray::new(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
    let y = t.conv1d(x, w, None, 1, 1, 1).unwrap();
    assert_eq!(t.value(y), &xv);
}

#[test]
fn conv1d_moving_average_on_ramp() {
    // direct summation: y[t] = (x[t] + x[t+1] + x[t+2]) / 3 with x = 0,1,..,5
    let ramp: Vec<f64> = (0..6).map(f64::from).collect();
    let expected: Vec<f64> = (0..4)
        .map(|t| (ramp[t] + ramp[t + 1] + ramp[t + 2]) / 3.0)
        .collect();
    let mut t = Tape::new();
    let x = t.constant(NdArray::new(&[1, 6], ramp).unwrap());
    let w = t.constant(NdArray::full(&[1, 1, 3], 1.0 / 3.0));
    let y = t.conv1d(x, w, None, 1, 0, 1).unwrap();
    for (a, b) in t.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(expected, vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn conv1d_nonpositive_length_errors() {
    let mut t = Tape::new();
    let x = t.constant(NdArray::zeros(&[1, 2]));
    let w = t.constant(NdArray::zeros(&[1, 1, 5]));
    assert!(matches!(
        t.conv1d(x, w, None, 1, 0, 1),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn conv_transpose_upsamples_exactly() {
    let mut t = Tape::new();
    let x = t.constant(NdArray::zeros(&[2, 5]));
    let w = t.constant(NdArray::zeros(&[2, 3, 8]));
    let y = t.conv_transpose1d(x, w, None, 4, 2).unwrap();
    assert_eq!(t.shape(y), &[3, 20]);
}

#[test]
fn softmax_xent_examples() {
    let uniform = NdArray::zeros(&[4]);
    assert!((softmax_xent(&uniform, 2).unwrap() - 4f64.ln()).abs() < 1e-12);

    let sharp = NdArray::new(&[2], vec![20.0, -20.0]).unwrap();
    assert!(softmax_xent(&sharp, 0).unwrap() < 1e-15);

    // -log(e^3 / (e^1 + e^2 + e^3))
    let l = NdArray::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    let direct = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
    assert!((softmax_xent(&l, 2).unwrap() - direct).abs() < 1e-12);
    assert!((direct - 0.407_605_964_444_380_1).abs() < 1e-12);

    assert!(matches!(softmax_xent(&l, 3), Err(Error::Index(_))));
}

#[test]
fn tape_cross_entropy_matches_standalone() {
    let mut t = Tape::new();
    let l = t.constant(NdArray::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let ce = t.cross_entropy(l, &[2]).unwrap();
    let direct = softmax_xent(&NdArray::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), 2).unwrap();
    assert!((t.scalar(ce) - direct).abs() < 1e-15);
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let mut t = Tape::new();
    let x = t.constant(NdArray::full(&[3, 7], 0.1));
    let y = t.layer_norm(x);
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn causal_softmax_rows_are_stochastic_and_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tape::new();
    let x = t.constant(random(&mut rng, &[5, 5]));
    let y = t.causal_softmax(x);
    let v = t.value(y);
    for i in 0..5 {
        let row = v.row(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row[i + 1..].iter().all(|&p| p == 0.0));
    }
}

#[test]
fn backward_requires_scalar() {
    let mut t = Tape::new();
    let x = t.input(NdArray::zeros(&[2]));
    assert!(t.gradients(x).is_err());
}

fn check(name: &str, shapes: &[&[usize]], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), random(&mut rng, s)))
        .collect();
    let err = grad_check(&mut store, 1e-5, |t, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
        let y = f(t, &vars);
        Ok(project(t, y, 99))
    })
    .unwrap();
    assert!(err < TOL, "{name}: relative error {err}");
}

#[test]
fn grad_matmul() {
    check("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn grad_elementwise() {
    check("add", &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1]).unwrap());
    check("sub", &[&[2, 3], &[2, 3]], |t, v| t.sub(v[0], v[1]).unwrap());
    check("mul", &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1]).unwrap());
    check("affine", &[&[5]], |t, v| t.affine(v[0], -1.5, 0.3));
    check("add_row", &[&[3, 4], &[4]], |t, v| t.add_row(v[0], v[1]).unwrap());
    check("mul_row", &[&[3, 4], &[4]], |t, v| t.mul_row(v[0], v[1]).unwrap());
}

#[test]
fn grad_activations() {
    check("gelu", &[&[4, 3]], |t, v| t.gelu(v[0]));
    check("relu", &[&[4, 3]], |t, v| t.relu(v[0]));
    check("leaky", &[&[4, 3]], |t, v| t.leaky_relu(v[0], 0.1));
    check("tanh", &[&[4, 3]], |t, v| t.tanh(v[0]));
    check("abs", &[&[4, 3]], |t, v| t.abs(v[0]));
    check("sqrt", &[&[6]], |t, v| {
        let s = t.square(v[0]);
        let s = t.affine(s, 1.0, 0.5);
        t.sqrt(s)
    });
    check("log", &[&[6]], |t, v| {
        let s = t.square(v[0]);
        let s = t.affine(s, 1.0, 0.2);
        t.log_clamp(s, 1e-5)
    });
}

#[test]
fn grad_conv1d() {
    check("conv1d", &[&[3, 11], &[4, 3, 3], &[4]], |t, v| {
        t.conv1d(v[0], v[1], Some(v[2]), 2, 1, 1).unwrap()
    });
    check("conv1d_dilated", &[&[2, 9], &[2, 2, 3], &[2]], |t, v| {
        t.conv1d(v[0], v[1], Some(v[2]), 1, 3, 3).unwrap()
    });
}

#[test]
fn grad_conv_transpose1d() {
    check("convT", &[&[3, 5], &[3, 2, 4], &[2]], |t, v| {
        t.conv_transpose1d(v[0], v[1], Some(v[2]), 2, 1).unwrap()
    });
}

#[test]
fn grad_layer_norm() {
    check("layer_norm", &[&[3, 6]], |t, v| t.layer_norm(v[0]));
}

#[test]
fn grad_softmax() {
    check("softmax", &[&[3, 5]], |t, v| t.softmax(v[0]));
    check("causal_softmax", &[&[4, 4]], |t, v| t.causal_softmax(v[0]));
}

#[test]
fn grad_embedding_and_selects() {
    check("gather", &[&[5, 3]], |t, v| t.gather(v[0], &[4, 0, 4, 2]).unwrap());
    check("index_select", &[&[2, 4]], |t, v| {
        t.index_select(v[0], vec![1, 0, 1, 7, 3, 3], &[2, 3]).unwrap()
    });
    check("concat_rows", &[&[2, 3], &[1, 3]], |t, v| t.concat_rows(&[v[0], v[1]]).unwrap());
    check("concat_cols", &[&[2, 3], &[2, 1]], |t, v| t.concat_cols(&[v[0], v[1]]).unwrap());
    check("slice_rows", &[&[4, 3]], |t, v| t.slice_rows(v[0], 1, 2).unwrap());
    check("slice_cols", &[&[4, 3]], |t, v| t.slice_cols(v[0], 1, 2).unwrap());
    check("transpose", &[&[2, 5]], |t, v| t.transpose(v[0]).unwrap());
    check("reshape", &[&[2, 6]], |t, v| t.reshape(v[0], &[3, 4]).unwrap());
}

#[test]
fn grad_reductions_and_losses() {
    check("mean", &[&[3, 3]], |t, v| t.mean(v[0]));
    check("xent", &[&[3, 5]], |t, v| t.cross_entropy(v[0], &[0, 4, 2]).unwrap());
    check("mse", &[&[3, 2], &[3, 2]], |t, v| t.mse(v[0], v[1]).unwrap());
    check("l1", &[&[3, 2], &[3, 2]], |t, v| t.l1(v[0], v[1]).unwrap());
}

#[test]
fn grad_attention_block() {
    use crate::numerics::layers::MultiHeadAttention;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    let attn = MultiHeadAttention::new(&mut store, "attn", 6, 2, 3, &mut rng);
    let x = store.add("x", random(&mut rng, &[4, 6]));
    let err = grad_check(&mut store, 1e-5, |t, s| {
        let xv = t.param(s, x);
        let y = attn.forward(t, s, xv, xv, true)?.out;
        let tgt = t.constant(NdArray::full(&[4, 6], 0.2));
        t.mse(y, tgt)
    })
    .unwrap();
    assert!(err < TOL, "attention relative error {err}");
}

#[test]
fn detach_blocks_gradient() {
    let mut store = ParamStore::new();
    let x = store.add("x", NdArray::full(&[2], 2.0));
    let mut t = Tape::new();
    let v = t.param(&store, x);
    let d = t.detach(v);
    let y = t.mul(v, d).unwrap();
    let y = t.sum(y);
    t.backward(y, &mut store).unwrap();
    // d/dx (x * stopgrad(x)) = stopgrad(x)
    assert_eq!(store.get(x).grad.data(), &[2.0, 2.0]);
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::new();
        let a = t.constant(random(&mut rng, &[7, 5]));
        let b = t.constant(random(&mut rng, &[5, 9]));
        let y = t.matmul(a, b).unwrap();
        let y = t.gelu(y);
        let y = t.layer_norm(y);
        t.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn windowed_dft_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, n) = (3, 12);
    let xv = random(&mut rng, &[rows, n]);
    let window: Vec<f64> = (0..n).map(|i| 0.3 + i as f64 / n as f64).collect();
    let mut t = Tape::new();
    let x = t.constant(xv.clone());
    let y = t.windowed_dft(x, &window).unwrap();
    let bins = n / 2 + 1;
    assert_eq!(t.shape(y), &[rows, 2 * bins]);
    for r in 0..rows {
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let ang = 2.0 * std::f64::consts::PI * (i * k) as f64 / n as f64;
                re += xv.get2(r, i) * window[i] * ang.cos();
                im -= xv.get2(r, i) * window[i] * ang.sin();
            }
            assert!((t.value(y).get2(r, k) - re).abs() < 1e-12);
            assert!((t.value(y).get2(r, bins + k) - im).abs() < 1e-12);
        }
    }
}

#[test]
fn grad_windowed_dft() {
    let window: Vec<f64> = (0..8).map(|i| 1.0 - i as f64 / 10.0).collect();
    check("dft_even", &[&[2, 8]], |t, v| t.windowed_dft(v[0], &window).unwrap());
    let odd: Vec<f64> = (0..7).map(|i| 0.5 + i as f64 / 7.0).collect();
    check("dft_odd", &[&[3, 7]], |t, v| t.windowed_dft(v[0], &odd).unwrap());
}
