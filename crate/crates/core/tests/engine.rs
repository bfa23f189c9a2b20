use matting_core::seed::rng_from_seed;
use matting_core::tensor::{finite_diff_check, BackwardFault, Parameter, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()).unwrap()
}

fn random_f32(shape: &[usize], seed: u64) -> Tensor<f32> {
    random(shape, seed).cast()
}

/// Six nested loops, zero padding, cross-correlation.
fn naive_conv(
    x: &Tensor<f32>,
    w: &Tensor<f32>,
    b: &Tensor<f32>,
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, k, _] = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; n * cout * oh * ow];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co] as f64;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((i * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * k + ky) * k + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((i * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![n, cout, oh, ow], out)
}

#[test]
fn conv2d_matches_nested_loops() {
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let x = random_f32(&[1, 2, 5, 5], 11);
        let w = random_f32(&[3, 2, 3, 3], 12);
        let b = random_f32(&[3], 13);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
        let (shape, want) = naive_conv(&x, &w, &b, stride, pad);
        assert_eq!(tape.shape(y), shape.as_slice());
        for (got, want) in tape.value(y).data().iter().zip(&want) {
            assert!((*got as f64 - want).abs() < 1e-5, "stride {stride} pad {pad}: {got} vs {want}");
        }
    }
}

#[test]
fn upsample_matches_loop_reference() {
    let x = random(&[1, 1, 3, 3], 5);
    let g = random(&[1, 1, 6, 6], 6);
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = tape.upsample2x(xv).unwrap();
    let gv = tape.constant(g.clone());
    let prod = tape.mul(y, gv).unwrap();
    let root = tape.sum(prod);
    tape.backward(root).unwrap();
    let out = tape.value(y).data().to_vec();
    let grad = tape.grad(xv).unwrap();
    for yy in 0..6 {
        for xx in 0..6 {
            assert_eq!(out[yy * 6 + xx], x.data()[(yy / 2) * 3 + xx / 2]);
        }
    }
    for sy in 0..3 {
        for sx in 0..3 {
            let mut want = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    want += g.data()[(2 * sy + dy) * 6 + 2 * sx + dx];
                }
            }
            assert!((grad.data()[sy * 3 + sx] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn sigmoid_slope_at_zero_matches_central_difference() {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let numeric = (sig(1e-3) - sig(-1e-3)) / 2e-3;
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::scalar(0.0));
    let y = tape.sigmoid(x);
    let root = tape.sum(y);
    tape.backward(root).unwrap();
    let analytic = tape.grad(x).unwrap().data()[0];
    assert_eq!(analytic, 0.25);
    assert!((analytic - numeric).abs() < 1e-5);
}

#[test]
fn product_rule_by_finite_differences() {
    let a = random(&[2, 2], 1);
    let b = random(&[2, 2], 2);
    let params = vec![Parameter::new("a", a)];
    let b_for_f = b.clone();
    let report = finite_diff_check(
        move |tape, v| {
            let bv = tape.constant(b_for_f.clone());
            let p = tape.mul(v[0], bv)?;
            Ok(tape.sum(p))
        },
        &params,
        1e-3,
        1e-4,
    )
    .unwrap();
    assert!(report.passed());
    // d(Σ a·b)/da = b, entry by entry.
    let mut tape = Tape::new();
    let av = tape.param(params[0].tensor.clone());
    let bv = tape.constant(b.clone());
    let p = tape.mul(av, bv).unwrap();
    let root = tape.sum(p);
    tape.backward(root).unwrap();
    assert_eq!(tape.grad(av).unwrap().data(), b.data());
}

/// conv → relu → conv → sigmoid → weighted sum, with every other op folded in.
fn two_layer_net(tape: &mut Tape<f64>, v: &[matting_core::tensor::Var]) -> matting_core::Result<matting_core::tensor::Var> {
    let h = tape.conv2d(v[0], v[1], v[2], 1, 1)?;
    let h = tape.relu(h);
    let skip = tape.concat_channels(h, v[0])?;
    let h2 = tape.conv2d(skip, v[3], v[4], 2, 1)?;
    let up = tape.upsample2x(h2)?;
    let up = tape.crop(up, 6, 6)?;
    let blurred = tape.blur(up)?;
    let s = tape.sigmoid(blurred);
    let d = tape.downsample2(s)?;
    let a = tape.abs(d);
    let m = tape.mul(a, d)?;
    let diff = tape.sub(m, d)?;
    let sc = tape.scale(diff, 0.7);
    let added = tape.add(sc, d)?;
    Ok(tape.sum(added))
}

fn net_params(seed: u64) -> Vec<Parameter<f64>> {
    vec![
        Parameter::new("x", random(&[1, 2, 6, 6], seed)),
        Parameter::new("w1", random(&[3, 2, 3, 3], seed + 1)),
        Parameter::new("b1", random(&[3], seed + 2).map(|v| 0.1 * v + 0.05)),
        Parameter::new("w2", random(&[2, 5, 3, 3], seed + 3)),
        Parameter::new("b2", random(&[2], seed + 4)),
    ]
}

#[test]
fn composed_net_passes_gradient_check() {
    for seed in 0..5 {
        let report = finite_diff_check(two_layer_net, &net_params(seed * 10), 1e-6, 1e-3).unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn corrupted_backward_fails_the_check() {
    let report = finite_diff_check(
        |tape, v| {
            tape.inject_fault(BackwardFault::ConvWeight);
            two_layer_net(tape, v)
        },
        &net_params(0),
        1e-6,
        1e-3,
    )
    .unwrap();
    assert!(!report.passed());
    let w1 = report.params.iter().find(|p| p.name == "w1").unwrap();
    assert!(w1.max_rel_err > 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identity_kernel_is_exact(seed in any::<u64>(), c in 1usize..4, h in 1usize..7, w in 1usize..7, k in prop::sample::select(vec![1usize, 3, 5])) {
        let x = random_f32(&[2, c, h, w], seed);
        let mut weight = Tensor::<f32>::zeros(vec![c, c, k, k]);
        for ch in 0..c {
            weight.data_mut()[((ch * c + ch) * k + k / 2) * k + k / 2] = 1.0;
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(weight);
        let bv = tape.constant(Tensor::zeros(vec![c]));
        let y = tape.conv2d(xv, wv, bv, 1, k / 2).unwrap();
        prop_assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn shared_input_gradient_is_sum_of_paths(seed in any::<u64>()) {
        let x = random(&[1, 1, 4, 4], seed);
        let g1 = random(&[1, 1, 4, 4], seed ^ 1);
        let g2 = random(&[1, 1, 4, 4], seed ^ 2);
        let grad_of = |paths: &[&Tensor<f64>]| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let mut total = None;
            for g in paths {
                let gv = tape.constant((*g).clone());
                let s = tape.sigmoid(xv);
                let p = tape.mul(s, gv).unwrap();
                let term = tape.sum(p);
                total = Some(match total { None => term, Some(t) => tape.add(t, term).unwrap() });
            }
            tape.backward(total.unwrap()).unwrap();
            tape.grad(xv).unwrap()
        };
        let both = grad_of(&[&g1, &g2]);
        let a = grad_of(&[&g1]);
        let b = grad_of(&[&g2]);
        for i in 0..16 {
            prop_assert!((both.data()[i] - (a.data()[i] + b.data()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable(seed in any::<u64>()) {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(random_f32(&[2, 3, 8, 8], seed));
            let w = tape.constant(random_f32(&[4, 3, 3, 3], seed ^ 7));
            let b = tape.constant(random_f32(&[4], seed ^ 9));
            let y = tape.conv2d(x, w, b, 2, 1).unwrap();
            let y = tape.blur(y).unwrap();
            let s = tape.sum(y);
            (tape.value(y).clone(), tape.value(s).data()[0].to_bits())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn elementwise_ops_match_finite_differences(seed in any::<u64>(), op in 0usize..4) {
        let params = vec![
            Parameter::new("a", random(&[1, 2, 3, 3], seed)),
            Parameter::new("b", random(&[1, 2, 3, 3], seed ^ 3)),
        ];
        let report = finite_diff_check(
            move |tape, v| {
                let y = match op {
                    0 => tape.add(v[0], v[1])?,
                    1 => tape.sub(v[0], v[1])?,
                    2 => tape.mul(v[0], v[1])?,
                    _ => tape.concat_channels(v[0], v[1])?,
                };
                let s = tape.sigmoid(y);
                Ok(tape.sum(s))
            },
            &params,
            1e-3,
            1e-3,
        ).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
    }
}
