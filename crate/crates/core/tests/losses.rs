use matting_core::data_io::{procedural_texture, TextureKind};
use matting_core::losses::{
    composition_loss, laplacian_loss, laplacian_pyramid, masked_l1, reconstruct_pyramid, total_loss, LossTargets,
    LossWeights,
};
use matting_core::seed::rng_from_seed;
use matting_core::synth::{make_pretrain_sample, AugmentConfig, CompositeSample, SampleConfig, Trimap, TrimapRatios};
use matting_core::tensor::{finite_diff_check, Parameter, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn plane(h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64_slice(vec![1, 1, h, w], v).unwrap()
}

fn sample(size: usize, seed: u64) -> CompositeSample {
    let mut rng = rng_from_seed(seed);
    let fg = procedural_texture(TextureKind::random(&mut rng), size + 8, &mut rng).unwrap();
    let bg = procedural_texture(TextureKind::random(&mut rng), size + 8, &mut rng).unwrap();
    let cfg = SampleConfig {
        grid: 4,
        ratios: TrimapRatios::default(),
        augment: AugmentConfig::identity(size),
        strategy: Default::default(),
    };
    make_pretrain_sample(&fg, &bg, &cfg, seed).unwrap()
}

fn random_alpha(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Dense 5×5 binomial kernel with clamped borders.
fn naive_blur(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = [1.0, 4.0, 6.0, 4.0, 1.0];
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for ky in 0..5 {
                for kx in 0..5 {
                    let sy = (y as isize + ky as isize - 2).clamp(0, h as isize - 1) as usize;
                    let sx = (xx as isize + kx as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += taps[ky] * taps[kx] / 256.0 * x[sy * w + sx];
                }
            }
            out[y * w + xx] = acc;
        }
    }
    out
}

fn naive_expand(g: &[f64], gh: usize, gw: usize, h: usize, w: usize) -> Vec<f64> {
    let up: Vec<f64> = (0..2 * gh * 2 * gw)
        .map(|i| g[(i / (2 * gw)) / 2 * gw + (i % (2 * gw)) / 2])
        .collect();
    let blurred = naive_blur(&up, 2 * gh, 2 * gw);
    (0..h * w).map(|i| blurred[(i / w) * 2 * gw + i % w]).collect()
}

/// Σ_i 2^i · mean|band_i| computed on plain vectors.
fn naive_pyramid_loss(diff: &[f64], h: usize, w: usize, levels: usize) -> f64 {
    let (mut g, mut gh, mut gw) = (diff.to_vec(), h, w);
    let mut total = 0.0;
    for i in 0..levels {
        if i + 1 == levels {
            total += (1u64 << i) as f64 * g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64;
            break;
        }
        let blurred = naive_blur(&g, gh, gw);
        let (nh, nw) = (gh.div_ceil(2), gw.div_ceil(2));
        let next: Vec<f64> = (0..nh * nw).map(|j| blurred[2 * (j / nw) * gw + 2 * (j % nw)]).collect();
        let up = naive_expand(&next, nh, nw, gh, gw);
        let band: f64 = g.iter().zip(&up).map(|(a, b)| (a - b).abs()).sum();
        total += (1u64 << i) as f64 * band / (gh * gw) as f64;
        (g, gh, gw) = (next, nh, nw);
    }
    total
}

#[test]
fn l1_hand_case() {
    // 4 unknown pixels, each off by 0.1; known pixels carry a large error that must be ignored.
    let mut mask = vec![0.0; 16];
    let mut pred = vec![0.9; 16];
    for i in [1, 6, 11, 12] {
        mask[i] = 1.0;
        pred[i] = 0.4;
    }
    let mut tape = Tape::new();
    let p = tape.param(plane(4, 4, &pred));
    let loss = masked_l1(&mut tape, p, &plane(4, 4, &[0.3; 16]), &plane(4, 4, &mask)).unwrap();
    assert!((tape.value(loss.value).data()[0] - 0.1).abs() < 1e-6);
}

#[test]
fn composition_hand_case() {
    let rgb = |v: [f64; 3]| Tensor::from_f64_slice(vec![1, 3, 1, 1], &v).unwrap();
    let mut tape = Tape::new();
    let p = tape.param(plane(1, 1, &[0.3]));
    // 0.3·F + 0.7·B = (0.3, 0.7, 0.51); fused differs by 0.2 per channel.
    let loss = composition_loss(
        &mut tape,
        p,
        &rgb([1.0, 0.0, 1.0]),
        &rgb([0.0, 1.0, 0.3]),
        &rgb([0.5, 0.5, 0.71]),
        &plane(1, 1, &[1.0]),
    )
    .unwrap();
    assert!((tape.value(loss.value).data()[0] - 0.2).abs() < 1e-6);
}

#[test]
fn pyramid_reconstructs_input() {
    for seed in 0..5 {
        let x = plane(32, 32, &random_alpha(1024, seed));
        let back = reconstruct_pyramid(&laplacian_pyramid(&x, 5).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn pyramid_loss_matches_dense_reference() {
    for (h, w) in [(16, 16), (32, 32), (24, 20)] {
        let mut labels = vec![1u8; h * w];
        labels[0] = 0;
        labels[h * w - 1] = 2;
        let trimap = Trimap::new(h, w, labels).unwrap();
        let gt = random_alpha(h * w, 3);
        let mut gt_tensor = plane(h, w, &gt);
        gt_tensor.data_mut()[0] = 0.0;
        gt_tensor.data_mut()[h * w - 1] = 1.0;
        let pred = random_alpha(h * w, 4);
        // Known pixels take the ground truth, so their difference is zero.
        let diff: Vec<f64> = (0..h * w)
            .map(|i| if trimap.labels()[i] == 1 { pred[i] - gt_tensor.data()[i] } else { 0.0 })
            .collect();
        let want = naive_pyramid_loss(&diff, h, w, 5);
        let mut tape = Tape::new();
        let p = tape.param(plane(h, w, &pred));
        let v = laplacian_loss(&mut tape, p, &gt_tensor, &trimap, 5).unwrap();
        let got = tape.value(v).data()[0];
        assert!((got - want).abs() < 1e-6, "{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn total_loss_passes_finite_differences() {
    for seed in 0..3 {
        let s = sample(16, seed);
        let targets = LossTargets::<f64>::from_sample(&s);
        // Keep predictions away from |·| kinks: interior values well separated from the target.
        let pred: Vec<f64> = s
            .alpha
            .data()
            .iter()
            .zip(random_alpha(256, seed + 100))
            .map(|(&a, r)| if a < 0.5 { 0.7 + 0.2 * r } else { 0.1 + 0.2 * r })
            .collect();
        let params = vec![Parameter::new("pred", plane(16, 16, &pred))];
        let report = finite_diff_check(
            |tape, v| Ok(total_loss(tape, v[0], &targets, &LossWeights::default())?.0),
            &params,
            1e-6,
            1e-3,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn gradient_is_zero_on_known_pixels() {
    let s = sample(32, 9);
    let targets = LossTargets::<f64>::from_sample(&s);
    let mut tape = Tape::new();
    let p = tape.param(plane(32, 32, &random_alpha(1024, 1)));
    let (loss, _) = total_loss(&mut tape, p, &targets, &LossWeights::default()).unwrap();
    tape.backward(loss).unwrap();
    let grad = tape.grad(p).unwrap();
    let mut interior_nonzero = 0;
    for (l, g) in s.trimap.labels().iter().zip(grad.data()) {
        if *l == 1 {
            interior_nonzero += (*g != 0.0) as usize;
        } else {
            assert_eq!(*g, 0.0);
        }
    }
    assert!(interior_nonzero > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn perfect_prediction_has_zero_loss(seed in any::<u64>()) {
        let s = sample(16, seed);
        let targets = LossTargets::<f64>::from_sample(&s);
        let mut tape = Tape::new();
        let p = tape.param(targets.alpha.clone());
        let (_, b) = total_loss(&mut tape, p, &targets, &LossWeights::default()).unwrap();
        prop_assert!(b.l1 == 0.0 && b.lap == 0.0);
        // Fused is stored in f32, so recomposition from f64 may differ in the last bits.
        prop_assert!(b.comp < 1e-6);
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>()) {
        let s = sample(16, seed);
        let targets = LossTargets::<f64>::from_sample(&s);
        let mut tape = Tape::new();
        let p = tape.param(plane(16, 16, &random_alpha(256, seed)));
        let (_, b) = total_loss(&mut tape, p, &targets, &LossWeights::default()).unwrap();
        prop_assert!(b.l1 >= 0.0 && b.comp >= 0.0 && b.lap >= 0.0);
        prop_assert!((b.total - (b.l1 + b.comp + b.lap)).abs() < 1e-12);
    }
}
