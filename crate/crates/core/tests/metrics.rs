mod common;

use common::{oracle_conn, oracle_grad, oracle_mse, oracle_sad, random_grid, random_mask};
use matting_core::grid::PixelGrid;
use matting_core::metrics::{conn_error, evaluate, grad_error, mse, sad, CONN_STEP};
use matting_core::seed::rng_from_seed;
use matting_core::synth::{Label, Trimap};
use proptest::prelude::*;
use rand::Rng;

const N: usize = 16;

#[test]
fn metrics_match_reference_implementations() {
    for seed in 0..100u64 {
        let pred = random_grid(N, N, seed);
        let gt = random_grid(N, N, seed + 10_000);
        let mask = random_mask(N, N, seed + 20_000);
        let (p, g, m) = (pred.data(), gt.data(), mask.data());
        let close = |a: f64, b: f64, what: &str| assert!((a - b).abs() < 1e-6, "seed {seed} {what}: {a} vs {b}");
        close(sad(&pred, &gt, &mask).unwrap(), oracle_sad(p, g, m), "sad");
        close(mse(&pred, &gt, &mask).unwrap().0, oracle_mse(p, g, m), "mse");
        close(grad_error(&pred, &gt, &mask).unwrap(), oracle_grad(p, g, m, N, N), "grad");
        close(
            conn_error(&pred, &gt, &mask, CONN_STEP).unwrap(),
            oracle_conn(p, g, m, N, N),
            "conn",
        );
    }
}

#[test]
fn sad_and_mse_hand_values() {
    let gt = PixelGrid::zeros(25, 40, 1);
    let pred = PixelGrid::filled(25, 40, 1, 0.1);
    let mask = PixelGrid::filled(25, 40, 1, 1.0);
    assert!((sad(&pred, &gt, &mask).unwrap() - 0.1).abs() < 1e-6);
    assert!((mse(&pred, &gt, &mask).unwrap().0 - 10.0).abs() < 1e-4);
}

#[test]
fn conn_hand_case() {
    // Column 3 is a zero wall splitting the confident prediction into 24 + 32 pixels.
    let gt = PixelGrid::filled(8, 8, 1, 1.0);
    let pred = PixelGrid::from_fn(8, 8, 1, |_, x, _| if x == 3 { 0.0 } else { 0.95 });
    let mask = PixelGrid::filled(8, 8, 1, 1.0);
    // Left block: l = 0, |(1 − 0.95) − 0| each. Wall: l = 0, |1 − 0| each. Right block: no error.
    let want = (24.0 * (1.0 - 0.95f32 as f64) + 8.0) / 1000.0;
    let got = conn_error(&pred, &gt, &mask, CONN_STEP).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn padding_does_not_change_metrics() {
    for seed in 0..5 {
        let pred = random_grid(20, 27, seed);
        let gt = random_grid(20, 27, seed + 1);
        let mut rng = rng_from_seed(seed);
        let labels = (0..20 * 27).map(|_| rng.gen_range(0..3u8)).collect();
        let trimap = Trimap::new(20, 27, labels).unwrap();
        let padded = evaluate(&pred, &gt, &trimap, 32).unwrap();
        let plain = evaluate(&pred, &gt, &trimap, 1).unwrap();
        assert_eq!(padded, plain);
        assert_eq!(plain.unknown_pixel_count, trimap.count(Label::Unknown));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn perfect_prediction_scores_zero(seed in any::<u64>()) {
        let gt = random_grid(12, 12, seed);
        let mask = random_mask(12, 12, seed ^ 5);
        prop_assert_eq!(sad(&gt, &gt, &mask).unwrap(), 0.0);
        prop_assert_eq!(mse(&gt, &gt, &mask).unwrap().0, 0.0);
        prop_assert_eq!(grad_error(&gt, &gt, &mask).unwrap(), 0.0);
        prop_assert_eq!(conn_error(&gt, &gt, &mask, CONN_STEP).unwrap(), 0.0);
    }

    #[test]
    fn metrics_are_symmetric_and_nonnegative(seed in any::<u64>()) {
        let a = random_grid(12, 12, seed);
        let b = random_grid(12, 12, seed ^ 9);
        let mask = random_mask(12, 12, seed ^ 5);
        let ab = sad(&a, &b, &mask).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, sad(&b, &a, &mask).unwrap());
        prop_assert!(grad_error(&a, &b, &mask).unwrap() >= 0.0);
        prop_assert!(conn_error(&a, &b, &mask, CONN_STEP).unwrap() >= 0.0);
    }
}
