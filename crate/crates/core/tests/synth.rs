use matting_core::data_io::{procedural_texture, TextureKind};
use matting_core::grid::PixelGrid;
use matting_core::seed::rng_from_seed;
use matting_core::synth::{
    augment, composite, finetune_trimap_with_radii, generate_pseudo_alpha, generate_trimap_block,
    generate_trimap_grid, make_pretrain_sample, AugmentConfig, FinetuneTrimapConfig, Label, SampleConfig,
    Strategy, Trimap, TrimapRatios,
};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;

fn source(seed: u64, size: usize) -> PixelGrid {
    let mut rng = rng_from_seed(seed);
    procedural_texture(TextureKind::random(&mut rng), size, &mut rng).unwrap()
}

fn config(size: usize, grid: usize, strategy: Strategy) -> SampleConfig {
    SampleConfig {
        grid,
        ratios: TrimapRatios::default(),
        augment: AugmentConfig {
            crop_size: size,
            ..AugmentConfig::default()
        },
        strategy,
    }
}

/// Each `grid × grid` cell carries one label.
fn is_grid_uniform(t: &Trimap, grid: usize) -> bool {
    (0..t.height()).all(|y| (0..t.width()).all(|x| t.label(y, x) == t.label(y / grid * grid, x / grid * grid)))
}

fn bbox(t: &Trimap, pred: impl Fn(u8) -> bool) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..t.height() {
        for x in 0..t.width() {
            if pred(t.label(y, x)) {
                b = Some(match b {
                    None => (y, x, y, x),
                    Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                });
            }
        }
    }
    b
}

/// Foreground fills its bounding box, and non-background fills its bounding box.
fn is_nested_rectangles(t: &Trimap) -> bool {
    let filled = |pred: &dyn Fn(u8) -> bool| match bbox(t, pred) {
        None => true,
        Some((y0, x0, y1, x1)) => (y0..=y1).all(|y| (x0..=x1).all(|x| pred(t.label(y, x)))),
    };
    filled(&|l| l == 2) && filled(&|l| l != 0)
}

/// Collapses a row into its run labels, e.g. `[0, 1, 2, 1, 0]`.
fn runs(t: &Trimap, y: usize) -> Vec<u8> {
    let mut out: Vec<u8> = Vec::new();
    for x in 0..t.width() {
        let l = t.label(y, x);
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

/// Row run sequence is a sub-pattern of 0…1…2…1…0 with symmetric nesting.
fn row_matches_block_pattern(r: &[u8]) -> bool {
    const PATTERN: [u8; 5] = [0, 1, 2, 1, 0];
    let mut i = 0;
    for &l in r {
        while i < PATTERN.len() && PATTERN[i] != l {
            i += 1;
        }
        if i == PATTERN.len() {
            return false;
        }
        i += 1;
    }
    true
}

#[test]
fn seed_controls_layout_but_not_counts() {
    let r = TrimapRatios::default();
    let a = generate_trimap_grid(224, 224, 7, r, &mut rng_from_seed(42)).unwrap();
    let b = generate_trimap_grid(224, 224, 7, r, &mut rng_from_seed(42)).unwrap();
    let c = generate_trimap_grid(224, 224, 7, r, &mut rng_from_seed(43)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.labels(), c.labels());
    assert_eq!(a.counts(), c.counts());
    assert_eq!(a.counts(), [128 * 49, 768 * 49, 128 * 49]);
}

#[test]
fn block_trimap_rows_follow_nested_pattern() {
    let t = generate_trimap_block(64, 64, &mut rng_from_seed(7)).unwrap();
    let mut saw_fg_row = false;
    for y in 0..64 {
        let r = runs(&t, y);
        assert!(row_matches_block_pattern(&r), "row {y}: {r:?}");
        saw_fg_row |= r.contains(&2);
    }
    assert!(saw_fg_row);
    assert!(is_nested_rectangles(&t));
    let [bg, unknown, fg] = t.counts();
    assert!(fg > 0 && unknown > 0);
    assert!(bg + unknown + fg == 64 * 64);
}

#[test]
fn pseudo_alpha_mean_is_half() {
    let t = Trimap::filled(1000, 1000, Label::Unknown);
    let a = generate_pseudo_alpha(&t, &mut rng_from_seed(2024));
    let mean = a.data().iter().map(|&v| v as f64).sum::<f64>() / 1e6;
    assert!((0.497..=0.503).contains(&mean), "{mean}");
}

#[test]
fn strategies_give_different_topologies() {
    let fg = source(1, 80);
    let bg = source(2, 80);
    for seed in 0..10 {
        let pixel = make_pretrain_sample(&fg, &bg, &config(64, 4, Strategy::Pixel), seed).unwrap();
        let block = make_pretrain_sample(&fg, &bg, &config(64, 4, Strategy::Block), seed).unwrap();
        assert!(is_grid_uniform(&pixel.trimap, 4));
        assert!(!is_nested_rectangles(&pixel.trimap), "seed {seed}");
        assert!(is_nested_rectangles(&block.trimap), "seed {seed}");
        assert_ne!(pixel.trimap, block.trimap);
    }
}

#[test]
fn distinct_seeds_give_distinct_fused_images() {
    let fg = source(1, 80);
    let bg = source(2, 80);
    let cfg = config(64, 4, Strategy::Pixel);
    for seed in 0..10u64 {
        let a = make_pretrain_sample(&fg, &bg, &cfg, seed).unwrap();
        let b = make_pretrain_sample(&fg, &bg, &cfg, seed + 1000).unwrap();
        let differing = (0..64 * 64)
            .filter(|&p| a.fused.data()[3 * p..3 * p + 3] != b.fused.data()[3 * p..3 * p + 3])
            .count();
        assert!(differing as f64 >= 0.01 * 4096.0, "{differing}");
    }
}

/// Erosion by a radius-1 disk is a 4-neighbourhood test; out-of-image counts as inside.
fn naive_ring(disk: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |y: isize, x: isize, want: bool| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            true
        } else {
            disk[y as usize * w + x as usize] == want
        }
    };
    let mut unknown = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let inside = disk[y as usize * w + x as usize];
            let survives = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .all(|(dy, dx)| at(y + dy, x + dx, inside));
            unknown[y as usize * w + x as usize] = !survives;
        }
    }
    unknown
}

#[test]
fn hard_disk_with_unit_radii_gives_thin_ring() {
    let (h, w, r) = (64usize, 64usize, 20.0f64);
    let alpha = PixelGrid::from_fn(h, w, 1, |y, x, _| {
        let d = ((y as f64 - 31.5).powi(2) + (x as f64 - 31.5).powi(2)).sqrt();
        if d <= r {
            1.0
        } else {
            0.0
        }
    });
    let t = finetune_trimap_with_radii(&alpha, &FinetuneTrimapConfig::default(), 1, 1).unwrap();
    let disk: Vec<bool> = alpha.data().iter().map(|&v| v == 1.0).collect();
    let want = naive_ring(&disk, h, w);
    let got: Vec<bool> = t.labels().iter().map(|&l| l == 1).collect();
    assert_eq!(got, want);
    let width = t.count(Label::Unknown) as f64 / (2.0 * std::f64::consts::PI * r);
    assert!((1.5..=2.5).contains(&width), "ring width {width}");
}

#[test]
fn full_turn_hue_is_identity() {
    let img = source(5, 32);
    let cfg = AugmentConfig {
        hue_shift: [1.0, 1.0],
        ..AugmentConfig::identity(32)
    };
    let out = augment(&img, &cfg, &mut rng_from_seed(0));
    for (a, b) in img.data().iter().zip(out.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

fn ratios_strategy() -> impl proptest::strategy::Strategy<Value = TrimapRatios> {
    (0u32..=16, 0u32..=16).prop_filter_map("sum ≤ 1", |(u, f)| {
        (u + f <= 16).then(|| TrimapRatios::new(u as f64 / 16.0, f as f64 / 16.0, (16 - u - f) as f64 / 16.0).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_quotas_are_exact(seed in any::<u64>(), cells_y in 1usize..12, cells_x in 1usize..12, grid in 1usize..6, r in ratios_strategy()) {
        let t = generate_trimap_grid(cells_y * grid, cells_x * grid, grid, r, &mut rng_from_seed(seed)).unwrap();
        let n = cells_y * cells_x;
        let (nu, nf, nb) = r.quotas(n);
        let cell = grid * grid;
        prop_assert_eq!(t.counts(), [nb * cell, nu * cell, nf * cell]);
        prop_assert!(is_grid_uniform(&t, grid));
        prop_assert_eq!(nu, (r.unknown * n as f64).round() as usize);
    }

    #[test]
    fn pseudo_alpha_respects_labels(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let t = generate_trimap_grid(28, 28, 7, TrimapRatios::default(), &mut rng).unwrap();
        let a = generate_pseudo_alpha(&t, &mut rng);
        for (l, v) in t.labels().iter().zip(a.data()) {
            match l {
                0 => prop_assert_eq!(*v, 0.0),
                2 => prop_assert_eq!(*v, 1.0),
                _ => {
                    let k = v * 255.0;
                    prop_assert!((k - k.round()).abs() < 1e-4 && (0.0..=255.0).contains(&k));
                }
            }
        }
    }

    #[test]
    fn sample_invariants_hold(seed in any::<u64>(), block in any::<bool>()) {
        let fg = source(seed, 40);
        let bg = source(seed ^ 1, 40);
        let strategy = if block { Strategy::Block } else { Strategy::Pixel };
        let cfg = config(32, 4, strategy);
        let s = make_pretrain_sample(&fg, &bg, &cfg, seed).unwrap();
        prop_assert_eq!(&composite(&s.foreground, &s.background, &s.alpha).unwrap(), &s.fused);
        for p in 0..32 * 32 {
            let a = s.alpha.data()[p];
            for c in 0..3 {
                let want = a * s.foreground.data()[3 * p + c] + (1.0 - a) * s.background.data()[3 * p + c];
                prop_assert_eq!(s.fused.data()[3 * p + c].to_bits(), want.to_bits());
            }
        }
        prop_assert_eq!(&make_pretrain_sample(&fg, &bg, &cfg, seed).unwrap(), &s);
    }

    #[test]
    fn unknown_count_is_monotone_in_theta(seed in any::<u64>(), a in 0u32..=8, b in 0u32..=8) {
        let (lo, hi) = (a.min(b) as f64 / 8.0, a.max(b) as f64 / 8.0);
        let count = |theta: f64| {
            let r = TrimapRatios::from_unknown(theta).unwrap();
            generate_trimap_grid(32, 32, 4, r, &mut rng_from_seed(seed)).unwrap().count(Label::Unknown)
        };
        prop_assert!(count(lo) <= count(hi));
    }

    #[test]
    fn augment_output_is_clipped_and_seeded(seed in any::<u64>()) {
        let img = source(seed, 24);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut rng_from_seed(seed));
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(a, augment(&img, &cfg, &mut rng_from_seed(seed)));
    }
}
