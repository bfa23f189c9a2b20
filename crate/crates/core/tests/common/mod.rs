//! Naive metric references shared by the metric tests and the acceptance run.
#![allow(dead_code)]

use matting_core::grid::PixelGrid;
use matting_core::seed::rng_from_seed;
use rand::Rng;

pub fn random_grid(h: usize, w: usize, seed: u64) -> PixelGrid {
    let mut rng = rng_from_seed(seed);
    // Mix of hard and soft values so the connectivity sets are non-trivial.
    PixelGrid::from_fn(h, w, 1, |_, _, _| match rng.gen_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.0..1.0),
    })
}

pub fn random_mask(h: usize, w: usize, seed: u64) -> PixelGrid {
    let mut rng = rng_from_seed(seed);
    PixelGrid::from_fn(h, w, 1, |_, _, _| if rng.gen_bool(0.6) { 1.0 } else { 0.0 })
}

pub fn oracle_sad(p: &[f32], g: &[f32], m: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if m[i] > 0.5 {
            s += (p[i] as f64 - g[i] as f64).abs();
        }
    }
    s / 1000.0
}

pub fn oracle_mse(p: &[f32], g: &[f32], m: &[f32]) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..p.len() {
        if m[i] > 0.5 {
            s += (p[i] as f64 - g[i] as f64).powi(2);
            n += 1.0;
        }
    }
    if n == 0.0 {
        0.0
    } else {
        1000.0 * s / n
    }
}

/// Dense 11×11 kernel `g(dy)·g'(dx)` normalised by its own L2 norm.
fn dense_kernel() -> Vec<Vec<f64>> {
    let sigma: f64 = 1.4;
    let g = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp();
    let mut k = vec![vec![0.0; 11]; 11];
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = g(y) * (-x * g(x));
        }
    }
    let norm = k.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    k.iter().map(|r| r.iter().map(|v| v / norm).collect()).collect()
}

fn dense_grad_magnitude(img: &[f32], h: usize, w: usize) -> Vec<f64> {
    let k = dense_kernel();
    let at = |y: isize, x: isize| {
        img[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize] as f64
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..11isize {
                for j in 0..11isize {
                    gx += k[i as usize][j as usize] * at(y + i - 5, x + j - 5);
                    gy += k[j as usize][i as usize] * at(y + i - 5, x + j - 5);
                }
            }
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn oracle_grad(p: &[f32], g: &[f32], m: &[f32], h: usize, w: usize) -> f64 {
    let (gp, gg) = (dense_grad_magnitude(p, h, w), dense_grad_magnitude(g, h, w));
    (0..h * w).filter(|&i| m[i] > 0.5).map(|i| (gp[i] - gg[i]).powi(2)).sum::<f64>() / 1000.0
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Largest 4-connected component by union-find; ties go to the earliest pixel in raster order.
fn union_find_largest(set: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !set[i] {
                continue;
            }
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                if set[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut size = vec![0usize; h * w];
    let roots: Vec<usize> = (0..h * w).map(|i| find(&mut parent, i)).collect();
    for i in 0..h * w {
        if set[i] {
            size[roots[i]] += 1;
        }
    }
    // Roots are the minimum index of their component, so the first maximum wins ties.
    let best = (0..h * w).filter(|&i| size[i] > 0).fold(None, |b: Option<usize>, i| match b {
        Some(b) if size[b] >= size[i] => Some(b),
        _ => Some(i),
    });
    (0..h * w).map(|i| set[i] && Some(roots[i]) == best).collect()
}

pub fn oracle_conn(p: &[f32], g: &[f32], m: &[f32], h: usize, w: usize) -> f64 {
    let omegas: Vec<Vec<bool>> = (1..=10)
        .map(|k| {
            let t = k as f64 * 0.1;
            let set: Vec<bool> = (0..h * w).map(|i| p[i] as f64 >= t && g[i] as f64 >= t).collect();
            union_find_largest(&set, h, w)
        })
        .collect();
    let phi = |x: f32, l: f64| {
        let d = x as f64 - l;
        if d >= 0.15 {
            1.0 - d
        } else {
            1.0
        }
    };
    let mut s = 0.0;
    for i in 0..h * w {
        if m[i] <= 0.5 {
            continue;
        }
        // Last threshold before the pixel first leaves the largest component.
        let l = match (0..10).find(|&k| !omegas[k][i]) {
            Some(k) => k as f64 * 0.1,
            None => 1.0,
        };
        s += (phi(p[i], l) - phi(g[i], l)).abs();
    }
    s / 1000.0
}
