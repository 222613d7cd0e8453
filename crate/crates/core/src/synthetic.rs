//! Seeded synthetic infrared/visible scenes for tests, benches and demos.
//!
//! The infrared image is a dark, smooth background with a few bright targets;
//! the visible image of the same scene carries the texture and edges but shows
//! the targets at low contrast.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::Image;

struct Target {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    heat: f64,
}

struct Scene {
    targets: Vec<Target>,
    stripe_freq: f64,
    stripe_angle: f64,
    slab: (usize, usize, usize, usize),
    slab_value: f64,
    tilt: (f64, f64),
}

fn scene(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Scene {
    let count = rng.random_range(2..=4);
    let targets = (0..count)
        .map(|_| Target {
            cy: rng.random_range(0.15..0.85) * h as f64,
            cx: rng.random_range(0.15..0.85) * w as f64,
            ry: rng.random_range(0.06..0.16) * h as f64,
            rx: rng.random_range(0.04..0.12) * w as f64,
            heat: rng.random_range(0.75..1.0),
        })
        .collect();
    let (sh, sw) = (
        h / 3 + rng.random_range(0..=h / 4),
        w / 3 + rng.random_range(0..=w / 4),
    );
    Scene {
        targets,
        stripe_freq: rng.random_range(0.35..0.9),
        stripe_angle: rng.random_range(0.0..std::f64::consts::PI),
        slab: (
            rng.random_range(0..h - sh),
            rng.random_range(0..w - sw),
            sh,
            sw,
        ),
        slab_value: rng.random_range(0.55..0.8),
        tilt: (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
    }
}

fn target_mask(s: &Scene, y: f64, x: f64) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    for t in &s.targets {
        let d = ((y - t.cy) / t.ry).powi(2) + ((x - t.cx) / t.rx).powi(2);
        let m = (-d * d).exp();
        if m > best.0 {
            best = (m, t.heat);
        }
    }
    best
}

/// A high-contrast infrared/visible pair of the same synthetic scene.
pub fn ir_vis_pair(h: usize, w: usize, seed: u64) -> (Image, Image) {
    assert!(h >= 8 && w >= 8, "synthetic scenes need at least 8x8");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = scene(h, w, &mut rng);
    let noise_ir: Vec<f64> = (0..h * w).map(|_| rng.random_range(-0.02..0.02)).collect();
    let noise_vis: Vec<f64> = (0..h * w).map(|_| rng.random_range(-0.03..0.03)).collect();
    let (ca, sa) = (s.stripe_angle.cos(), s.stripe_angle.sin());
    let (t, l, sh, sw) = s.slab;
    let ir = Image::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let base = 0.12 + 0.08 * (yf / h as f64) + s.tilt.0 * 0.2 * (xf / w as f64);
        let (m, heat) = target_mask(&s, yf, xf);
        (base * (1.0 - m) + heat * m + noise_ir[y * w + x]).clamp(0.0, 1.0)
    });
    let vis = Image::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let u = xf * ca + yf * sa;
        let mut v = 0.45 + s.tilt.1 * (yf / h as f64 - 0.5) + 0.25 * (u * s.stripe_freq).sin();
        if (t..t + sh).contains(&y) && (l..l + sw).contains(&x) {
            v = s.slab_value + 0.15 * (((y / 3) + (x / 3)) % 2) as f64;
        }
        let (m, _) = target_mask(&s, yf, xf);
        (v * (1.0 - 0.6 * m) + 0.3 * 0.6 * m + noise_vis[y * w + x]).clamp(0.0, 1.0)
    });
    (ir, vis)
}

/// `count` training images alternating infrared and visible, e.g. for desk-scale runs.
pub fn training_corpus(count: usize, h: usize, w: usize, seed: u64) -> Vec<Image> {
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    while out.len() < count {
        let (ir, vis) = ir_vis_pair(h, w, seed.wrapping_mul(1_000_003).wrapping_add(k));
        out.push(ir);
        if out.len() < count {
            out.push(vis);
        }
        k += 1;
    }
    out
}

/// Uniform noise in [0, 1].
pub fn noise(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| rng.random())
}
