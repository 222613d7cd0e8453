//! Pixel-domain visual information fidelity over four scales.

use crate::error::{Error, Result};
use crate::raster::Image;

pub const SCALES: usize = 4;
pub const NOISE_VAR: f64 = 2.0;
const TINY: f64 = 1e-10;

/// Window side at a one-based scale: 17, 9, 5, 3.
pub fn window_side(scale: usize) -> usize {
    (1 << (SCALES + 1 - scale)) + 1
}

fn taps(n: usize) -> Vec<f64> {
    let sd = n as f64 / 5.0;
    let c = (n / 2) as f64;
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sd * sd)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid separable filtering of a row-major `h x w` buffer.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g
                .iter()
                .zip(&src[y * w + x..y * w + x + k])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(t, gt)| gt * rows[(y + t) * ow + x])
                .sum();
        }
    }
    (out, oh, ow)
}

fn downsample(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(oh * ow);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(src[y * w + x]);
        }
    }
    (out, oh, ow)
}

/// Spatial size of the statistics grid at each scale, or `None` if it vanishes.
fn grid_sizes(h: usize, w: usize) -> Option<Vec<(usize, usize)>> {
    let (mut h, mut w) = (h, w);
    let mut out = Vec::new();
    for s in 1..=SCALES {
        let n = window_side(s);
        if s > 1 {
            if h < n || w < n {
                return None;
            }
            h = (h + 1 - n).div_ceil(2);
            w = (w + 1 - n).div_ceil(2);
        }
        if h < n || w < n {
            return None;
        }
        out.push((h + 1 - n, w + 1 - n));
    }
    Some(out)
}

/// Smallest square side for which every scale keeps at least one window.
pub fn min_side() -> usize {
    (1..).find(|&s| grid_sizes(s, s).is_some()).expect("finite")
}

/// Fidelity of `dist` with respect to `reference`, both on the 0-255 scale.
pub fn vif_single(reference: &Image, dist: &Image) -> Result<f64> {
    reference.expect_same_shape(dist)?;
    let (h0, w0) = reference.shape();
    if grid_sizes(h0, w0).is_none() {
        let m = min_side();
        return Err(Error::invalid(format!(
            "vif needs at least {m}x{m} pixels, got {h0}x{w0}"
        )));
    }
    let mut r: Vec<f64> = reference.data().iter().map(|v| v * 255.0).collect();
    let mut d: Vec<f64> = dist.data().iter().map(|v| v * 255.0).collect();
    let (mut h, mut w) = (h0, w0);
    let (mut num, mut den) = (0.0, 0.0);
    for s in 1..=SCALES {
        let g = taps(window_side(s));
        if s > 1 {
            let (rf, fh, fw) = filter_valid(&r, h, w, &g);
            let (df, _, _) = filter_valid(&d, h, w, &g);
            let (rd, nh, nw) = downsample(&rf, fh, fw);
            let (dd, _, _) = downsample(&df, fh, fw);
            r = rd;
            d = dd;
            h = nh;
            w = nw;
        }
        let (mu1, _, _) = filter_valid(&r, h, w, &g);
        let (mu2, _, _) = filter_valid(&d, h, w, &g);
        let (e11, _, _) = filter_valid(&r.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, &g);
        let (e22, _, _) = filter_valid(&d.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, &g);
        let (e12, _, _) = filter_valid(
            &r.iter().zip(&d).map(|(a, b)| a * b).collect::<Vec<_>>(),
            h,
            w,
            &g,
        );
        for i in 0..mu1.len() {
            let s1 = (e11[i] - mu1[i] * mu1[i]).max(0.0);
            let s2 = (e22[i] - mu2[i] * mu2[i]).max(0.0);
            let s12 = e12[i] - mu1[i] * mu2[i];
            let (gain, sv) = local_gain(s1, s2, s12);
            let s1 = if s1 < TINY { 0.0 } else { s1 };
            num += (1.0 + gain * gain * s1 / (sv + NOISE_VAR)).log10();
            den += (1.0 + s1 / NOISE_VAR).log10();
        }
    }
    // a flat reference carries no information to lose
    Ok(if den == 0.0 { 1.0 } else { num / den })
}

/// Gain and residual variance of the local channel model, with the usual guards.
fn local_gain(s1: f64, s2: f64, s12: f64) -> (f64, f64) {
    let mut g = s12 / (s1 + TINY);
    let mut sv = s2 - g * s12;
    if s1 < TINY {
        g = 0.0;
        sv = s2;
    }
    if s2 < TINY {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = s2;
        g = 0.0;
    }
    (g, sv.max(TINY))
}

/// Mean of the fidelities of `fused` to each source.
pub fn vif(fused: &Image, ir: &Image, vis: &Image) -> Result<f64> {
    Ok(0.5 * (vif_single(ir, fused)? + vif_single(vis, fused)?))
}
