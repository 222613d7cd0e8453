//! Reconstruction loss: mean squared error plus a windowed SSIM term.

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensorcore::{Scalar, Tensor4};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_MU: f64 = 5.0;

/// Weights of the two loss terms: `total = l2_weight * l2 + mu * (1 - ssim) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l2_weight: f64,
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l2_weight: 1.0,
            mu: DEFAULT_MU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// Unweighted mean squared error.
    pub l2_part: f64,
    /// `(1 - ssim) / 2`
    pub ssim_part: f64,
    pub mu: f64,
    pub l2_weight: f64,
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

pub fn l2_loss(x: &Image, y: &Image) -> Result<f64> {
    x.expect_same_shape(y)?;
    let n = x.data().len() as f64;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Gradient of [`l2_loss`] with respect to `y`.
pub fn l2_grad(x: &Image, y: &Image) -> Result<Image> {
    let n = x.data().len() as f64;
    y.zip_map(x, |b, a| 2.0 * (b - a) / n)
}

/// Valid separable correlation with the Gaussian window.
fn blur_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, gt) in g.iter().enumerate() {
            let r = &rows[(y + t) * ow..(y + t + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(r) {
                *o += gt * v;
            }
        }
    }
    out
}

/// Adjoint of [`blur_valid`]: scatters an (h-k+1)x(w-k+1) map back onto h x w.
fn blur_valid_adjoint(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..oh {
        for (t, gt) in g.iter().enumerate() {
            let s = &src[y * ow..(y + 1) * ow];
            for (o, v) in rows[(y + t) * ow..(y + t + 1) * ow].iter_mut().zip(s) {
                *o += gt * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (o, gt) in out[y * w + x..y * w + x + k].iter_mut().zip(g) {
                *o += gt * v;
            }
        }
    }
    out
}

struct SsimMaps {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    s: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    lum: Vec<f64>,
    con: Vec<f64>,
}

fn ssim_maps(a: &Image, b: &Image) -> Result<SsimMaps> {
    a.expect_same_shape(b)?;
    let (h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_taps();
    let f = |v: Vec<f64>| blur_valid(&v, h, w, &g);
    let (ad, bd) = (a.data(), b.data());
    let mu_a = f(ad.to_vec());
    let mu_b = f(bd.to_vec());
    let e_aa = f(ad.iter().map(|v| v * v).collect());
    let e_bb = f(bd.iter().map(|v| v * v).collect());
    let e_ab = f(ad.iter().zip(bd).map(|(x, y)| x * y).collect());
    let n = mu_a.len();
    let (mut s, mut p, mut q, mut lum, mut con) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cab = e_ab[i] - ma * mb;
        lum[i] = 2.0 * ma * mb + SSIM_C1;
        con[i] = 2.0 * cab + SSIM_C2;
        p[i] = ma * ma + mb * mb + SSIM_C1;
        q[i] = va + vb + SSIM_C2;
        s[i] = lum[i] * con[i] / (p[i] * q[i]);
    }
    Ok(SsimMaps {
        mu_a,
        mu_b,
        s,
        p,
        q,
        lum,
        con,
    })
}

/// Mean local SSIM over all valid 11x11 Gaussian windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let m = ssim_maps(a, b)?;
    Ok(m.s.iter().sum::<f64>() / m.s.len() as f64)
}

/// SSIM and its gradient with respect to `b`. By symmetry the gradient with
/// respect to `a` is `ssim_grad(b, a).1`.
pub fn ssim_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let m = ssim_maps(a, b)?;
    let (h, w) = a.shape();
    let n = m.s.len() as f64;
    let g = gaussian_taps();
    let len = m.s.len();
    // per-window partials of S w.r.t. mu_b, var_b and cov_ab (scaled by 1/n)
    let (mut first, mut d_var, mut d_cov) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for i in 0..len {
        let pq = m.p[i] * m.q[i];
        let dmu = 2.0 * m.mu_a[i] * m.con[i] / pq - m.s[i] * 2.0 * m.mu_b[i] / m.p[i];
        let dv = -m.s[i] / m.q[i];
        let dc = 2.0 * m.lum[i] / pq;
        // var_b = E[b^2] - mu_b^2, cov = E[ab] - mu_a mu_b
        first[i] = (dmu - 2.0 * dv * m.mu_b[i] - dc * m.mu_a[i]) / n;
        d_var[i] = dv / n;
        d_cov[i] = dc / n;
    }
    let t1 = blur_valid_adjoint(&first, h, w, &g);
    let t2 = blur_valid_adjoint(&d_var, h, w, &g);
    let t3 = blur_valid_adjoint(&d_cov, h, w, &g);
    let grad: Vec<f64> = (0..h * w)
        .map(|i| t1[i] + 2.0 * b.data()[i] * t2[i] + a.data()[i] * t3[i])
        .collect();
    Ok((m.s.iter().sum::<f64>() / n, Image::new(h, w, grad)?))
}

/// Loss of one image pair with gradient w.r.t. the reconstruction `y`.
pub fn image_loss(x: &Image, y: &Image, weights: LossWeights) -> Result<(LossValue, Image)> {
    let l2 = l2_loss(x, y)?;
    let (s, gs) = ssim_grad(x, y)?;
    let gl = l2_grad(x, y)?;
    let ssim_part = (1.0 - s) / 2.0;
    let value = LossValue {
        total: weights.l2_weight * l2 + weights.mu * ssim_part,
        l2_part: l2,
        ssim_part,
        mu: weights.mu,
        l2_weight: weights.l2_weight,
    };
    let grad = gl.zip_map(&gs, |a, b| weights.l2_weight * a - 0.5 * weights.mu * b)?;
    Ok((value, grad))
}

/// Batch loss: the mean of [`image_loss`] over batch items, with its gradient
/// with respect to `xhat`.
pub fn total_loss_with_grad<T: Scalar>(
    x: &Tensor4<T>,
    xhat: &Tensor4<T>,
    weights: LossWeights,
) -> Result<(LossValue, Tensor4<T>)> {
    x.expect_same_dims(xhat)?;
    let d = x.dims();
    if d.c != 1 || d.n == 0 {
        return Err(Error::invalid(format!(
            "loss expects single-channel batches, got {d}"
        )));
    }
    let inv = 1.0 / d.n as f64;
    let mut acc = LossValue {
        total: 0.0,
        l2_part: 0.0,
        ssim_part: 0.0,
        mu: weights.mu,
        l2_weight: weights.l2_weight,
    };
    let mut grad = Tensor4::zeros(d);
    for b in 0..d.n {
        let (v, g) = image_loss(
            &Image::from_tensor(x, b),
            &Image::from_tensor(xhat, b),
            weights,
        )?;
        acc.total += v.total * inv;
        acc.l2_part += v.l2_part * inv;
        acc.ssim_part += v.ssim_part * inv;
        let plane = b * d.plane();
        for (o, &gv) in grad.data_mut()[plane..plane + d.plane()]
            .iter_mut()
            .zip(g.data())
        {
            *o = T::of(gv * inv);
        }
    }
    Ok((acc, grad))
}

/// `l2 + (mu / 2) (1 - ssim)` averaged over the batch.
pub fn total_loss<T: Scalar>(x: &Tensor4<T>, xhat: &Tensor4<T>, mu: f64) -> Result<LossValue> {
    Ok(total_loss_with_grad(x, xhat, LossWeights { l2_weight: 1.0, mu })?.0)
}
