//! Classical two-scale decompositions with fixed filters.
//!
//! Three solvers split an image into a low-frequency base layer and a
//! high-frequency detail layer:
//!
//! * [`filter_decompose`]: base is a 3x3 mean blur, detail is the residual.
//! * [`optim_decompose`]: gradient descent on
//!   `||I - B||^2 + lambda (||g_x * B||^2 + ||g_y * B||^2)` with forward differences.
//! * [`classic_gd_decompose`]: the fixed-filter version of the iteration the
//!   network unrolls, `M <- M - eta [g^T * (g * M) - theta (X - M)]`, with a
//!   Laplacian (base objective) or a blur (detail objective).
//!
//! [`linear_oracle`] solves the matching normal equations densely and is used
//! to validate the iterative solvers on small images.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensorcore::{
    conv2d, conv2d_backward, reflect_pad, reflect_pad_backward, Dims4, Kernel, Tensor4,
};

/// Consecutive objective increases tolerated before a solve is declared divergent.
pub const DIVERGENCE_PATIENCE: usize = 10;

/// Largest image side the dense oracle accepts.
pub const ORACLE_MAX_SIDE: usize = 24;

/// Fixed filters used by the classical solvers and the encoder initialization.
pub struct FilterBank;

impl FilterBank {
    /// 3x3 mean filter.
    pub fn blur3() -> Kernel<f64> {
        Kernel::single([[1.0 / 9.0; 3]; 3])
    }

    /// 4-neighbour Laplacian.
    pub fn laplacian4() -> Kernel<f64> {
        Kernel::single([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    }

    /// Horizontal `[-1, 1]` difference, "valid" extent (h x (w-1)).
    pub fn gx(img: &Image) -> Image {
        Image::from_fn(img.height(), img.width() - 1, |y, x| {
            img.get(y, x + 1) - img.get(y, x)
        })
    }

    /// Vertical `[-1, 1]^T` difference, "valid" extent ((h-1) x w).
    pub fn gy(img: &Image) -> Image {
        Image::from_fn(img.height() - 1, img.width(), |y, x| {
            img.get(y + 1, x) - img.get(y, x)
        })
    }
}

fn gx_adjoint(g: &Image, height: usize, width: usize) -> Image {
    let mut out = Image::filled(height, width, 0.0);
    for y in 0..g.height() {
        for x in 0..g.width() {
            let v = g.get(y, x);
            out.data_mut()[y * width + x] -= v;
            out.data_mut()[y * width + x + 1] += v;
        }
    }
    out
}

fn gy_adjoint(g: &Image, height: usize, width: usize) -> Image {
    let mut out = Image::filled(height, width, 0.0);
    for y in 0..g.height() {
        for x in 0..g.width() {
            let v = g.get(y, x);
            out.data_mut()[y * width + x] -= v;
            out.data_mut()[(y + 1) * width + x] += v;
        }
    }
    out
}

/// `g * img` with reflect-101 padding so the output keeps the input size.
pub fn filter_same(img: &Image, k: &Kernel<f64>) -> Result<Image> {
    let t = img.to_tensor::<f64>();
    Ok(Image::from_tensor(&conv2d(&reflect_pad(&t, 1)?, k)?, 0))
}

/// Adjoint of [`filter_same`] (kernel rotated by 180 degrees, padding folded back).
pub fn filter_same_adjoint(g: &Image, k: &Kernel<f64>) -> Result<Image> {
    let (h, w) = g.shape();
    // the input gradient of a correlation does not depend on the input values
    let padded = Tensor4::zeros(Dims4::new(1, 1, h + 2, w + 2));
    let (gpad, _) = conv2d_backward(&padded, k, &g.to_tensor())?;
    Ok(Image::from_tensor(
        &reflect_pad_backward(&gpad, Dims4::new(1, 1, h, w), 1)?,
        0,
    ))
}

fn sq_norm(img: &Image) -> f64 {
    img.data().iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone)]
pub struct DecomposeResult {
    pub base: Image,
    pub detail: Image,
    /// Objective value at the start and after every iteration.
    pub loss_trace: Vec<f64>,
}

fn check_input(img: &Image) -> Result<()> {
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("image contains non-finite pixels"));
    }
    Ok(())
}

/// Tracks consecutive objective increases during a descent.
struct DivergenceGuard {
    last: f64,
    rising: usize,
}

impl DivergenceGuard {
    fn new(initial: f64) -> Self {
        DivergenceGuard {
            last: initial,
            rising: 0,
        }
    }

    fn observe(&mut self, iteration: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration,
                consecutive: self.rising + 1,
            });
        }
        if loss > self.last {
            self.rising += 1;
            if self.rising >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    iteration,
                    consecutive: self.rising,
                });
            }
        } else {
            self.rising = 0;
        }
        self.last = loss;
        Ok(())
    }
}

/// Base is the 3x3 mean blur of the image; detail is what the blur removed.
pub fn filter_decompose(img: &Image) -> Result<DecomposeResult> {
    check_input(img)?;
    let base = filter_same(img, &FilterBank::blur3())?;
    let detail = img.zip_map(&base, |a, b| a - b)?;
    Ok(DecomposeResult {
        base,
        detail,
        loss_trace: Vec::new(),
    })
}

/// `||I - B||^2 + lambda (||g_x * B||^2 + ||g_y * B||^2)`
pub fn optim_objective(img: &Image, base: &Image, lambda: f64) -> f64 {
    let fid: f64 = img
        .data()
        .iter()
        .zip(base.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    fid + lambda * (sq_norm(&FilterBank::gx(base)) + sq_norm(&FilterBank::gy(base)))
}

/// Gradient descent on [`optim_objective`] starting from `B = img`.
pub fn optim_decompose(
    img: &Image,
    lambda: f64,
    iters: usize,
    step: f64,
) -> Result<DecomposeResult> {
    check_input(img)?;
    if !(lambda >= 0.0) || !(step > 0.0) {
        return Err(Error::invalid(format!(
            "need lambda >= 0 and step > 0, got {lambda}, {step}"
        )));
    }
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::invalid(
            "optimization decomposition needs an image of at least 2x2",
        ));
    }
    let (h, w) = img.shape();
    let mut base = img.clone();
    let mut trace = vec![optim_objective(img, &base, lambda)];
    let mut guard = DivergenceGuard::new(trace[0]);
    for it in 0..iters {
        let rx = gx_adjoint(&FilterBank::gx(&base), h, w);
        let ry = gy_adjoint(&FilterBank::gy(&base), h, w);
        for (i, b) in base.data_mut().iter_mut().enumerate() {
            let g = 2.0 * (*b - img.data()[i]) + 2.0 * lambda * (rx.data()[i] + ry.data()[i]);
            *b -= step * g;
        }
        let loss = optim_objective(img, &base, lambda);
        guard.observe(it, loss)?;
        trace.push(loss);
    }
    let detail = img.zip_map(&base, |a, b| a - b)?;
    Ok(DecomposeResult {
        base,
        detail,
        loss_trace: trace,
    })
}

/// Which fixed-filter objective [`classic_gd_decompose`] descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicVariant {
    /// Laplacian penalty (high-pass), starting from the blurred image; solves for the base.
    Base,
    /// Blur penalty (low-pass), starting from the Laplacian of the image; solves for the detail.
    Detail,
}

impl ClassicVariant {
    pub fn penalty(self) -> Kernel<f64> {
        match self {
            ClassicVariant::Base => FilterBank::laplacian4(),
            ClassicVariant::Detail => FilterBank::blur3(),
        }
    }

    pub fn initializer(self) -> Kernel<f64> {
        match self {
            ClassicVariant::Base => FilterBank::blur3(),
            ClassicVariant::Detail => FilterBank::laplacian4(),
        }
    }
}

/// `theta/2 ||X - M||^2 + 1/2 ||g * M||^2`, the objective whose gradient the
/// unrolled update uses.
pub fn classic_objective(
    img: &Image,
    map: &Image,
    penalty: &Kernel<f64>,
    theta: f64,
) -> Result<f64> {
    let fid: f64 = img
        .data()
        .iter()
        .zip(map.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.5 * theta * fid + 0.5 * sq_norm(&filter_same(map, penalty)?))
}

/// Runs `M <- M - eta [g^T * (g * M) - theta (X - M)]` with fixed filters.
///
/// The returned result holds the solved map in its own slot (base or detail)
/// and the residual `img - M` in the other.
pub fn classic_gd_decompose(
    img: &Image,
    variant: ClassicVariant,
    theta: f64,
    eta: f64,
    iters: usize,
) -> Result<DecomposeResult> {
    check_input(img)?;
    if !(theta > 0.0) || !(eta > 0.0) {
        return Err(Error::invalid(format!(
            "need theta > 0 and eta > 0, got {theta}, {eta}"
        )));
    }
    let g = variant.penalty();
    let mut map = filter_same(img, &variant.initializer())?;
    let mut trace = vec![classic_objective(img, &map, &g, theta)?];
    let mut guard = DivergenceGuard::new(trace[0]);
    for it in 0..iters {
        let reg = filter_same_adjoint(&filter_same(&map, &g)?, &g)?;
        for (i, m) in map.data_mut().iter_mut().enumerate() {
            *m -= eta * (reg.data()[i] - theta * (img.data()[i] - *m));
        }
        let loss = classic_objective(img, &map, &g, theta)?;
        guard.observe(it, loss)?;
        trace.push(loss);
    }
    let residual = img.zip_map(&map, |a, b| a - b)?;
    let (base, detail) = match variant {
        ClassicVariant::Base => (map, residual),
        ClassicVariant::Detail => (residual, map),
    };
    Ok(DecomposeResult {
        base,
        detail,
        loss_trace: trace,
    })
}

/// A linear filter appearing in a quadratic penalty `weight * ||K b||^2`.
#[derive(Debug, Clone)]
pub enum PenaltyFilter {
    /// 3x3 correlation with reflect-101 padding (same size).
    Reflect(Kernel<f64>),
    /// Horizontal forward difference, valid extent.
    DiffX,
    /// Vertical forward difference, valid extent.
    DiffY,
}

impl PenaltyFilter {
    fn apply(&self, img: &Image) -> Result<Image> {
        match self {
            PenaltyFilter::Reflect(k) => filter_same(img, k),
            PenaltyFilter::DiffX => Ok(FilterBank::gx(img)),
            PenaltyFilter::DiffY => Ok(FilterBank::gy(img)),
        }
    }
}

/// Dense matrix of `theta I + sum_j w_j K_j^T K_j`, each `K_j` assembled column
/// by column from its action on unit basis images.
pub fn oracle_matrix(
    height: usize,
    width: usize,
    theta: f64,
    terms: &[(PenaltyFilter, f64)],
) -> Result<DMatrix<f64>> {
    if height > ORACLE_MAX_SIDE || width > ORACLE_MAX_SIDE {
        return Err(Error::invalid(format!(
            "dense oracle limited to {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE}, got {height}x{width}"
        )));
    }
    let n = height * width;
    let mut a = DMatrix::<f64>::identity(n, n) * theta;
    for (filter, weight) in terms {
        let mut cols = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = Image::filled(height, width, 0.0);
            e.data_mut()[j] = 1.0;
            cols.push(DVector::from_vec(filter.apply(&e)?.data().to_vec()));
        }
        let k = DMatrix::from_columns(&cols);
        a += (k.transpose() * &k) * *weight;
    }
    Ok(a)
}

/// Closed-form minimizer of `theta/2 ||x - b||^2 + sum_j w_j/2 ||K_j b||^2`,
/// i.e. the solution of `(theta I + sum_j w_j K_j^T K_j) b = theta x`.
pub fn linear_oracle(img: &Image, theta: f64, terms: &[(PenaltyFilter, f64)]) -> Result<Image> {
    if !(theta > 0.0) {
        return Err(Error::invalid("oracle needs theta > 0"));
    }
    let a = oracle_matrix(img.height(), img.width(), theta, terms)?;
    let rhs = DVector::from_vec(img.data().iter().map(|v| theta * v).collect());
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Internal("oracle system is not positive definite".into()))?;
    Image::new(
        img.height(),
        img.width(),
        chol.solve(&rhs).as_slice().to_vec(),
    )
}

/// Oracle terms matching [`classic_gd_decompose`] for the given variant.
pub fn classic_terms(variant: ClassicVariant) -> Vec<(PenaltyFilter, f64)> {
    vec![(PenaltyFilter::Reflect(variant.penalty()), 1.0)]
}

/// Oracle terms matching [`optim_decompose`]; pair with `theta = 1`.
pub fn optim_terms(lambda: f64) -> Vec<(PenaltyFilter, f64)> {
    vec![
        (PenaltyFilter::DiffX, lambda),
        (PenaltyFilter::DiffY, lambda),
    ]
}
