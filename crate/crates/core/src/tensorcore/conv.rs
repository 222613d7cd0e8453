use rayon::prelude::*;

use super::{Dims4, Kernel, Scalar, Tensor4};
use crate::error::{Error, Result};

fn check(x: Dims4, k: &Kernel<impl Scalar>) -> Result<()> {
    if x.c != k.in_channels() {
        return Err(Error::invalid(format!(
            "conv2d expects {} input channels, got tensor {x}",
            k.in_channels()
        )));
    }
    if x.h < 3 || x.w < 3 {
        return Err(Error::invalid(format!(
            "conv2d needs spatial dims >= 3 (pad first), got {}x{}",
            x.h, x.w
        )));
    }
    Ok(())
}

/// Stride-1 "valid" cross-correlation with a 3x3 kernel and no bias.
pub fn conv2d<T: Scalar>(x: &Tensor4<T>, k: &Kernel<T>) -> Result<Tensor4<T>> {
    let d = x.dims();
    check(d, k)?;
    let (oh, ow) = (d.h - 2, d.w - 2);
    let cout = k.out_channels();
    let out_dims = Dims4::new(d.n, cout, oh, ow);
    let mut out = vec![T::zero(); out_dims.len()];
    out.par_chunks_mut(cout * oh * ow)
        .enumerate()
        .for_each(|(b, item)| {
            for (o, oplane) in item.chunks_mut(oh * ow).enumerate() {
                for i in 0..d.c {
                    let iplane = x.plane(b, i);
                    let taps = k.slice(o, i);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = taps[ky * 3 + kx];
                            for y in 0..oh {
                                let irow = &iplane[(y + ky) * d.w + kx..][..ow];
                                let orow = &mut oplane[y * ow..(y + 1) * ow];
                                for (ov, &iv) in orow.iter_mut().zip(irow) {
                                    *ov += wv * iv;
                                }
                            }
                        }
                    }
                }
            }
        });
    Tensor4::from_vec(out_dims, out)
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    lanes.iter().copied().sum::<T>() + tail
}

/// Gradients of [`conv2d`] with respect to its input and its kernel.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    k: &Kernel<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Kernel<T>)> {
    let d = x.dims();
    check(d, k)?;
    let (oh, ow) = (d.h - 2, d.w - 2);
    let cout = k.out_channels();
    let expected = Dims4::new(d.n, cout, oh, ow);
    if grad_out.dims() != expected {
        return Err(Error::shapes(grad_out.dims(), expected));
    }

    let mut grad_x = vec![T::zero(); d.len()];
    let per_item: Vec<Vec<T>> = grad_x
        .par_chunks_mut(d.c * d.plane())
        .enumerate()
        .map(|(b, gitem)| {
            let mut gk = vec![T::zero(); k.weights().len()];
            for o in 0..cout {
                let gplane = grad_out.plane(b, o);
                for i in 0..d.c {
                    let iplane = x.plane(b, i);
                    let gx = &mut gitem[i * d.plane()..(i + 1) * d.plane()];
                    let taps = k.slice(o, i);
                    let base = (o * d.c + i) * 9;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = taps[ky * 3 + kx];
                            let mut acc = T::zero();
                            for y in 0..oh {
                                let grow = &gplane[y * ow..(y + 1) * ow];
                                let off = (y + ky) * d.w + kx;
                                let irow = &iplane[off..off + ow];
                                acc += dot(grow, irow);
                                for (xv, &g) in gx[off..off + ow].iter_mut().zip(grow) {
                                    *xv += wv * g;
                                }
                            }
                            gk[base + ky * 3 + kx] += acc;
                        }
                    }
                }
            }
            gk
        })
        .collect();

    // batch reduction in a fixed order keeps results independent of scheduling
    let mut gk = vec![T::zero(); k.weights().len()];
    for item in &per_item {
        for (a, &v) in gk.iter_mut().zip(item) {
            *a += v;
        }
    }
    Ok((
        Tensor4::from_vec(d, grad_x)?,
        Kernel::from_vec(cout, d.c, gk)?,
    ))
}

/// Transposes the channel roles and rotates every 3x3 slice by 180 degrees:
/// `out[i, o, y, x] = k[o, i, 2 - y, 2 - x]`. A (C,1) kernel becomes (1,C).
pub fn tie_rot180<T: Scalar>(k: &Kernel<T>) -> Kernel<T> {
    let (o_n, i_n) = (k.out_channels(), k.in_channels());
    let mut w = vec![T::zero(); k.weights().len()];
    for o in 0..o_n {
        for i in 0..i_n {
            for y in 0..3 {
                for x in 0..3 {
                    w[(i * o_n + o) * 9 + y * 3 + x] = k.at(o, i, 2 - y, 2 - x);
                }
            }
        }
    }
    Kernel::from_vec(i_n, o_n, w).expect("rotation preserves weight count")
}

/// Carries a gradient taken w.r.t. `tie_rot180(k)` back onto `k`.
pub fn rot180_grad_to_free<T: Scalar>(grad_tied: &Kernel<T>) -> Kernel<T> {
    // the map is a permutation that is its own inverse
    tie_rot180(grad_tied)
}
