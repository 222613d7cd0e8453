use super::{Dims4, Scalar, Tensor4};
use crate::error::{Error, Result};

/// Mirror index for reflect-101 padding (edge pixel not repeated). A length-1
/// axis has only one pixel to mirror, so every position maps onto it.
#[inline]
fn mirror(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let last = len as isize - 1;
    let r = if i < 0 {
        -i
    } else if i > last {
        2 * last - i
    } else {
        i
    };
    r as usize
}

fn check(dims: Dims4, p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::invalid("reflection pad width must be >= 1"));
    }
    let fits = |len: usize| len == 1 || len > p;
    if !fits(dims.h) || !fits(dims.w) {
        return Err(Error::invalid(format!(
            "reflection pad of {p} needs spatial dims > {p} (or 1), got {}x{}",
            dims.h, dims.w
        )));
    }
    Ok(())
}

/// Reflect-101 pads every plane by `p` pixels on each side.
pub fn reflect_pad<T: Scalar>(x: &Tensor4<T>, p: usize) -> Result<Tensor4<T>> {
    let d = x.dims();
    check(d, p)?;
    let (oh, ow) = (d.h + 2 * p, d.w + 2 * p);
    let cols: Vec<usize> = (0..ow)
        .map(|j| mirror(j as isize - p as isize, d.w))
        .collect();
    let mut out = Vec::with_capacity(d.n * d.c * oh * ow);
    for b in 0..d.n {
        for c in 0..d.c {
            let plane = x.plane(b, c);
            for i in 0..oh {
                let row = &plane[mirror(i as isize - p as isize, d.h) * d.w..][..d.w];
                out.extend(cols.iter().map(|&j| row[j]));
            }
        }
    }
    Tensor4::from_vec(Dims4::new(d.n, d.c, oh, ow), out)
}

/// Adjoint of [`reflect_pad`]: scatters each padded position back onto its source pixel.
pub fn reflect_pad_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input_dims: Dims4,
    p: usize,
) -> Result<Tensor4<T>> {
    check(input_dims, p)?;
    let g = grad_out.dims();
    let expected = Dims4::new(
        input_dims.n,
        input_dims.c,
        input_dims.h + 2 * p,
        input_dims.w + 2 * p,
    );
    if g != expected {
        return Err(Error::shapes(g, expected));
    }
    let cols: Vec<usize> = (0..g.w)
        .map(|j| mirror(j as isize - p as isize, input_dims.w))
        .collect();
    let mut grad_in = Tensor4::zeros(input_dims);
    let plane_len = input_dims.plane();
    for b in 0..g.n {
        for c in 0..g.c {
            let src = grad_out.plane(b, c);
            let start = (b * g.c + c) * plane_len;
            let dst = &mut grad_in.data_mut()[start..start + plane_len];
            for i in 0..g.h {
                let r = mirror(i as isize - p as isize, input_dims.h);
                let drow = &mut dst[r * input_dims.w..(r + 1) * input_dims.w];
                for (j, &v) in src[i * g.w..(i + 1) * g.w].iter().enumerate() {
                    drow[cols[j]] += v;
                }
            }
        }
    }
    Ok(grad_in)
}
