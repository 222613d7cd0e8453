use super::{Mode, Scalar, Tensor4};
use crate::error::{Error, Result};

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        BatchNorm {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        BatchNorm {
            scale: c(&self.scale),
            shift: c(&self.shift),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// New running mean and variance from a train-mode pass.
pub type RunningUpdate<T> = (Vec<T>, Vec<T>);

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T> {
    pub out: Tensor4<T>,
    pub cache: BatchNormCache<T>,
    /// Train mode only: updated (running_mean, running_var) the caller should store.
    pub running: Option<RunningUpdate<T>>,
}

pub fn batch_norm<T: Scalar>(
    x: &Tensor4<T>,
    bn: &BatchNorm<T>,
    mode: Mode,
) -> Result<BatchNormOutput<T>> {
    let d = x.dims();
    if bn.channels() != d.c {
        return Err(Error::invalid(format!(
            "batch norm has {} channels, tensor {d}",
            bn.channels()
        )));
    }
    let count = d.n * d.plane();
    let eps = BatchNorm::<T>::EPS;
    let mut mean = vec![0.0f64; d.c];
    let mut var = vec![0.0f64; d.c];
    match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::invalid(format!(
                    "train-mode batch norm needs >= 2 values per channel, tensor {d}"
                )));
            }
            for c in 0..d.c {
                let sum: f64 = (0..d.n)
                    .flat_map(|b| x.plane(b, c))
                    .map(|v| v.as_f64())
                    .sum();
                let m = sum / count as f64;
                let ss: f64 = (0..d.n)
                    .flat_map(|b| x.plane(b, c))
                    .map(|v| (v.as_f64() - m).powi(2))
                    .sum();
                mean[c] = m;
                var[c] = ss / count as f64;
            }
        }
        Mode::Eval => {
            for c in 0..d.c {
                mean[c] = bn.running_mean[c].as_f64();
                var[c] = bn.running_var[c].as_f64();
            }
        }
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mut normalized = x.clone();
    let mut out = x.clone();
    let plane = d.plane();
    for b in 0..d.n {
        for c in 0..d.c {
            let start = (b * d.c + c) * plane;
            let (m, s, g, sh) = (T::of(mean[c]), inv_std[c], bn.scale[c], bn.shift[c]);
            for i in start..start + plane {
                let xh = (x.data()[i] - m) * s;
                normalized.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + sh;
            }
        }
    }

    let running = (mode == Mode::Train).then(|| {
        let mom = BatchNorm::<T>::MOMENTUM;
        let unbias = count as f64 / (count as f64 - 1.0);
        let rm = (0..d.c)
            .map(|c| T::of((1.0 - mom) * bn.running_mean[c].as_f64() + mom * mean[c]))
            .collect();
        let rv = (0..d.c)
            .map(|c| T::of((1.0 - mom) * bn.running_var[c].as_f64() + mom * var[c] * unbias))
            .collect();
        (rm, rv)
    });

    Ok(BatchNormOutput {
        out,
        cache: BatchNormCache {
            normalized,
            inv_std,
            mode,
        },
        running,
    })
}

/// Returns (grad_input, grad_scale, grad_shift).
pub fn batch_norm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    scale: &[T],
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let xh = &cache.normalized;
    xh.expect_same_dims(grad_out)?;
    let d = xh.dims();
    let plane = d.plane();
    let count = (d.n * plane) as f64;
    let mut dscale = vec![T::zero(); d.c];
    let mut dshift = vec![T::zero(); d.c];
    let mut grad_in = Tensor4::zeros(d);
    for c in 0..d.c {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for b in 0..d.n {
            let start = (b * d.c + c) * plane;
            for i in start..start + plane {
                let g = grad_out.data()[i].as_f64();
                sg += g;
                sgx += g * xh.data()[i].as_f64();
            }
        }
        dshift[c] = T::of(sg);
        dscale[c] = T::of(sgx);
        let k = scale[c] * cache.inv_std[c];
        let (mg, mgx) = (T::of(sg / count), T::of(sgx / count));
        for b in 0..d.n {
            let start = (b * d.c + c) * plane;
            for i in start..start + plane {
                let g = grad_out.data()[i];
                grad_in.data_mut()[i] = match cache.mode {
                    Mode::Train => k * (g - mg - xh.data()[i] * mgx),
                    Mode::Eval => k * g,
                };
            }
        }
    }
    Ok((grad_in, dscale, dshift))
}
