//! One unrolled descent step and the decoder, each with a hand-written backward pass.
//!
//! Forward step:
//!
//! ```text
//! F   = Conv1(pad(B_in))                 (1 -> C channels)
//! R   = Conv2(pad(F)),  Conv2 = rot180(Conv1)   (C -> 1)
//! raw = B_in - eta * (R - theta * (X - B_in))
//! out = PReLU(BN(raw))
//! ```
//!
//! With the plain-conv ablation `raw = R`.

use crate::error::Result;
use crate::tensorcore::{
    batch_norm, batch_norm_backward, conv2d, conv2d_backward, prelu, prelu_backward, reflect_pad,
    reflect_pad_backward, rot180_grad_to_free, sigmoid, sigmoid_backward, tie_rot180, BatchNorm,
    BatchNormCache, Kernel, Mode, RunningUpdate, Scalar, Tensor4,
};

use super::LayerParams;

/// Everything the backward pass of one step needs.
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    padded_in: Tensor4<T>,
    padded_feat: Tensor4<T>,
    tied: Kernel<T>,
    reg: Tensor4<T>,
    residual: Tensor4<T>,
    bn: BatchNormCache<T>,
    pre_act: Tensor4<T>,
    plain: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub out: Tensor4<T>,
    pub cache: StepCache<T>,
    /// Updated (running_mean, running_var) in train mode.
    pub running: Option<RunningUpdate<T>>,
}

/// Gradients of one step w.r.t. its inputs and learnables.
#[derive(Debug, Clone)]
pub struct StepGrads<T> {
    pub input: Tensor4<T>,
    pub x: Tensor4<T>,
    pub params: LayerParams<T>,
}

fn unrolled_step<T: Scalar>(
    m_in: &Tensor4<T>,
    x: &Tensor4<T>,
    p: &LayerParams<T>,
    mode: Mode,
    plain: bool,
) -> Result<StepOutput<T>> {
    m_in.expect_same_dims(x)?;
    let padded_in = reflect_pad(m_in, 1)?;
    let feat = conv2d(&padded_in, &p.kernel)?;
    let padded_feat = reflect_pad(&feat, 1)?;
    drop(feat);
    let tied = tie_rot180(&p.kernel);
    let reg = conv2d(&padded_feat, &tied)?;
    let residual = x.sub(m_in)?;
    let raw = if plain {
        reg.clone()
    } else {
        let (eta, theta) = (p.eta, p.theta);
        let mut raw = m_in.clone();
        for ((r, &g), &d) in raw
            .data_mut()
            .iter_mut()
            .zip(reg.data())
            .zip(residual.data())
        {
            *r -= eta * (g - theta * d);
        }
        raw
    };
    let bn = batch_norm(&raw, &p.bn, mode)?;
    let out = prelu(&bn.out, p.prelu_slope);
    Ok(StepOutput {
        out,
        cache: StepCache {
            padded_in,
            padded_feat,
            tied,
            reg,
            residual,
            bn: bn.cache,
            pre_act: bn.out,
            plain,
        },
        running: bn.running,
    })
}

/// One base-encoder layer.
pub fn bcl_step<T: Scalar>(
    b_in: &Tensor4<T>,
    x: &Tensor4<T>,
    p: &LayerParams<T>,
    mode: Mode,
    plain: bool,
) -> Result<StepOutput<T>> {
    unrolled_step(b_in, x, p, mode, plain)
}

/// One detail-encoder layer; same form as [`bcl_step`] with its own parameters.
pub fn dcl_step<T: Scalar>(
    d_in: &Tensor4<T>,
    x: &Tensor4<T>,
    p: &LayerParams<T>,
    mode: Mode,
    plain: bool,
) -> Result<StepOutput<T>> {
    unrolled_step(d_in, x, p, mode, plain)
}

pub fn step_backward<T: Scalar>(
    cache: &StepCache<T>,
    p: &LayerParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<StepGrads<T>> {
    let (g_bn, g_slope) = prelu_backward(&cache.pre_act, p.prelu_slope, grad_out)?;
    let (g_raw, g_scale, g_shift) = batch_norm_backward(&cache.bn, &p.bn.scale, &g_bn)?;

    let dims = g_raw.dims();
    let mut grads = p.zeros_like();
    grads.prelu_slope = g_slope;
    grads.bn.scale = g_scale;
    grads.bn.shift = g_shift;

    let (mut g_in, g_x, g_reg) = if cache.plain {
        (Tensor4::zeros(dims), Tensor4::zeros(dims), g_raw)
    } else {
        let (eta, theta) = (p.eta, p.theta);
        let (mut ge, mut gt) = (0.0f64, 0.0f64);
        for ((&g, &r), &d) in g_raw
            .data()
            .iter()
            .zip(cache.reg.data())
            .zip(cache.residual.data())
        {
            ge += (g * (theta * d - r)).as_f64();
            gt += (g * eta * d).as_f64();
        }
        grads.eta = T::of(ge);
        grads.theta = T::of(gt);
        let keep = T::one() - eta * theta;
        (
            g_raw.scale(keep),
            g_raw.scale(eta * theta),
            g_raw.scale(-eta),
        )
    };

    let (g_pfeat, g_tied) = conv2d_backward(&cache.padded_feat, &cache.tied, &g_reg)?;
    let pf = cache.padded_feat.dims();
    let feat_dims = crate::tensorcore::Dims4::new(pf.n, pf.c, pf.h - 2, pf.w - 2);
    let g_feat = reflect_pad_backward(&g_pfeat, feat_dims, 1)?;
    let (g_pin, g_k1) = conv2d_backward(&cache.padded_in, &p.kernel, &g_feat)?;
    g_in.add_assign(&reflect_pad_backward(&g_pin, dims, 1)?)?;

    let g_k2 = rot180_grad_to_free(&g_tied);
    for ((a, &b), &c) in grads
        .kernel
        .weights_mut()
        .iter_mut()
        .zip(g_k1.weights())
        .zip(g_k2.weights())
    {
        *a = b + c;
    }
    Ok(StepGrads {
        input: g_in,
        x: g_x,
        params: grads,
    })
}

pub type DecoderOutput<T> = (Tensor4<T>, DecoderCache<T>, Option<RunningUpdate<T>>);

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    padded: Tensor4<T>,
    bn: BatchNormCache<T>,
    out: Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderGrads<T> {
    pub input: Tensor4<T>,
    pub kernel: Kernel<T>,
    pub bn_scale: Vec<T>,
    pub bn_shift: Vec<T>,
}

/// `sigmoid(BN(Conv(pad(input))))`; returned with its cache and running-stat update.
pub fn decoder_forward<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Kernel<T>,
    bn: &BatchNorm<T>,
    mode: Mode,
) -> Result<DecoderOutput<T>> {
    let padded = reflect_pad(input, 1)?;
    let conv = conv2d(&padded, kernel)?;
    let normed = batch_norm(&conv, bn, mode)?;
    let out = sigmoid(&normed.out);
    Ok((
        out.clone(),
        DecoderCache {
            padded,
            bn: normed.cache,
            out,
        },
        normed.running,
    ))
}

pub fn decoder_backward<T: Scalar>(
    cache: &DecoderCache<T>,
    kernel: &Kernel<T>,
    bn: &BatchNorm<T>,
    grad_out: &Tensor4<T>,
) -> Result<DecoderGrads<T>> {
    let g_norm = sigmoid_backward(&cache.out, grad_out)?;
    let (g_conv, bn_scale, bn_shift) = batch_norm_backward(&cache.bn, &bn.scale, &g_norm)?;
    let (g_pad, g_kernel) = conv2d_backward(&cache.padded, kernel, &g_conv)?;
    let d = cache.out.dims();
    let input = reflect_pad_backward(
        &g_pad,
        crate::tensorcore::Dims4::new(d.n, kernel.in_channels(), d.h, d.w),
        1,
    )?;
    Ok(DecoderGrads {
        input,
        kernel: g_kernel,
        bn_scale,
        bn_shift,
    })
}
