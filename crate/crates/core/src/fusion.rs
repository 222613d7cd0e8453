//! Test-time fusion: encode both sources, merge the base and detail maps, decode.

use std::fmt;
use std::str::FromStr;

use crate::decompose::FilterBank;
use crate::error::{Error, Result};
use crate::network::{encode, reconstruct, NetworkParams};
use crate::raster::Image;
use crate::tensorcore::{conv2d, reflect_pad, Mode, Scalar, Tensor4};

/// Below this attention denominator both sources get weight 0.5.
pub const ATTENTION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MergeStrategy {
    /// `M_I + M_V`
    #[default]
    Addition,
    /// `w M_I + (1 - w) M_V`
    Average(f64),
    /// Blurred-magnitude weights, per map.
    L1Attention,
}

impl MergeStrategy {
    pub const DEFAULT_AVERAGE_WEIGHT: f64 = 0.5;

    pub fn validate(self) -> Result<Self> {
        if let MergeStrategy::Average(w) = self {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!(
                    "average weight must lie in [0, 1], got {w}"
                )));
            }
        }
        Ok(self)
    }

    pub fn name(self) -> &'static str {
        match self {
            MergeStrategy::Addition => "addition",
            MergeStrategy::Average(_) => "average",
            MergeStrategy::L1Attention => "l1att",
        }
    }

    /// Parses a strategy name; `weight` applies to `average` only.
    pub fn from_name(name: &str, weight: Option<f64>) -> Result<Self> {
        let s = match name {
            "addition" => MergeStrategy::Addition,
            "average" => MergeStrategy::Average(weight.unwrap_or(Self::DEFAULT_AVERAGE_WEIGHT)),
            "l1att" | "l1_attention" => MergeStrategy::L1Attention,
            other => {
                return Err(Error::invalid(format!(
                    "unknown strategy {other:?} (addition|average|l1att)"
                )));
            }
        };
        s.validate()
    }
}

impl fmt::Display for MergeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MergeStrategy::Average(w) => write!(f, "average:{w}"),
            s => f.write_str(s.name()),
        }
    }
}

impl FromStr for MergeStrategy {
    type Err = Error;

    /// Accepts the names of [`from_name`](Self::from_name) and `average:W`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("average", w)) => {
                let w = w
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad average weight {w:?}")))?;
                MergeStrategy::Average(w).validate()
            }
            _ => MergeStrategy::from_name(s, None),
        }
    }
}

fn blurred_magnitude<T: Scalar>(m: &Tensor4<T>) -> Result<Tensor4<T>> {
    conv2d(
        &reflect_pad(&m.map(|v| v.abs()), 1)?,
        &FilterBank::blur3().cast(),
    )
}

/// Pixelwise `(alpha_I, alpha_V)`: each map's blurred magnitude over their sum.
pub fn l1_attention_weights<T: Scalar>(
    m_i: &Tensor4<T>,
    m_v: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    m_i.expect_same_dims(m_v)?;
    let (ci, cv) = (blurred_magnitude(m_i)?, blurred_magnitude(m_v)?);
    let guard = T::of(ATTENTION_GUARD);
    let half = T::of(0.5);
    let weight = |own: T, other: T| {
        let den = own + other;
        if den < guard {
            half
        } else {
            own / den
        }
    };
    Ok((ci.zip_map(&cv, weight)?, cv.zip_map(&ci, weight)?))
}

pub fn merge_maps<T: Scalar>(
    m_i: &Tensor4<T>,
    m_v: &Tensor4<T>,
    strategy: MergeStrategy,
) -> Result<Tensor4<T>> {
    m_i.expect_same_dims(m_v)?;
    match strategy.validate()? {
        MergeStrategy::Addition => m_i.add(m_v),
        MergeStrategy::Average(w) => {
            let (a, b) = (T::of(w), T::of(1.0 - w));
            m_i.zip_map(m_v, |x, y| a * x + b * y)
        }
        MergeStrategy::L1Attention => {
            let (ai, av) = l1_attention_weights(m_i, m_v)?;
            let mut out = Tensor4::zeros(m_i.dims());
            for (((o, &x), &y), (&wa, &wb)) in out
                .data_mut()
                .iter_mut()
                .zip(m_i.data())
                .zip(m_v.data())
                .zip(ai.data().iter().zip(av.data()))
            {
                *o = wa * x + wb * y;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub fused: Image,
    pub merged_base: Tensor4<f32>,
    pub merged_detail: Tensor4<f32>,
}

/// Fuses an infrared/visible pair with the network in eval mode.
pub fn fuse(
    ir: &Image,
    vis: &Image,
    params: &NetworkParams<f32>,
    strategy: MergeStrategy,
) -> Result<FusionResult> {
    if ir.shape() != vis.shape() {
        return Err(Error::shapes(
            format!("infrared {}x{}", ir.height(), ir.width()),
            format!("visible {}x{}", vis.height(), vis.width()),
        ));
    }
    let strategy = strategy.validate()?;
    let (b_i, d_i) = encode(&ir.to_tensor::<f32>(), params, Mode::Eval)?;
    let (b_v, d_v) = encode(&vis.to_tensor::<f32>(), params, Mode::Eval)?;
    let merged_base = merge_maps(&b_i, &b_v, strategy)?;
    let merged_detail = merge_maps(&d_i, &d_v, strategy)?;
    let out = reconstruct(&merged_base, &merged_detail, params, Mode::Eval)?;
    Ok(FusionResult {
        fused: Image::from_tensor(&out, 0),
        merged_base,
        merged_detail,
    })
}
