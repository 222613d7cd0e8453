//! The unrolled network: base/detail encoders built from tied-kernel descent
//! steps, a one-channel decoder, parameter bookkeeping and checkpoints.

pub mod checkpoint;
mod layers;
mod model;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensorcore::{BatchNorm, Kernel, Scalar};

pub use layers::{
    bcl_step, dcl_step, decoder_backward, decoder_forward, step_backward, DecoderCache,
    DecoderGrads, StepCache, StepGrads, StepOutput,
};
pub use model::{
    backward, encode, forward, reconstruct, BnSlot, BnUpdate, Branch, Forward, Record,
    OPTIM_DECOMP_ITERS, OPTIM_DECOMP_LAMBDA, OPTIM_DECOMP_STEP,
};

/// Layers per encoder.
pub const DEFAULT_LAYERS: usize = 10;
/// Feature channels inside each unrolled step.
pub const DEFAULT_CHANNELS: usize = 64;

pub const ETA_INIT_MEAN: f64 = 0.1;
pub const ETA_INIT_STD: f64 = 0.03;
pub const THETA_BASE_INIT: f64 = 1e-3;
pub const THETA_DETAIL_INIT: f64 = 1.0;
pub const PRELU_INIT: f64 = 0.25;

/// Ablation switches, stored as a bitmask in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Ablation(u32);

impl Ablation {
    pub const NONE: Ablation = Ablation(0);
    /// Steps are conv -> conv -> BN -> PReLU without the descent arithmetic.
    pub const PLAIN_CONV: Ablation = Ablation(1);
    /// Encoders start from the input itself instead of blur/Laplacian maps.
    pub const NO_INIT: Ablation = Ablation(1 << 1);
    /// Decoder sees only the base map.
    pub const BASE_ONLY: Ablation = Ablation(1 << 2);
    /// Decoder sees only the detail map.
    pub const DETAIL_ONLY: Ablation = Ablation(1 << 3);
    /// Loss is the l2 term alone.
    pub const L2_ONLY: Ablation = Ablation(1 << 4);
    /// Loss is the weighted SSIM term alone.
    pub const SSIM_ONLY: Ablation = Ablation(1 << 5);
    /// Encoders replaced by the fixed blur/residual split; only the decoder learns.
    pub const FILTER_DECOMP: Ablation = Ablation(1 << 6);
    /// Encoders replaced by the gradient-penalty optimization split; only the decoder learns.
    pub const OPTIM_DECOMP: Ablation = Ablation(1 << 7);

    const NAMES: [(&'static str, Ablation); 8] = [
        ("plain_conv", Self::PLAIN_CONV),
        ("no_init", Self::NO_INIT),
        ("base_only", Self::BASE_ONLY),
        ("detail_only", Self::DETAIL_ONLY),
        ("l2_only", Self::L2_ONLY),
        ("ssim_only", Self::SSIM_ONLY),
        ("filter_decomp", Self::FILTER_DECOMP),
        ("optim_decomp", Self::OPTIM_DECOMP),
    ];

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        let known = Self::NAMES.iter().fold(0, |acc, (_, a)| acc | a.0);
        if bits & !known != 0 {
            return Err(Error::invalid(format!("unknown ablation bits {bits:#x}")));
        }
        let a = Ablation(bits);
        a.validate()?;
        Ok(a)
    }

    pub const fn contains(self, other: Ablation) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    pub const fn union(self, other: Ablation) -> Ablation {
        Ablation(self.0 | other.0)
    }

    pub fn is_none(self) -> bool {
        self.0 == 0
    }

    /// Encoders are replaced by a fixed decomposition.
    pub fn fixed_encoders(self) -> bool {
        self.contains(Self::FILTER_DECOMP) || self.contains(Self::OPTIM_DECOMP)
    }

    pub fn validate(self) -> Result<()> {
        let clash = |a: Ablation, b: Ablation| self.contains(a) && self.contains(b);
        if clash(Self::BASE_ONLY, Self::DETAIL_ONLY) {
            return Err(Error::invalid(
                "base_only and detail_only are mutually exclusive",
            ));
        }
        if clash(Self::L2_ONLY, Self::SSIM_ONLY) {
            return Err(Error::invalid(
                "l2_only and ssim_only are mutually exclusive",
            ));
        }
        if clash(Self::FILTER_DECOMP, Self::OPTIM_DECOMP) {
            return Err(Error::invalid(
                "filter_decomp and optim_decomp are mutually exclusive",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            return f.write_str("none");
        }
        let names: Vec<&str> = Self::NAMES
            .iter()
            .filter(|(_, a)| self.contains(*a))
            .map(|(n, _)| *n)
            .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// Comma-separated flag names, or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let mut acc = Ablation::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "none" {
                continue;
            }
            let flag = Self::NAMES
                .iter()
                .find(|(n, _)| *n == part)
                .map(|(_, a)| *a)
                .ok_or_else(|| Error::invalid(format!("unknown ablation '{part}'")))?;
            acc = acc.union(flag);
        }
        acc.validate()?;
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub layers: usize,
    pub channels: usize,
    pub ablation: Ablation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layers: DEFAULT_LAYERS,
            channels: DEFAULT_CHANNELS,
            ablation: Ablation::NONE,
        }
    }
}

/// Learnables of one unrolled step. The second convolution is always
/// `tie_rot180(kernel)` and is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// (C, 1, 3, 3)
    pub kernel: Kernel<T>,
    pub eta: T,
    pub theta: T,
    pub bn: BatchNorm<T>,
    pub prelu_slope: T,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            kernel: Kernel::zeros(self.kernel.out_channels(), 1),
            eta: T::zero(),
            theta: T::zero(),
            bn: BatchNorm {
                scale: vec![T::zero()],
                shift: vec![T::zero()],
                running_mean: vec![T::zero()],
                running_var: vec![T::zero()],
            },
            prelu_slope: T::zero(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            kernel: self.kernel.cast(),
            eta: U::of(self.eta.as_f64()),
            theta: U::of(self.theta.as_f64()),
            bn: self.bn.cast(),
            prelu_slope: U::of(self.prelu_slope.as_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub config: NetworkConfig,
    pub base: Vec<LayerParams<T>>,
    pub detail: Vec<LayerParams<T>>,
    /// (1, 1, 3, 3)
    pub decoder_kernel: Kernel<T>,
    pub decoder_bn: BatchNorm<T>,
}

/// A named parameter buffer, as laid out in checkpoints.
pub struct Slot<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [T],
    pub learnable: bool,
}

pub struct SlotMut<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [T],
    pub learnable: bool,
}

impl<'a, T> Slot<'a, T> {
    fn new(name: String, dims: Vec<usize>, data: &'a [T], learnable: bool) -> Self {
        Slot {
            name,
            dims,
            data,
            learnable,
        }
    }
}

impl<'a, T> SlotMut<'a, T> {
    fn new(name: String, dims: Vec<usize>, data: &'a mut [T], learnable: bool) -> Self {
        SlotMut {
            name,
            dims,
            data,
            learnable,
        }
    }
}

impl<T: Scalar> NetworkParams<T> {
    pub fn layers(&self) -> usize {
        self.config.layers
    }

    /// Buffers in checkpoint order. Learnable means "receives gradient updates"
    /// under the configured ablation; running statistics are never learnable.
    pub fn slots(&self) -> Vec<Slot<'_, T>> {
        let ab = self.config.ablation;
        let descent = !ab.contains(Ablation::PLAIN_CONV);
        let enc = !ab.fixed_encoders();
        let mut out = Vec::new();
        for (branch, layers) in [("base", &self.base), ("detail", &self.detail)] {
            for (i, l) in layers.iter().enumerate() {
                let p = format!("{branch}.{i}");
                let c = l.kernel.out_channels();
                let s = |name: &str, dims, data, learnable| {
                    Slot::new(format!("{p}.{name}"), dims, data, learnable)
                };
                out.push(s("kernel", vec![c, 1, 3, 3], l.kernel.weights(), enc));
                out.push(s(
                    "eta",
                    vec![1],
                    std::slice::from_ref(&l.eta),
                    enc && descent,
                ));
                out.push(s(
                    "theta",
                    vec![1],
                    std::slice::from_ref(&l.theta),
                    enc && descent,
                ));
                out.push(s("bn_scale", vec![1], &l.bn.scale, enc));
                out.push(s("bn_shift", vec![1], &l.bn.shift, enc));
                out.push(s("bn_running_mean", vec![1], &l.bn.running_mean, false));
                out.push(s("bn_running_var", vec![1], &l.bn.running_var, false));
                out.push(s(
                    "prelu_slope",
                    vec![1],
                    std::slice::from_ref(&l.prelu_slope),
                    enc,
                ));
            }
        }
        let s = |name: &str, dims, data, learnable| {
            Slot::new(format!("decoder.{name}"), dims, data, learnable)
        };
        out.push(s(
            "kernel",
            vec![1, 1, 3, 3],
            self.decoder_kernel.weights(),
            true,
        ));
        out.push(s("bn_scale", vec![1], &self.decoder_bn.scale, true));
        out.push(s("bn_shift", vec![1], &self.decoder_bn.shift, true));
        out.push(s(
            "bn_running_mean",
            vec![1],
            &self.decoder_bn.running_mean,
            false,
        ));
        out.push(s(
            "bn_running_var",
            vec![1],
            &self.decoder_bn.running_var,
            false,
        ));
        out
    }

    /// Mutable twin of [`slots`](Self::slots), same order.
    pub fn slots_mut(&mut self) -> Vec<SlotMut<'_, T>> {
        let ab = self.config.ablation;
        let descent = !ab.contains(Ablation::PLAIN_CONV);
        let enc = !ab.fixed_encoders();
        let mut out = Vec::new();
        for (branch, layers) in [("base", &mut self.base), ("detail", &mut self.detail)] {
            for (i, l) in layers.iter_mut().enumerate() {
                let p = format!("{branch}.{i}");
                let c = l.kernel.out_channels();
                let s = |name: &str, dims, data, learnable| {
                    SlotMut::new(format!("{p}.{name}"), dims, data, learnable)
                };
                let LayerParams {
                    kernel,
                    eta,
                    theta,
                    bn,
                    prelu_slope,
                } = l;
                out.push(s("kernel", vec![c, 1, 3, 3], kernel.weights_mut(), enc));
                out.push(s("eta", vec![1], std::slice::from_mut(eta), enc && descent));
                out.push(s(
                    "theta",
                    vec![1],
                    std::slice::from_mut(theta),
                    enc && descent,
                ));
                let BatchNorm {
                    scale,
                    shift,
                    running_mean,
                    running_var,
                } = bn;
                out.push(s("bn_scale", vec![1], scale, enc));
                out.push(s("bn_shift", vec![1], shift, enc));
                out.push(s("bn_running_mean", vec![1], running_mean, false));
                out.push(s("bn_running_var", vec![1], running_var, false));
                out.push(s(
                    "prelu_slope",
                    vec![1],
                    std::slice::from_mut(prelu_slope),
                    enc,
                ));
            }
        }
        let s = |name: &str, dims, data, learnable| {
            SlotMut::new(format!("decoder.{name}"), dims, data, learnable)
        };
        out.push(s(
            "kernel",
            vec![1, 1, 3, 3],
            self.decoder_kernel.weights_mut(),
            true,
        ));
        let BatchNorm {
            scale,
            shift,
            running_mean,
            running_var,
        } = &mut self.decoder_bn;
        out.push(s("bn_scale", vec![1], scale, true));
        out.push(s("bn_shift", vec![1], shift, true));
        out.push(s("bn_running_mean", vec![1], running_mean, false));
        out.push(s("bn_running_var", vec![1], running_var, false));
        out
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.slots()
            .iter()
            .filter(|s| s.learnable)
            .map(|s| s.data.len())
            .sum()
    }

    /// Learnables concatenated in slot order.
    pub fn flatten_learnables(&self) -> Vec<T> {
        self.slots()
            .iter()
            .filter(|s| s.learnable)
            .flat_map(|s| s.data.iter().copied())
            .collect()
    }

    /// Inverse of [`flatten_learnables`](Self::flatten_learnables).
    pub fn assign_learnables(&mut self, flat: &[T]) {
        let mut offset = 0;
        for slot in self.slots_mut().into_iter().filter(|s| s.learnable) {
            let n = slot.data.len();
            slot.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(
            offset,
            flat.len(),
            "flat learnable vector has the wrong length"
        );
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for slot in z.slots_mut() {
            slot.data.fill(T::zero());
        }
        z
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config,
            base: self.base.iter().map(LayerParams::cast).collect(),
            detail: self.detail.iter().map(LayerParams::cast).collect(),
            decoder_kernel: self.decoder_kernel.cast(),
            decoder_bn: self.decoder_bn.cast(),
        }
    }
}

/// Closed-form learnable count for a configuration.
pub fn expected_parameter_count(config: &NetworkConfig) -> usize {
    let ab = config.ablation;
    let decoder = 9 + 2;
    if ab.fixed_encoders() {
        return decoder;
    }
    let descent = if ab.contains(Ablation::PLAIN_CONV) {
        0
    } else {
        2
    };
    let per_layer = 9 * config.channels + descent + 2 + 1;
    per_layer * 2 * config.layers + decoder
}

/// Draws one step size from the initialization distribution.
pub fn sample_eta(rng: &mut impl rand::Rng) -> f64 {
    Normal::new(ETA_INIT_MEAN, ETA_INIT_STD)
        .expect("valid normal parameters")
        .sample(rng)
}

fn init_kernel(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize) -> Kernel<f32> {
    let std = (2.0 / (9.0 * in_c as f64)).sqrt();
    let normal = Normal::new(0.0, std).expect("valid normal parameters");
    let w = (0..out_c * in_c * 9)
        .map(|_| normal.sample(rng) as f32)
        .collect();
    Kernel::from_vec(out_c, in_c, w).expect("init kernel dims")
}

/// Seeded initialization: step sizes ~ N(0.1, 0.03^2), theta 1e-3 (base) and 1
/// (detail), kernels ~ N(0, 2 / fan_in), BN identity, PReLU slope 0.25.
pub fn init_network(config: NetworkConfig, seed: u64) -> Result<NetworkParams<f32>> {
    if config.channels == 0 {
        return Err(Error::invalid("channels must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |theta: f64, rng: &mut ChaCha8Rng| LayerParams {
        kernel: init_kernel(rng, config.channels, 1),
        eta: sample_eta(rng) as f32,
        theta: theta as f32,
        bn: BatchNorm::new(1),
        prelu_slope: PRELU_INIT as f32,
    };
    let base = (0..config.layers)
        .map(|_| make(THETA_BASE_INIT, &mut rng))
        .collect();
    let detail = (0..config.layers)
        .map(|_| make(THETA_DETAIL_INIT, &mut rng))
        .collect();
    Ok(NetworkParams {
        config,
        base,
        detail,
        decoder_kernel: init_kernel(&mut rng, 1, 1),
        decoder_bn: BatchNorm::new(1),
    })
}
