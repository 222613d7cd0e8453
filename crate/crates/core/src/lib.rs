//! Unrolled two-scale decomposition network for infrared/visible image fusion.
//!
//! A gradient-descent solver for a base/detail decomposition objective is
//! unrolled into tied-kernel convolutional layers, trained to reconstruct its
//! input, and then used at test time to fuse an infrared/visible pair by merging
//! the two encoders' feature maps before decoding.
//!
//! * [`tensorcore`]: tensors and hand-differentiated primitives
//! * [`decompose`]: classical (non-learned) two-scale decompositions and a dense oracle
//! * [`network`]: the unrolled encoders, decoder and checkpoint format
//! * [`losses`]: l2 + SSIM reconstruction loss
//! * [`trainer`]: seeded training loop
//! * [`fusion`]: test-time merge strategies
//! * [`metrics`]: EN, SD, SF, VIF, AG, SCD
//! * [`pipeline`]: image I/O, dataset pairing and run configuration

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decompose;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
mod raster;
pub mod synthetic;
pub mod tensorcore;
pub mod trainer;

pub use error::{Error, Result};
pub use fusion::{fuse, FusionResult, MergeStrategy};
pub use losses::{total_loss, LossValue};
pub use metrics::MetricReport;
pub use network::{Ablation, LayerParams, NetworkConfig, NetworkParams};
pub use raster::Image;
pub use tensorcore::{Dims4, Kernel, Mode, Scalar, Tensor4};
pub use trainer::{TrainConfig, TrainLog};
