//! Fixtures shared by the benchmarks.

use auif_core::network::init_network;
use auif_core::synthetic;
use auif_core::{Dims4, Image, Kernel, NetworkConfig, NetworkParams, Tensor4};

pub fn feature_map(channels: usize, side: usize) -> Tensor4<f32> {
    let d = Dims4 {
        n: 1,
        c: channels,
        h: side,
        w: side,
    };
    Tensor4::from_fn(d, |_, c, y, x| {
        ((c * 7 + y * 3 + x) % 17) as f32 / 17.0 - 0.5
    })
}

pub fn kernel(out: usize, inp: usize) -> Kernel<f32> {
    let w = (0..out * inp * 9)
        .map(|i| ((i % 11) as f32 - 5.0) / 50.0)
        .collect();
    Kernel::from_vec(out, inp, w).expect("sized to fit")
}

pub fn network() -> NetworkParams<f32> {
    init_network(NetworkConfig::default(), 0).expect("default config is valid")
}

pub fn pair(side: usize) -> (Image, Image) {
    synthetic::ir_vis_pair(side, side, 7)
}

pub fn corpus(count: usize, side: usize) -> Vec<Image> {
    synthetic::training_corpus(count, side, side, 3)
}
