//! The finite-difference gradient suite: every primitive, one full step of each
//! encoder, the decoder, the loss and the whole network, in double precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    l2_grad, l2_loss, ssim, ssim_grad, total_loss_with_grad, LossWeights, SSIM_WINDOW,
};
use crate::network::{
    backward, bcl_step, dcl_step, decoder_backward, decoder_forward, forward, init_network,
    step_backward, LayerParams, NetworkConfig, NetworkParams, THETA_BASE_INIT, THETA_DETAIL_INIT,
};
use crate::raster::Image;
use crate::tensorcore::{
    batch_norm, batch_norm_backward, check_gradients, conv2d, conv2d_backward, prelu,
    prelu_backward, reflect_pad, reflect_pad_backward, rot180_grad_to_free, sigmoid,
    sigmoid_backward, tie_rot180, BatchNorm, Dims4, GradReport, Kernel, Mode, Tensor4,
};

pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const COMPOSITE_TOL: f64 = 1e-4;

/// Side of the images used where the SSIM window has to fit.
pub const SSIM_CHECK_SIZE: usize = SSIM_WINDOW + 1;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seeds: Vec<u64>,
    /// Spatial side of the random inputs.
    pub size: usize,
    /// Network used for the end-to-end check.
    pub network: NetworkConfig,
    /// The first `full_network_seeds` seeds check every network coordinate.
    pub full_network_seeds: usize,
    /// Coordinates sampled for the remaining seeds; `None` checks all.
    pub network_coords: Option<usize>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: (0..5).collect(),
            size: 8,
            network: NetworkConfig::default(),
            full_network_seeds: 1,
            network_coords: Some(500),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, d: Dims4, lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(d, |_, _, _, _| rng.random_range(lo..hi))
}

fn tensor(d: Dims4, v: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(d, v.to_vec()).expect("fixed dims")
}

fn kernel(o: usize, i: usize, v: &[f64]) -> Kernel<f64> {
    Kernel::from_vec(o, i, v.to_vec()).expect("fixed dims")
}

fn random_kernel(rng: &mut ChaCha8Rng, o: usize, i: usize) -> Kernel<f64> {
    let v: Vec<f64> = (0..o * i * 9)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    kernel(o, i, &v)
}

fn tag(name: &str, seed: u64) -> String {
    format!("{name} seed={seed}")
}

fn check_pad(rng: &mut ChaCha8Rng, seed: u64, s: usize) -> Result<GradReport> {
    let d = Dims4::new(2, 2, s, s);
    let x = uniform(rng, d, -1.0, 1.0);
    let w = uniform(rng, Dims4::new(2, 2, s + 2, s + 2), -1.0, 1.0);
    let g = reflect_pad_backward(&w, d, 1)?;
    Ok(check_gradients(
        tag("reflect_pad", seed),
        x.data(),
        g.data(),
        None,
        PRIMITIVE_TOL,
        |v| {
            reflect_pad(&tensor(d, v), 1)
                .expect("valid pad")
                .dot(&w)
                .expect("dims")
        },
    ))
}

fn check_conv(rng: &mut ChaCha8Rng, seed: u64, s: usize) -> Result<Vec<GradReport>> {
    let d = Dims4::new(2, 3, s, s);
    let x = uniform(rng, d, -1.0, 1.0);
    let k = random_kernel(rng, 4, 3);
    let w = uniform(rng, Dims4::new(2, 4, s - 2, s - 2), -1.0, 1.0);
    let (gx, gk) = conv2d_backward(&x, &k, &w)?;
    let f = |x: &Tensor4<f64>, k: &Kernel<f64>| {
        conv2d(x, k).expect("valid conv").dot(&w).expect("dims")
    };
    Ok(vec![
        check_gradients(
            tag("conv2d/input", seed),
            x.data(),
            gx.data(),
            None,
            PRIMITIVE_TOL,
            |v| f(&tensor(d, v), &k),
        ),
        check_gradients(
            tag("conv2d/kernel", seed),
            k.weights(),
            gk.weights(),
            None,
            PRIMITIVE_TOL,
            |v| f(&x, &kernel(4, 3, v)),
        ),
    ])
}

fn check_tie(rng: &mut ChaCha8Rng, seed: u64, s: usize) -> Result<GradReport> {
    let x = uniform(rng, Dims4::new(2, 4, s, s), -1.0, 1.0);
    let free = random_kernel(rng, 4, 3);
    let w = uniform(rng, Dims4::new(2, 3, s - 2, s - 2), -1.0, 1.0);
    let (_, g_tied) = conv2d_backward(&x, &tie_rot180(&free), &w)?;
    let g = rot180_grad_to_free(&g_tied);
    Ok(check_gradients(
        tag("tie_rot180", seed),
        free.weights(),
        g.weights(),
        None,
        PRIMITIVE_TOL,
        |v| {
            conv2d(&x, &tie_rot180(&kernel(4, 3, v)))
                .expect("valid conv")
                .dot(&w)
                .expect("dims")
        },
    ))
}

fn check_bn(rng: &mut ChaCha8Rng, seed: u64, s: usize, mode: Mode) -> Result<GradReport> {
    let d = Dims4::new(3, 2, s, s);
    let x = uniform(rng, d, -1.0, 2.0);
    let mut bn = BatchNorm::new(2);
    bn.scale = vec![rng.random_range(0.5..1.5), rng.random_range(-1.5..-0.5)];
    bn.shift = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    bn.running_mean = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    bn.running_var = vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
    let w = uniform(rng, d, -1.0, 1.0);
    let out = batch_norm(&x, &bn, mode)?;
    let (gx, gs, gb) = batch_norm_backward(&out.cache, &bn.scale, &w)?;
    let n = d.len();
    let point: Vec<f64> = x
        .data()
        .iter()
        .chain(&bn.scale)
        .chain(&bn.shift)
        .copied()
        .collect();
    let analytic: Vec<f64> = gx.data().iter().chain(&gs).chain(&gb).copied().collect();
    let name = match mode {
        Mode::Train => "batch_norm/train",
        Mode::Eval => "batch_norm/eval",
    };
    Ok(check_gradients(
        tag(name, seed),
        &point,
        &analytic,
        None,
        PRIMITIVE_TOL,
        |v| {
            let mut b = bn.clone();
            b.scale = v[n..n + 2].to_vec();
            b.shift = v[n + 2..].to_vec();
            batch_norm(&tensor(d, &v[..n]), &b, mode)
                .expect("valid bn")
                .out
                .dot(&w)
                .expect("dims")
        },
    ))
}

fn check_prelu(rng: &mut ChaCha8Rng, seed: u64, s: usize) -> Result<GradReport> {
    let d = Dims4::new(2, 1, s, s);
    let x = uniform(rng, d, -1.0, 1.0);
    let slope = rng.random_range(0.1..0.4);
    let w = uniform(rng, d, -1.0, 1.0);
    let (gx, ga) = prelu_backward(&x, slope, &w)?;
    let n = d.len();
    let mut point = x.data().to_vec();
    point.push(slope);
    let mut analytic = gx.data().to_vec();
    analytic.push(ga);
    Ok(check_gradients(
        tag("prelu", seed),
        &point,
        &analytic,
        None,
        PRIMITIVE_TOL,
        |v| prelu(&tensor(d, &v[..n]), v[n]).dot(&w).expect("dims"),
    ))
}

fn check_sigmoid(rng: &mut ChaCha8Rng, seed: u64, s: usize) -> Result<GradReport> {
    let d = Dims4::new(2, 1, s, s);
    let x = uniform(rng, d, -4.0, 4.0);
    let w = uniform(rng, d, -1.0, 1.0);
    let g = sigmoid_backward(&sigmoid(&x), &w)?;
    Ok(check_gradients(
        tag("sigmoid", seed),
        x.data(),
        g.data(),
        None,
        PRIMITIVE_TOL,
        |v| sigmoid(&tensor(d, v)).dot(&w).expect("dims"),
    ))
}

fn random_image(rng: &mut ChaCha8Rng, s: usize) -> Image {
    Image::from_fn(s, s, |_, _| rng.random())
}

fn check_l2(rng: &mut ChaCha8Rng, seed: u64, s: usize) -> Result<GradReport> {
    let x = random_image(rng, s);
    let y = random_image(rng, s);
    let g = l2_grad(&x, &y)?;
    Ok(check_gradients(
        tag("l2_loss", seed),
        y.data(),
        g.data(),
        None,
        PRIMITIVE_TOL,
        |v| l2_loss(&x, &Image::new(s, s, v.to_vec()).expect("dims")).expect("dims"),
    ))
}

fn check_ssim(rng: &mut ChaCha8Rng, seed: u64) -> Result<Vec<GradReport>> {
    let s = SSIM_CHECK_SIZE;
    let a = random_image(rng, s);
    let b = random_image(rng, s);
    let img = |v: &[f64]| Image::new(s, s, v.to_vec()).expect("dims");
    let (_, gb) = ssim_grad(&a, &b)?;
    let (_, ga) = ssim_grad(&b, &a)?;
    Ok(vec![
        check_gradients(
            tag("ssim/first", seed),
            a.data(),
            ga.data(),
            None,
            PRIMITIVE_TOL,
            |v| ssim(&img(v), &b).expect("valid ssim"),
        ),
        check_gradients(
            tag("ssim/second", seed),
            b.data(),
            gb.data(),
            None,
            PRIMITIVE_TOL,
            |v| ssim(&a, &img(v)).expect("valid ssim"),
        ),
    ])
}

fn check_total_loss(rng: &mut ChaCha8Rng, seed: u64) -> Result<GradReport> {
    let s = SSIM_CHECK_SIZE;
    let d = Dims4::new(2, 1, s, s);
    let x = uniform(rng, d, 0.0, 1.0);
    let y = uniform(rng, d, 0.0, 1.0);
    let w = LossWeights::default();
    let (_, g) = total_loss_with_grad(&x, &y, w)?;
    Ok(check_gradients(
        tag("total_loss", seed),
        y.data(),
        g.data(),
        None,
        COMPOSITE_TOL,
        |v| {
            total_loss_with_grad(&x, &tensor(d, v), w)
                .expect("valid loss")
                .0
                .total
        },
    ))
}

fn layer_vector(p: &LayerParams<f64>) -> Vec<f64> {
    let mut v = p.kernel.weights().to_vec();
    v.extend([p.eta, p.theta, p.bn.scale[0], p.bn.shift[0], p.prelu_slope]);
    v
}

fn layer_from(template: &LayerParams<f64>, v: &[f64]) -> LayerParams<f64> {
    let c = template.kernel.out_channels();
    let k = 9 * c;
    let mut p = template.clone();
    p.kernel = kernel(c, 1, &v[..k]);
    p.eta = v[k];
    p.theta = v[k + 1];
    p.bn.scale = vec![v[k + 2]];
    p.bn.shift = vec![v[k + 3]];
    p.prelu_slope = v[k + 4];
    p
}

/// `kind` is "bcl", "dcl" or "plain".
fn check_step(
    rng: &mut ChaCha8Rng,
    seed: u64,
    s: usize,
    channels: usize,
    kind: &str,
) -> Result<GradReport> {
    let d = Dims4::new(2, 1, s, s);
    let b_in = uniform(rng, d, 0.0, 1.0);
    let x = uniform(rng, d, 0.0, 1.0);
    let std = (2.0f64 / 9.0).sqrt();
    let mut p = LayerParams {
        kernel: kernel(
            channels,
            1,
            &(0..9 * channels)
                .map(|_| rng.random_range(-std..std))
                .collect::<Vec<_>>(),
        ),
        eta: rng.random_range(0.05..0.15),
        theta: if kind == "dcl" {
            THETA_DETAIL_INIT
        } else {
            THETA_BASE_INIT
        },
        bn: BatchNorm::new(1),
        prelu_slope: rng.random_range(0.1..0.4),
    };
    p.bn.scale = vec![rng.random_range(0.5..1.5)];
    p.bn.shift = vec![rng.random_range(-0.3..0.3)];
    let plain = kind == "plain";
    let step = |b: &Tensor4<f64>, x: &Tensor4<f64>, p: &LayerParams<f64>| {
        if kind == "dcl" {
            dcl_step(b, x, p, Mode::Train, plain)
        } else {
            bcl_step(b, x, p, Mode::Train, plain)
        }
    };
    let w = uniform(rng, d, -1.0, 1.0);
    let out = step(&b_in, &x, &p)?;
    let g = step_backward(&out.cache, &p, &w)?;
    let n = d.len();
    let point: Vec<f64> = b_in
        .data()
        .iter()
        .chain(x.data())
        .copied()
        .chain(layer_vector(&p))
        .collect();
    let analytic: Vec<f64> = g
        .input
        .data()
        .iter()
        .chain(g.x.data())
        .copied()
        .chain(layer_vector(&g.params))
        .collect();
    Ok(check_gradients(
        tag(&format!("{kind}_step"), seed),
        &point,
        &analytic,
        None,
        COMPOSITE_TOL,
        |v| {
            let q = layer_from(&p, &v[2 * n..]);
            step(&tensor(d, &v[..n]), &tensor(d, &v[n..2 * n]), &q)
                .expect("valid step")
                .out
                .dot(&w)
                .expect("dims")
        },
    ))
}

fn check_decoder(rng: &mut ChaCha8Rng, seed: u64, s: usize) -> Result<GradReport> {
    let d = Dims4::new(2, 1, s, s);
    let input = uniform(rng, d, -1.0, 1.0);
    let k = random_kernel(rng, 1, 1);
    let mut bn = BatchNorm::new(1);
    bn.scale = vec![rng.random_range(0.5..1.5)];
    bn.shift = vec![rng.random_range(-0.3..0.3)];
    let w = uniform(rng, d, -1.0, 1.0);
    let (_, cache, _) = decoder_forward(&input, &k, &bn, Mode::Train)?;
    let g = decoder_backward(&cache, &k, &bn, &w)?;
    let n = d.len();
    let point: Vec<f64> = input
        .data()
        .iter()
        .chain(k.weights())
        .chain(&bn.scale)
        .chain(&bn.shift)
        .copied()
        .collect();
    let analytic: Vec<f64> = g
        .input
        .data()
        .iter()
        .chain(g.kernel.weights())
        .chain(&g.bn_scale)
        .chain(&g.bn_shift)
        .copied()
        .collect();
    Ok(check_gradients(
        tag("decoder", seed),
        &point,
        &analytic,
        None,
        COMPOSITE_TOL,
        |v| {
            let mut b = bn.clone();
            b.scale = vec![v[n + 9]];
            b.shift = vec![v[n + 10]];
            decoder_forward(
                &tensor(d, &v[..n]),
                &kernel(1, 1, &v[n..n + 9]),
                &b,
                Mode::Train,
            )
            .expect("valid decoder")
            .0
            .dot(&w)
            .expect("dims")
        },
    ))
}

fn network_params(config: NetworkConfig, seed: u64) -> Result<NetworkParams<f64>> {
    Ok(init_network(config, seed)?.cast())
}

/// Whole network, output contracted with random weights.
pub fn check_network(
    config: NetworkConfig,
    seed: u64,
    size: usize,
    coords: Option<usize>,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6574);
    let params = network_params(config, seed)?;
    let d = Dims4::new(2, 1, size, size);
    let x = uniform(&mut rng, d, 0.0, 1.0);
    let w = uniform(&mut rng, d, -1.0, 1.0);
    let f = forward(&x, &params, Mode::Train)?;
    let analytic = backward(f.tape, &w, &params)?.flatten_learnables();
    let point = params.flatten_learnables();
    let picked: Option<Vec<usize>> = coords
        .filter(|&k| k < point.len())
        .map(|k| sample(&mut rng, point.len(), k).into_vec());
    let mut probe = params.clone();
    Ok(check_gradients(
        tag(
            &format!("network[L={},C={}]", config.layers, config.channels),
            seed,
        ),
        &point,
        &analytic,
        picked.as_deref(),
        COMPOSITE_TOL,
        |v| {
            probe.assign_learnables(v);
            forward(&x, &probe, Mode::Train)
                .expect("valid forward")
                .output
                .dot(&w)
                .expect("dims")
        },
    ))
}

/// Whole network through the training loss.
pub fn check_network_loss(config: NetworkConfig, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c6f7373);
    let params = network_params(config, seed)?;
    let s = SSIM_CHECK_SIZE;
    let d = Dims4::new(2, 1, s, s);
    let x = uniform(&mut rng, d, 0.0, 1.0);
    let weights = LossWeights::default();
    let f = forward(&x, &params, Mode::Train)?;
    let (_, g) = total_loss_with_grad(&x, &f.output, weights)?;
    let analytic = backward(f.tape, &g, &params)?.flatten_learnables();
    let point = params.flatten_learnables();
    let mut probe = params.clone();
    Ok(check_gradients(
        tag(
            &format!("network+loss[L={},C={}]", config.layers, config.channels),
            seed,
        ),
        &point,
        &analytic,
        None,
        COMPOSITE_TOL,
        |v| {
            probe.assign_learnables(v);
            let out = forward(&x, &probe, Mode::Train)
                .expect("valid forward")
                .output;
            total_loss_with_grad(&x, &out, weights)
                .expect("valid loss")
                .0
                .total
        },
    ))
}

/// Runs every check for every seed.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<GradReport>> {
    let s = opts.size;
    let mut out = Vec::new();
    for (i, &seed) in opts.seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        out.push(check_pad(&mut rng, seed, s)?);
        out.extend(check_conv(&mut rng, seed, s)?);
        out.push(check_tie(&mut rng, seed, s)?);
        out.push(check_bn(&mut rng, seed, s, Mode::Train)?);
        out.push(check_bn(&mut rng, seed, s, Mode::Eval)?);
        out.push(check_prelu(&mut rng, seed, s)?);
        out.push(check_sigmoid(&mut rng, seed, s)?);
        out.push(check_l2(&mut rng, seed, s)?);
        out.extend(check_ssim(&mut rng, seed)?);
        out.push(check_total_loss(&mut rng, seed)?);
        for kind in ["bcl", "dcl", "plain"] {
            out.push(check_step(&mut rng, seed, s, opts.network.channels, kind)?);
        }
        out.push(check_decoder(&mut rng, seed, s)?);
        let coords = if i < opts.full_network_seeds {
            None
        } else {
            opts.network_coords
        };
        out.push(check_network(opts.network, seed, s, coords)?);
        out.push(check_network_loss(
            NetworkConfig {
                layers: 2,
                channels: 4,
                ..opts.network
            },
            seed,
        )?);
    }
    Ok(out)
}
