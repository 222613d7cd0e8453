use crate::decompose::{filter_decompose, filter_same, optim_decompose, FilterBank};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensorcore::{GradTape, Kernel, Mode, Scalar, Tensor4};

use super::layers::{
    bcl_step, dcl_step, decoder_backward, decoder_forward, step_backward, DecoderCache, StepCache,
};
use super::{Ablation, NetworkParams};

/// Settings of the optimization split used by the `optim_decomp` ablation.
pub const OPTIM_DECOMP_LAMBDA: f64 = 1.0;
pub const OPTIM_DECOMP_STEP: f64 = 0.05;
pub const OPTIM_DECOMP_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Base,
    Detail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnSlot {
    Layer(Branch, usize),
    Decoder,
}

/// Running-statistic update produced by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub slot: BnSlot,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Record<T> {
    Step {
        branch: Branch,
        layer: usize,
        cache: StepCache<T>,
    },
    Decoder {
        cache: DecoderCache<T>,
        use_base: bool,
        use_detail: bool,
    },
}

/// Output of a taped forward pass.
#[derive(Debug)]
pub struct Forward<T> {
    pub output: Tensor4<T>,
    pub base: Tensor4<T>,
    pub detail: Tensor4<T>,
    pub tape: GradTape<Record<T>>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            let bn = match u.slot {
                BnSlot::Layer(Branch::Base, i) => &mut self.base[i].bn,
                BnSlot::Layer(Branch::Detail, i) => &mut self.detail[i].bn,
                BnSlot::Decoder => &mut self.decoder_bn,
            };
            bn.running_mean.clone_from(&u.mean);
            bn.running_var.clone_from(&u.var);
        }
    }
}

fn check_input<T: Scalar>(x: &Tensor4<T>) -> Result<()> {
    if x.dims().c != 1 {
        return Err(Error::invalid(format!(
            "network input must have 1 channel, got {}",
            x.dims()
        )));
    }
    Ok(())
}

fn filtered<T: Scalar>(x: &Tensor4<T>, k: &Kernel<f64>) -> Result<Tensor4<T>> {
    let items = (0..x.dims().n)
        .map(|b| Ok(filter_same(&Image::from_tensor(x, b), k)?.to_tensor::<T>()))
        .collect::<Result<Vec<_>>>()?;
    Tensor4::stack(&items)
}

fn fixed_split<T: Scalar>(x: &Tensor4<T>, ablation: Ablation) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let mut bases = Vec::new();
    let mut details = Vec::new();
    for b in 0..x.dims().n {
        let img = Image::from_tensor(x, b);
        let r = if ablation.contains(Ablation::FILTER_DECOMP) {
            filter_decompose(&img)?
        } else {
            optim_decompose(
                &img,
                OPTIM_DECOMP_LAMBDA,
                OPTIM_DECOMP_ITERS,
                OPTIM_DECOMP_STEP,
            )?
        };
        bases.push(r.base.to_tensor::<T>());
        details.push(r.detail.to_tensor::<T>());
    }
    Ok((Tensor4::stack(&bases)?, Tensor4::stack(&details)?))
}

fn encode_taped<T: Scalar>(
    x: &Tensor4<T>,
    params: &NetworkParams<T>,
    mode: Mode,
    mut tape: Option<&mut GradTape<Record<T>>>,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    check_input(x)?;
    let ab = params.config.ablation;
    if ab.fixed_encoders() {
        return fixed_split(x, ab);
    }
    let (mut b, mut d) = if ab.contains(Ablation::NO_INIT) {
        (x.clone(), x.clone())
    } else {
        (
            filtered(x, &FilterBank::blur3())?,
            filtered(x, &FilterBank::laplacian4())?,
        )
    };
    let plain = ab.contains(Ablation::PLAIN_CONV);
    for (i, layer) in params.base.iter().enumerate() {
        let step = bcl_step(&b, x, layer, mode, plain)?;
        b = step.out;
        if let Some((mean, var)) = step.running {
            updates.push(BnUpdate {
                slot: BnSlot::Layer(Branch::Base, i),
                mean,
                var,
            });
        }
        if let Some(t) = tape.as_deref_mut() {
            t.push(Record::Step {
                branch: Branch::Base,
                layer: i,
                cache: step.cache,
            });
        }
    }
    for (i, layer) in params.detail.iter().enumerate() {
        let step = dcl_step(&d, x, layer, mode, plain)?;
        d = step.out;
        if let Some((mean, var)) = step.running {
            updates.push(BnUpdate {
                slot: BnSlot::Layer(Branch::Detail, i),
                mean,
                var,
            });
        }
        if let Some(t) = tape.as_deref_mut() {
            t.push(Record::Step {
                branch: Branch::Detail,
                layer: i,
                cache: step.cache,
            });
        }
    }
    Ok((b, d))
}

fn reconstruct_taped<T: Scalar>(
    b: &Tensor4<T>,
    d: &Tensor4<T>,
    params: &NetworkParams<T>,
    mode: Mode,
    tape: Option<&mut GradTape<Record<T>>>,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<Tensor4<T>> {
    b.expect_same_dims(d)?;
    let ab = params.config.ablation;
    let use_base = !ab.contains(Ablation::DETAIL_ONLY);
    let use_detail = !ab.contains(Ablation::BASE_ONLY);
    let input = match (use_base, use_detail) {
        (true, true) => b.add(d)?,
        (true, false) => b.clone(),
        _ => d.clone(),
    };
    let (out, cache, running) =
        decoder_forward(&input, &params.decoder_kernel, &params.decoder_bn, mode)?;
    if let Some((mean, var)) = running {
        updates.push(BnUpdate {
            slot: BnSlot::Decoder,
            mean,
            var,
        });
    }
    if let Some(t) = tape {
        t.push(Record::Decoder {
            cache,
            use_base,
            use_detail,
        });
    }
    Ok(out)
}

/// Runs both encoders: returns the final (base, detail) feature maps.
pub fn encode<T: Scalar>(
    x: &Tensor4<T>,
    params: &NetworkParams<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    encode_taped(x, params, mode, None, &mut Vec::new())
}

/// Decodes a (base, detail) pair into an image in (0, 1).
pub fn reconstruct<T: Scalar>(
    b: &Tensor4<T>,
    d: &Tensor4<T>,
    params: &NetworkParams<T>,
    mode: Mode,
) -> Result<Tensor4<T>> {
    reconstruct_taped(b, d, params, mode, None, &mut Vec::new())
}

/// Full encode/decode pass, recording what [`backward`] needs.
pub fn forward<T: Scalar>(
    x: &Tensor4<T>,
    params: &NetworkParams<T>,
    mode: Mode,
) -> Result<Forward<T>> {
    let mut tape = GradTape::new();
    let mut bn_updates = Vec::new();
    let (base, detail) = encode_taped(x, params, mode, Some(&mut tape), &mut bn_updates)?;
    let output = reconstruct_taped(
        &base,
        &detail,
        params,
        mode,
        Some(&mut tape),
        &mut bn_updates,
    )?;
    Ok(Forward {
        output,
        base,
        detail,
        tape,
        bn_updates,
    })
}

/// Gradients of all learnables given the gradient of the reconstruction.
/// The result has the same layout as `params`; running statistics are zero.
pub fn backward<T: Scalar>(
    tape: GradTape<Record<T>>,
    grad_output: &Tensor4<T>,
    params: &NetworkParams<T>,
) -> Result<NetworkParams<T>> {
    let mut grads = params.zeros_like();
    let mut g_base: Option<Tensor4<T>> = None;
    let mut g_detail: Option<Tensor4<T>> = None;
    tape.replay(|record| -> Result<()> {
        match record {
            Record::Decoder {
                cache,
                use_base,
                use_detail,
            } => {
                let g = decoder_backward(
                    &cache,
                    &params.decoder_kernel,
                    &params.decoder_bn,
                    grad_output,
                )?;
                grads.decoder_kernel = g.kernel;
                grads.decoder_bn.scale = g.bn_scale;
                grads.decoder_bn.shift = g.bn_shift;
                let zero = Tensor4::zeros(g.input.dims());
                g_base = Some(if use_base {
                    g.input.clone()
                } else {
                    zero.clone()
                });
                g_detail = Some(if use_detail { g.input } else { zero });
            }
            Record::Step {
                branch,
                layer,
                cache,
            } => {
                let (slot, layer_params, store) = match branch {
                    Branch::Base => (&mut g_base, &params.base[layer], &mut grads.base[layer]),
                    Branch::Detail => (
                        &mut g_detail,
                        &params.detail[layer],
                        &mut grads.detail[layer],
                    ),
                };
                let upstream = slot
                    .take()
                    .ok_or_else(|| Error::Internal("step recorded before decoder".into()))?;
                let g = step_backward(&cache, layer_params, &upstream)?;
                *slot = Some(g.input);
                store.kernel = g.params.kernel;
                store.eta = g.params.eta;
                store.theta = g.params.theta;
                store.bn.scale = g.params.bn.scale;
                store.bn.shift = g.params.bn.shift;
                store.prelu_slope = g.params.prelu_slope;
            }
        }
        Ok(())
    })?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::super::{init_network, NetworkConfig};
    use super::*;
    use crate::tensorcore::Dims4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(ablation: Ablation) -> NetworkParams<f32> {
        init_network(
            NetworkConfig {
                layers: 2,
                channels: 4,
                ablation,
            },
            3,
        )
        .unwrap()
    }

    fn input(seed: u64, d: Dims4) -> Tensor4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(d, |_, _, _, _| rng.random())
    }

    #[test]
    fn empty_chain_returns_initialization() {
        let p = small(Ablation::NONE);
        let p0 = NetworkParams {
            base: Vec::new(),
            detail: Vec::new(),
            config: NetworkConfig {
                layers: 0,
                ..p.config
            },
            ..p
        };
        let x = input(0, Dims4::new(1, 1, 7, 7));
        let (b, d) = encode(&x, &p0, Mode::Eval).unwrap();
        assert_eq!(b, filtered(&x, &FilterBank::blur3()).unwrap());
        assert_eq!(d, filtered(&x, &FilterBank::laplacian4()).unwrap());
    }

    #[test]
    fn shapes_and_output_range() {
        let p = small(Ablation::NONE);
        for (h, w) in [(4, 4), (9, 6), (16, 11)] {
            let x = input(1, Dims4::new(2, 1, h, w));
            let (b, d) = encode(&x, &p, Mode::Train).unwrap();
            assert_eq!(b.dims(), x.dims());
            assert_eq!(d.dims(), x.dims());
            let y = reconstruct(&b, &d, &p, Mode::Train).unwrap();
            assert_eq!(y.dims(), x.dims());
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let p = small(Ablation::NONE);
        let x = input(2, Dims4::new(1, 1, 10, 10));
        let a = encode(&x, &p, Mode::Eval).unwrap();
        let b = encode(&x, &p, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn base_only_ignores_detail() {
        let p = small(Ablation::BASE_ONLY);
        let x = input(3, Dims4::new(1, 1, 8, 8));
        let (b, d) = encode(&x, &p, Mode::Eval).unwrap();
        let with = reconstruct(&b, &d, &p, Mode::Eval).unwrap();
        let without = reconstruct(&b, &Tensor4::zeros(d.dims()), &p, Mode::Eval).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn no_init_starts_from_input() {
        let mut p = small(Ablation::NO_INIT);
        p.base.clear();
        p.detail.clear();
        let x = input(4, Dims4::new(1, 1, 6, 6));
        let (b, d) = encode(&x, &p, Mode::Eval).unwrap();
        assert_eq!(b, x);
        assert_eq!(d, x);
    }

    #[test]
    fn tape_has_one_record_per_layer_plus_decoder() {
        let p = small(Ablation::NONE);
        let x = input(5, Dims4::new(2, 1, 6, 6));
        let f = forward(&x, &p, Mode::Train).unwrap();
        assert_eq!(f.tape.len(), 2 * 2 + 1);
        assert_eq!(f.bn_updates.len(), 2 * 2 + 1);
        let g = backward(f.tape, &Tensor4::filled(x.dims(), 1.0), &p).unwrap();
        assert!(g.flatten_learnables().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn plain_conv_gives_no_descent_gradient() {
        let p = small(Ablation::PLAIN_CONV);
        let x = input(6, Dims4::new(2, 1, 6, 6));
        let f = forward(&x, &p, Mode::Train).unwrap();
        let g = backward(f.tape, &Tensor4::filled(x.dims(), 1.0), &p).unwrap();
        assert!(g
            .base
            .iter()
            .chain(&g.detail)
            .all(|l| l.eta == 0.0 && l.theta == 0.0));
    }

    #[test]
    fn fixed_encoders_bypass_layers() {
        for ab in [Ablation::FILTER_DECOMP, Ablation::OPTIM_DECOMP] {
            let p = small(ab);
            let x = input(7, Dims4::new(2, 1, 8, 8));
            let f = forward(&x, &p, Mode::Train).unwrap();
            assert_eq!(f.tape.len(), 1);
            let sum = f.base.add(&f.detail).unwrap();
            for (s, v) in sum.data().iter().zip(x.data()) {
                assert!((s - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_multichannel() {
        let p = small(Ablation::NONE);
        assert!(encode(
            &Tensor4::<f32>::zeros(Dims4::new(1, 2, 6, 6)),
            &p,
            Mode::Eval
        )
        .is_err());
    }
}
