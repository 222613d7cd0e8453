//! Reconstruction training: random crops, two-phase learning rate, Adam or SGD.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{total_loss_with_grad, LossWeights, DEFAULT_MU};
use crate::network::{
    backward, checkpoint, forward, init_network, Ablation, NetworkConfig, NetworkParams,
};
use crate::raster::Image;
use crate::tensorcore::{Mode, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::invalid(format!(
                "unknown optimizer {other:?} (adam|sgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub mu: f64,
    pub l2_weight: f64,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub phase_split: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm cap; off by default.
    pub grad_clip: Option<f64>,
    pub network: NetworkConfig,
    /// Where to write the parameters and batch if the loss goes non-finite.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 32,
            crop: 128,
            mu: DEFAULT_MU,
            l2_weight: 1.0,
            lr_phase1: 1e-2,
            lr_phase2: 1e-3,
            phase_split: 40,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            network: NetworkConfig::default(),
            snapshot_dir: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "crop",
    "mu",
    "l2_weight",
    "lr_phase1",
    "lr_phase2",
    "phase_split",
    "seed",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "grad_clip",
    "layers",
    "channels",
    "ablation",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    /// The config as ordered `(key, value)` pairs; round-trips through [`set`](Self::set).
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let v = [
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.crop.to_string(),
            self.mu.to_string(),
            self.l2_weight.to_string(),
            self.lr_phase1.to_string(),
            self.lr_phase2.to_string(),
            self.phase_split.to_string(),
            self.seed.to_string(),
            self.optimizer.to_string(),
            self.adam_beta1.to_string(),
            self.adam_beta2.to_string(),
            self.adam_eps.to_string(),
            self.grad_clip
                .map_or_else(|| "none".to_string(), |c| c.to_string()),
            self.network.layers.to_string(),
            self.network.channels.to_string(),
            self.network.ablation.to_string(),
        ];
        CONFIG_KEYS.iter().copied().zip(v).collect()
    }

    /// Sets one key. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "crop" => self.crop = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "l2_weight" => self.l2_weight = parse(key, value)?,
            "lr_phase1" => self.lr_phase1 = parse(key, value)?,
            "lr_phase2" => self.lr_phase2 = parse(key, value)?,
            "phase_split" => self.phase_split = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "layers" => self.network.layers = parse(key, value)?,
            "channels" => self.network.channels = parse(key, value)?,
            "ablation" => self.network.ablation = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Plain `key = value` lines.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Loss weights after applying the `l2_only` / `ssim_only` ablations.
    pub fn loss_weights(&self) -> LossWeights {
        let ab = self.network.ablation;
        LossWeights {
            l2_weight: if ab.contains(Ablation::SSIM_ONLY) {
                0.0
            } else {
                self.l2_weight
            },
            mu: if ab.contains(Ablation::L2_ONLY) {
                0.0
            } else {
                self.mu
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if self.crop < crate::losses::SSIM_WINDOW {
            return Err(Error::invalid(format!(
                "crop {} is smaller than the {}-pixel SSIM window",
                self.crop,
                crate::losses::SSIM_WINDOW
            )));
        }
        if self.batch_size * self.crop * self.crop < 2 {
            return Err(Error::invalid(
                "batch norm needs at least two values per batch",
            ));
        }
        for (name, v) in [
            ("lr_phase1", self.lr_phase1),
            ("lr_phase2", self.lr_phase2),
            ("mu", self.mu),
            ("l2_weight", self.l2_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return Err(Error::invalid(
                "adam betas must lie in [0, 1) and eps must be > 0",
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("grad_clip must be > 0, got {c}")));
            }
        }
        self.network.ablation.validate()
    }
}

/// Learning rate for a (zero-based) epoch.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} out of range (0..{})",
            cfg.epochs
        )));
    }
    Ok(if epoch < cfg.phase_split {
        cfg.lr_phase1
    } else {
        cfg.lr_phase2
    })
}

pub fn steps_per_epoch(images: usize, batch_size: usize) -> usize {
    images.div_ceil(batch_size)
}

fn check_dataset(images: &[Image], crop: usize) -> Result<()> {
    if images.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for (i, img) in images.iter().enumerate() {
        if img.height() < crop || img.width() < crop {
            return Err(Error::invalid(format!(
                "training image {i} is {}x{}, smaller than the {crop}x{crop} crop",
                img.height(),
                img.width()
            )));
        }
    }
    Ok(())
}

/// `batch_size` crops, each from a uniformly chosen image at a uniform offset.
pub fn sample_batch(
    images: &[Image],
    batch_size: usize,
    crop: usize,
    rng: &mut impl Rng,
) -> Result<Tensor4<f32>> {
    check_dataset(images, crop)?;
    let items = (0..batch_size)
        .map(|_| {
            let img = &images[rng.random_range(0..images.len())];
            let top = rng.random_range(0..=img.height() - crop);
            let left = rng.random_range(0..=img.width() - crop);
            Ok(img.crop(top, left, crop, crop)?.to_tensor::<f32>())
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor4::stack(&items)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l2: f64,
    pub ssim_part: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaThetaRecord {
    /// Number of optimizer steps applied when the values were read.
    pub step: usize,
    pub encoder: &'static str,
    pub layer: usize,
    pub eta: f32,
    pub theta: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epoch_means: Vec<f64>,
    pub eta_theta: Vec<EtaThetaRecord>,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub config: String,
}

impl TrainLog {
    /// Loss of the very first batch, before any update.
    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.total)
    }

    pub fn final_epoch_mean(&self) -> Option<f64> {
        self.epoch_means.last().copied()
    }

    pub fn write_loss_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,epoch,lr,l2,ssim_part,total")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.step, s.epoch, s.lr, s.l2, s.ssim_part, s.total
            )?;
        }
        Ok(())
    }

    pub fn write_eta_theta_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,encoder,layer,eta,theta")?;
        for r in &self.eta_theta {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step, r.encoder, r.layer, r.eta, r.theta
            )?;
        }
        Ok(())
    }

    /// One series of `(step, eta, theta)` per encoder layer.
    pub fn series(&self, encoder: &str, layer: usize) -> Vec<(usize, f32, f32)> {
        self.eta_theta
            .iter()
            .filter(|r| r.encoder == encoder && r.layer == layer)
            .map(|r| (r.step, r.eta, r.theta))
            .collect()
    }

    /// FNV-1a over the bit patterns of the loss trace.
    pub fn trace_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for s in &self.steps {
            for v in [s.l2, s.ssim_part, s.total] {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= (lr * g) as f32;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let update = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
                    *p -= update as f32;
                }
            }
        }
    }
}

fn record_eta_theta(params: &NetworkParams<f32>, step: usize, out: &mut Vec<EtaThetaRecord>) {
    if params.config.ablation.fixed_encoders() {
        return;
    }
    for (encoder, layers) in [("base", &params.base), ("detail", &params.detail)] {
        for (layer, l) in layers.iter().enumerate() {
            out.push(EtaThetaRecord {
                step,
                encoder,
                layer,
                eta: l.eta,
                theta: l.theta,
            });
        }
    }
}

fn snapshot(cfg: &TrainConfig, params: &NetworkParams<f32>, batch: &Tensor4<f32>) -> String {
    let Some(dir) = &cfg.snapshot_dir else {
        return String::new();
    };
    let saved = (|| -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(params, dir.join("nonfinite_params.auif"))?;
        for b in 0..batch.dims().n {
            crate::pipeline::save_gray16(
                &Image::from_tensor(batch, b),
                dir.join(format!("nonfinite_batch_{b}.png")),
            )?;
        }
        Ok(dir.clone())
    })();
    match saved {
        Ok(d) => format!("; snapshot written to {}", d.display()),
        Err(e) => format!("; snapshot failed: {e}"),
    }
}

/// Trains from the seeded initialization.
pub fn train(images: &[Image], cfg: &TrainConfig) -> Result<(NetworkParams<f32>, TrainLog)> {
    cfg.validate()?;
    let params = init_network(cfg.network, cfg.seed)?;
    train_from(params, images, cfg)
}

/// Trains the given parameters in place of a fresh initialization.
pub fn train_from(
    mut params: NetworkParams<f32>,
    images: &[Image],
    cfg: &TrainConfig,
) -> Result<(NetworkParams<f32>, TrainLog)> {
    cfg.validate()?;
    check_dataset(images, cfg.crop)?;
    let start = Instant::now();
    let weights = cfg.loss_weights();
    // the crop stream is independent of the initialization stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let per_epoch = steps_per_epoch(images.len(), cfg.batch_size);
    let mut opt = Optimizer::new(cfg, params.parameter_count());
    let mut log = TrainLog {
        steps: Vec::with_capacity(per_epoch * cfg.epochs),
        epoch_means: Vec::with_capacity(cfg.epochs),
        eta_theta: Vec::new(),
        seed: cfg.seed,
        wall_clock_secs: 0.0,
        config: cfg.echo(),
    };
    record_eta_theta(&params, 0, &mut log.eta_theta);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg)?;
        let mut epoch_sum = 0.0;
        for _ in 0..per_epoch {
            let batch = sample_batch(images, cfg.batch_size, cfg.crop, &mut rng)?;
            let fwd = forward(&batch, &params, Mode::Train)?;
            let (loss, grad_out) = total_loss_with_grad(&batch, &fwd.output, weights)?;
            if !loss.total.is_finite() || !grad_out.all_finite() {
                let where_ = snapshot(cfg, &params, &batch);
                return Err(Error::NonFinite(format!(
                    "loss {} at step {step} (epoch {epoch}){where_}",
                    loss.total
                )));
            }
            let grads = backward(fwd.tape, &grad_out, &params)?;
            params.apply_bn_updates(&fwd.bn_updates);
            let mut g: Vec<f64> = grads
                .flatten_learnables()
                .iter()
                .map(|&v| v as f64)
                .collect();
            if let Some(cap) = cfg.grad_clip {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > cap {
                    g.iter_mut().for_each(|v| *v *= cap / norm);
                }
            }
            if g.iter().any(|v| !v.is_finite()) {
                let where_ = snapshot(cfg, &params, &batch);
                return Err(Error::NonFinite(format!(
                    "gradient at step {step} (epoch {epoch}){where_}"
                )));
            }
            let mut flat = params.flatten_learnables();
            opt.step(&mut flat, &g, lr);
            params.assign_learnables(&flat);
            log.steps.push(StepRecord {
                step,
                epoch,
                lr,
                l2: loss.l2_part,
                ssim_part: loss.ssim_part,
                total: loss.total,
            });
            epoch_sum += loss.total;
            step += 1;
            record_eta_theta(&params, step, &mut log.eta_theta);
        }
        log.epoch_means.push(epoch_sum / per_epoch as f64);
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((params, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    pub final_losses: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub cv: f64,
}

/// Trains `repeats` times with seeds `cfg.seed, cfg.seed + 1, ...` and
/// summarizes the spread of the final epoch-mean loss.
pub fn repeat_runs(images: &[Image], cfg: &TrainConfig, repeats: usize) -> Result<RepeatSummary> {
    if repeats < 2 {
        return Err(Error::invalid("repeat study needs at least 2 runs"));
    }
    let mut seeds = Vec::with_capacity(repeats);
    let mut finals = Vec::with_capacity(repeats);
    for i in 0..repeats as u64 {
        let c = TrainConfig {
            seed: cfg.seed + i,
            ..cfg.clone()
        };
        let (_, log) = train(images, &c)?;
        seeds.push(c.seed);
        finals.push(log.final_epoch_mean().expect("at least one epoch"));
    }
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let std = (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(RepeatSummary {
        seeds,
        final_losses: finals,
        mean,
        std,
        cv: std / mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            crop: 16,
            network: NetworkConfig {
                layers: 2,
                channels: 4,
                ablation: Ablation::NONE,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_schedule() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.epochs, c.batch_size, c.crop, c.phase_split),
            (80, 32, 128, 40)
        );
        assert_eq!((c.lr_phase1, c.lr_phase2, c.mu), (1e-2, 1e-3, 5.0));
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        assert_eq!(c.grad_clip, None);
    }

    #[test]
    fn lr_boundaries() {
        let c = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &c).unwrap(), 1e-2);
        assert_eq!(lr_at_epoch(39, &c).unwrap(), 1e-2);
        assert_eq!(lr_at_epoch(40, &c).unwrap(), 1e-3);
        assert_eq!(lr_at_epoch(79, &c).unwrap(), 1e-3);
        assert!(lr_at_epoch(80, &c).is_err());
        let c = TrainConfig {
            phase_split: 10,
            ..c
        };
        assert_eq!(lr_at_epoch(9, &c).unwrap(), 1e-2);
        assert_eq!(lr_at_epoch(10, &c).unwrap(), 1e-3);
    }

    #[test]
    fn epoch_length_rounds_up() {
        assert_eq!(steps_per_epoch(180, 32), 6);
        assert_eq!(steps_per_epoch(16, 4), 4);
        assert_eq!(steps_per_epoch(1, 32), 1);
    }

    #[test]
    fn config_entries_round_trip() {
        let mut c = TrainConfig {
            grad_clip: Some(2.5),
            seed: 17,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        c.network.ablation = Ablation::PLAIN_CONV.union(Ablation::L2_ONLY);
        let mut d = TrainConfig::default();
        for (k, v) in c.entries() {
            assert!(d.set(k, &v).unwrap(), "{k}");
        }
        assert_eq!(c, d);
        assert!(!d.set("bogus", "1").unwrap());
        assert!(d.set("epochs", "x").is_err());
    }

    #[test]
    fn crops_of_constant_image_are_constant() {
        let imgs = vec![Image::filled(20, 30, 0.25)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&imgs, 3, 16, &mut rng).unwrap();
        assert_eq!(b.dims(), crate::tensorcore::Dims4::new(3, 1, 16, 16));
        assert!(b.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn crops_stay_within_source_range() {
        let imgs = synthetic::training_corpus(3, 40, 40, 5);
        let lo = imgs
            .iter()
            .flat_map(|i| i.data())
            .cloned()
            .fold(f64::INFINITY, f64::min) as f32;
        let hi = imgs
            .iter()
            .flat_map(|i| i.data())
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max) as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&imgs, 8, 16, &mut rng).unwrap();
        assert!(b
            .data()
            .iter()
            .all(|&v| (lo..=hi).contains(&v) && (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn batches_are_seed_deterministic() {
        let imgs = synthetic::training_corpus(4, 32, 32, 2);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| sample_batch(&imgs, 2, 16, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn rejects_empty_and_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_batch(&[], 1, 16, &mut rng).is_err());
        assert!(sample_batch(&[Image::filled(15, 40, 0.0)], 1, 16, &mut rng).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_learnables() {
        let imgs = synthetic::training_corpus(2, 16, 16, 0);
        let cfg = TrainConfig {
            epochs: 1,
            lr_phase1: 0.0,
            lr_phase2: 0.0,
            ..tiny()
        };
        let before = init_network(cfg.network, cfg.seed).unwrap();
        let (after, log) = train(&imgs, &cfg).unwrap();
        assert_eq!(log.steps.len(), 1);
        let bits = |p: &NetworkParams<f32>| {
            p.flatten_learnables()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&before), bits(&after));
    }

    #[test]
    fn same_seed_same_trace() {
        let imgs = synthetic::training_corpus(4, 24, 24, 1);
        let (p1, l1) = train(&imgs, &tiny()).unwrap();
        let (p2, l2) = train(&imgs, &tiny()).unwrap();
        assert_eq!(l1.trace_hash(), l2.trace_hash());
        assert_eq!(p1, p2);
        assert_eq!(l1.steps.len(), 2 * 2);
        assert_eq!(l1.eta_theta.len(), (4 + 1) * 4);
        assert!(l1.steps.iter().all(|s| s.total.is_finite()));
    }

    #[test]
    fn eta_theta_move_and_csv_shapes() {
        let imgs = synthetic::training_corpus(4, 24, 24, 1);
        let (_, log) = train(&imgs, &tiny()).unwrap();
        let s = log.series("base", 1);
        assert_eq!(s.len(), 5);
        assert_ne!(s.first().unwrap().1, s.last().unwrap().1);
        let mut buf = Vec::new();
        log.write_loss_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,epoch,lr,l2,ssim_part,total\n"));
        assert_eq!(text.lines().count(), 1 + 4);
        let mut buf = Vec::new();
        log.write_eta_theta_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 20);
    }

    #[test]
    fn sgd_and_clipping_train() {
        let imgs = synthetic::training_corpus(2, 16, 16, 3);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            grad_clip: Some(0.5),
            ..tiny()
        };
        let (_, log) = train(&imgs, &cfg).unwrap();
        assert!(log.steps.iter().all(|s| s.total.is_finite()));
    }

    #[test]
    fn non_finite_loss_aborts_with_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let mut imgs = synthetic::training_corpus(1, 16, 16, 0);
        imgs[0].data_mut()[40] = f64::NAN;
        let cfg = TrainConfig {
            snapshot_dir: Some(dir.path().to_path_buf()),
            ..tiny()
        };
        match train(&imgs, &cfg) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("snapshot written"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(dir.path().join("nonfinite_params.auif").exists());
        assert!(dir.path().join("nonfinite_batch_0.png").exists());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let imgs = synthetic::training_corpus(1, 16, 16, 0);
        for c in [
            TrainConfig { crop: 8, ..tiny() },
            TrainConfig {
                epochs: 0,
                ..tiny()
            },
            TrainConfig {
                lr_phase1: f64::NAN,
                ..tiny()
            },
            TrainConfig {
                grad_clip: Some(0.0),
                ..tiny()
            },
        ] {
            assert!(train(&imgs, &c).is_err());
        }
    }
}
