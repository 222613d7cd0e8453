//! End-to-end acceptance gate. Runs every criterion, prints one line each, and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use auif_core::decompose::{
    classic_gd_decompose, classic_terms, linear_oracle, optim_decompose, optim_terms,
    ClassicVariant,
};
use auif_core::gradsuite::{run_suite, SuiteOptions};
use auif_core::losses::ssim;
use auif_core::metrics::{ag, en, scd, sd, sf, vif_single};
use auif_core::network::{checkpoint, expected_parameter_count, forward, init_network};
use auif_core::trainer::{repeat_runs, train};
use auif_core::{
    fuse, synthetic, Ablation, Error, Image, MergeStrategy, Mode, NetworkConfig, NetworkParams,
    TrainConfig,
};
use common::{auif, s, stderr, stdout, write_pairs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn linf(a: &Image, b: &Image) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| rng.random())
}

fn c1_params() -> Outcome {
    let start = Instant::now();
    let o = auif(&["params"]);
    let secs = start.elapsed().as_secs_f64();
    let printed = stdout(&o).trim().to_string();
    ensure(o.status.success(), || stderr(&o))?;
    ensure(printed == "11631", || format!("printed {printed:?}"))?;
    let lib = init_network(NetworkConfig::default(), 0)
        .map_err(|e| e.to_string())?
        .parameter_count();
    ensure(lib == 11_631, || format!("library count {lib}"))?;
    ensure(secs < 1.0, || format!("took {secs:.2} s"))?;
    Ok(format!("11631 learnables, {secs:.3} s"))
}

fn c2_gradients() -> Outcome {
    let start = Instant::now();
    // every coordinate of the default network is covered by the core test suite
    let opts = SuiteOptions {
        full_network_seeds: 0,
        ..SuiteOptions::default()
    };
    let reports = run_suite(&opts).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut worst: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in &reports {
        let op = r.name.split(" seed=").next().unwrap_or(&r.name).to_string();
        let e = worst.entry(op).or_insert((0.0, r.tolerance));
        e.0 = e.0.max(r.max_rel_err);
    }
    for (op, (err, tol)) in &worst {
        println!("    {op:<24} max_rel_err {err:.3e} (tol {tol:.0e})");
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.to_string())
        .collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    let seeds: std::collections::BTreeSet<_> = reports
        .iter()
        .filter_map(|r| r.name.split(" seed=").nth(1))
        .collect();
    ensure(seeds.len() == 5, || format!("{} seeds", seeds.len()))?;
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    let max = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok(format!(
        "{} checks over 5 seeds, worst {max:.2e}, {secs:.1} s",
        reports.len()
    ))
}

/// Spectral-norm bound of a 3x3 filter: the squared l1 norm of its taps.
fn step_for(theta: f64, variant: ClassicVariant) -> f64 {
    let l1: f64 = variant.penalty().weights().iter().map(|v| v.abs()).sum();
    1.0 / (theta + l1 * l1)
}

fn c3_decomposition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let img = random_image(&mut rng, 12, 12);
        for theta in [0.1, 1.0, 10.0] {
            for variant in [ClassicVariant::Base, ClassicVariant::Detail] {
                let eta = step_for(theta, variant);
                let iters = (12.0 / (eta * theta)).ceil() as usize;
                let r = classic_gd_decompose(&img, variant, theta, eta, iters)
                    .map_err(|e| e.to_string())?;
                let solved = match variant {
                    ClassicVariant::Base => &r.base,
                    ClassicVariant::Detail => &r.detail,
                };
                let oracle = linear_oracle(&img, theta, &classic_terms(variant))
                    .map_err(|e| e.to_string())?;
                let d = linf(solved, &oracle);
                ensure(d <= 1e-4, || {
                    format!("image {k} theta {theta} {variant:?}: {d:.2e}")
                })?;
                worst = worst.max(d);
            }
        }
        for lambda in [1.0, 5.0] {
            // Hessian 2 (I + lambda D^T D) with ||D^T D|| <= 8
            let step = 1.0 / (2.0 * (1.0 + 8.0 * lambda));
            let r = optim_decompose(&img, lambda, 3000, step).map_err(|e| e.to_string())?;
            let oracle =
                linear_oracle(&img, 1.0, &optim_terms(lambda)).map_err(|e| e.to_string())?;
            let d = linf(&r.base, &oracle);
            ensure(d <= 1e-4, || format!("image {k} lambda {lambda}: {d:.2e}"))?;
            worst = worst.max(d);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "worst l_inf {worst:.2e} over 3 images, {secs:.1} s"
    ))
}

struct Trained {
    params: NetworkParams<f32>,
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        epochs: 50,
        batch_size: 4,
        crop: 64,
        phase_split: 25,
        ..TrainConfig::default()
    }
}

fn desk_images() -> Vec<Image> {
    synthetic::training_corpus(16, 64, 64, 0)
}

fn c4_training(slot: &mut Option<Trained>) -> Outcome {
    let images = desk_images();
    let cfg = desk_config();
    let (params, log) = train(&images, &cfg).map_err(|e| e.to_string())?;
    let steps = log.steps.len();
    ensure(steps == 200, || format!("{steps} steps"))?;
    let initial = log.initial_loss().expect("steps ran");
    let last = log.final_epoch_mean().expect("epochs ran");
    let mut scores = Vec::new();
    for img in &images {
        let out =
            forward(&img.to_tensor::<f32>(), &params, Mode::Eval).map_err(|e| e.to_string())?;
        scores.push(ssim(img, &Image::from_tensor(&out.output, 0)).map_err(|e| e.to_string())?);
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    *slot = Some(Trained { params });
    let ratio = last / initial;
    ensure(ratio < 0.25, || {
        format!("final/initial = {last:.4}/{initial:.4} = {ratio:.3}")
    })?;
    ensure(min >= 0.6, || format!("ssim min {min:.3} (mean {mean:.3})"))?;
    Ok(format!(
        "loss {initial:.4} -> {last:.4} (ratio {ratio:.3}), ssim min {min:.3} mean {mean:.3}, {:.0} s",
        log.wall_clock_secs
    ))
}

fn en_oracle(f: &Image) -> f64 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &v in f.data() {
        let level = (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u32;
        *counts.entry(level).or_default() += 1;
    }
    let n = f.data().len() as f64;
    counts
        .values()
        .map(|&c| c as f64 / n)
        .map(|p| -p * p.log2())
        .sum()
}

fn sd_oracle(f: &Image) -> f64 {
    let (h, w) = f.shape();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            sum += 255.0 * f.get(y, x);
        }
    }
    let mean = sum / (h * w) as f64;
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            acc += (255.0 * f.get(y, x) - mean).powi(2);
        }
    }
    (acc / (h * w) as f64).sqrt()
}

fn sf_oracle(f: &Image) -> f64 {
    let (h, w) = f.shape();
    let p = |y: usize, x: usize| 255.0 * f.get(y, x);
    let (mut rf, mut cf) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if x > 0 {
                rf += (p(y, x) - p(y, x - 1)).powi(2);
            }
            if y > 0 {
                cf += (p(y, x) - p(y - 1, x)).powi(2);
            }
        }
    }
    let rf = (rf / (h * (w - 1)) as f64).sqrt();
    let cf = (cf / ((h - 1) * w) as f64).sqrt();
    (rf * rf + cf * cf).sqrt()
}

fn ag_oracle(f: &Image) -> f64 {
    let (h, w) = f.shape();
    let p = |y: usize, x: usize| 255.0 * f.get(y, x);
    let mut acc = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let gx = p(y, x + 1) - p(y, x);
            let gy = p(y + 1, x) - p(y, x);
            acc += ((gx * gx + gy * gy) / 2.0).sqrt();
        }
    }
    acc / ((h - 1) * (w - 1)) as f64
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|y| y * y).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

fn scd_oracle(f: &Image, ir: &Image, vis: &Image) -> f64 {
    let d1: Vec<f64> = (0..f.data().len())
        .map(|i| f.data()[i] - vis.data()[i])
        .collect();
    let d2: Vec<f64> = (0..f.data().len())
        .map(|i| f.data()[i] - ir.data()[i])
        .collect();
    pearson(&d1, ir.data()) + pearson(&d2, vis.data())
}

/// Full 2-D windows, nested vectors, no separability.
fn vif_dual(reference: &Image, dist: &Image) -> f64 {
    let (mut h, mut w) = reference.shape();
    let mut r: Vec<Vec<f64>> = (0..h)
        .map(|y| (0..w).map(|x| 255.0 * reference.get(y, x)).collect())
        .collect();
    let mut d: Vec<Vec<f64>> = (0..h)
        .map(|y| (0..w).map(|x| 255.0 * dist.get(y, x)).collect())
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4u32 {
        let n = (1usize << (5 - scale)) + 1;
        let sigma = n as f64 / 5.0;
        let c = (n / 2) as f64;
        let mut win = vec![vec![0.0; n]; n];
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma))
                    .exp();
            }
        }
        let total: f64 = win.iter().flatten().sum();
        let filt = |img: &[Vec<f64>], h: usize, w: usize| -> Vec<Vec<f64>> {
            (0..=h - n)
                .map(|y| {
                    (0..=w - n)
                        .map(|x| {
                            let mut acc = 0.0;
                            for (i, row) in win.iter().enumerate() {
                                for (j, g) in row.iter().enumerate() {
                                    acc += g * img[y + i][x + j];
                                }
                            }
                            acc / total
                        })
                        .collect()
                })
                .collect()
        };
        if scale > 1 {
            let (rf, df) = (filt(&r, h, w), filt(&d, h, w));
            r = rf
                .iter()
                .step_by(2)
                .map(|row| row.iter().step_by(2).copied().collect())
                .collect();
            d = df
                .iter()
                .step_by(2)
                .map(|row| row.iter().step_by(2).copied().collect())
                .collect();
            h = r.len();
            w = r[0].len();
        }
        let prod = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter()
                .zip(b)
                .map(|(p, q)| p.iter().zip(q).map(|(u, v)| u * v).collect())
                .collect()
        };
        let (m1, m2) = (filt(&r, h, w), filt(&d, h, w));
        let e11 = filt(&prod(&r, &r), h, w);
        let e22 = filt(&prod(&d, &d), h, w);
        let e12 = filt(&prod(&r, &d), h, w);
        for y in 0..m1.len() {
            for x in 0..m1[0].len() {
                let mut s1 = (e11[y][x] - m1[y][x] * m1[y][x]).max(0.0);
                let s2 = (e22[y][x] - m2[y][x] * m2[y][x]).max(0.0);
                let s12 = e12[y][x] - m1[y][x] * m2[y][x];
                let mut g = s12 / (s1 + 1e-10);
                let mut sv = s2 - g * s12;
                if s1 < 1e-10 {
                    g = 0.0;
                    sv = s2;
                    s1 = 0.0;
                }
                if s2 < 1e-10 {
                    g = 0.0;
                    sv = 0.0;
                }
                if g < 0.0 {
                    sv = s2;
                    g = 0.0;
                }
                sv = sv.max(1e-10);
                num += (1.0 + g * g * s1 / (sv + 2.0)).log10();
                den += (1.0 + s1 / 2.0).log10();
            }
        }
    }
    num / den
}

fn c5_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut worst_vif): (f64, f64) = (0.0, 0.0);
    for k in 0..10 {
        let h = rng.random_range(41..64);
        let w = rng.random_range(41..64);
        let ir = random_image(&mut rng, h, w);
        let vis = random_image(&mut rng, h, w);
        let a: f64 = rng.random_range(0.2..0.8);
        let noise = random_image(&mut rng, h, w);
        let f = Image::from_fn(h, w, |y, x| {
            a * ir.get(y, x) + (1.0 - a) * vis.get(y, x) + 0.1 * (noise.get(y, x) - 0.5)
        });
        let pairs = [
            ("EN", en(&f), en_oracle(&f)),
            ("SD", sd(&f), sd_oracle(&f)),
            ("SF", sf(&f).map_err(|e| e.to_string())?, sf_oracle(&f)),
            ("AG", ag(&f).map_err(|e| e.to_string())?, ag_oracle(&f)),
            (
                "SCD",
                scd(&f, &ir, &vis).map_err(|e| e.to_string())?,
                scd_oracle(&f, &ir, &vis),
            ),
        ];
        for (name, got, want) in pairs {
            let d = (got - want).abs();
            ensure(d <= 1e-9, || {
                format!("instance {k} {name}: {got} vs {want}")
            })?;
            worst = worst.max(d);
        }
        for src in [&ir, &vis] {
            let got = vif_single(src, &f).map_err(|e| e.to_string())?;
            let want = vif_dual(src, &f);
            let d = (got - want).abs();
            ensure(d <= 1e-6, || format!("instance {k} VIF: {got} vs {want}"))?;
            worst_vif = worst_vif.max(d);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "10 instances, worst {worst:.1e} (VIF {worst_vif:.1e}), {secs:.1} s"
    ))
}

fn c6_strategy(trained: Option<&Trained>) -> Outcome {
    let t = trained.ok_or("no trained model (criterion 4 did not finish)")?;
    let mut sums = [[0.0; 3]; 2];
    for k in 0..5 {
        let (ir, vis) = synthetic::ir_vis_pair(64, 64, 9000 + k);
        for (row, strategy) in [MergeStrategy::Addition, MergeStrategy::Average(0.5)]
            .into_iter()
            .enumerate()
        {
            let f = fuse(&ir, &vis, &t.params, strategy)
                .map_err(|e| e.to_string())?
                .fused;
            sums[row][0] += sd(&f) / 5.0;
            sums[row][1] += sf(&f).map_err(|e| e.to_string())? / 5.0;
            sums[row][2] += ag(&f).map_err(|e| e.to_string())? / 5.0;
        }
    }
    let [add, avg] = sums;
    let line = format!(
        "addition SD/SF/AG {:.2}/{:.2}/{:.2} vs average {:.2}/{:.2}/{:.2}",
        add[0], add[1], add[2], avg[0], avg[1], avg[2]
    );
    ensure(add.iter().zip(&avg).all(|(a, b)| a >= b), || line.clone())?;
    Ok(line)
}

fn c7_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ir, vis) = write_pairs(dir.path(), 4, 48, 70);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "epochs = 8\nbatch_size = 4\ncrop = 32\nphase_split = 4\nseed = 11\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("{run}.auif"));
        let o = auif(&[
            "train",
            "--config",
            s(&cfg),
            "--data-ir",
            s(&ir),
            "--data-vis",
            s(&vis),
            "--out",
            s(&out),
        ]);
        ensure(o.status.success(), || stderr(&o))?;
        let read = |p: std::path::PathBuf| std::fs::read(p).map_err(|e| e.to_string());
        outputs.push((
            read(out.clone())?,
            read(out.with_extension("loss.csv"))?,
            read(out.with_extension("eta_theta.csv"))?,
        ));
    }
    ensure(outputs[0].0 == outputs[1].0, || "checkpoints differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "loss traces differ".into())?;
    ensure(outputs[0].2 == outputs[1].2, || {
        "eta/theta traces differ".into()
    })?;

    let images = desk_images();
    let summary = repeat_runs(&images, &desk_config(), 5).map_err(|e| e.to_string())?;
    let finals: Vec<String> = summary
        .final_losses
        .iter()
        .map(|v| format!("{v:.4}"))
        .collect();
    ensure(summary.cv < 0.2, || {
        format!(
            "identical runs bit-equal, but cv {:.3} over [{}]",
            summary.cv,
            finals.join(", ")
        )
    })?;
    Ok(format!(
        "identical runs bit-equal; 5 repeats final loss mean {:.4} cv {:.3}",
        summary.mean, summary.cv
    ))
}

fn c8_checkpoint(trained: Option<&Trained>) -> Outcome {
    let params = match trained {
        Some(t) => t.params.clone(),
        None => init_network(NetworkConfig::default(), 8).map_err(|e| e.to_string())?,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.auif");
    checkpoint::save(&params, &path).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let (ir, vis) = synthetic::ir_vis_pair(48, 56, 81);
    for strategy in [
        MergeStrategy::Addition,
        MergeStrategy::Average(0.5),
        MergeStrategy::L1Attention,
    ] {
        let a = fuse(&ir, &vis, &params, strategy)
            .map_err(|e| e.to_string())?
            .fused;
        let b = fuse(&ir, &vis, &loaded, strategy)
            .map_err(|e| e.to_string())?
            .fused;
        let same = a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || {
            format!("{strategy}: fused output changed after reload")
        })?;
    }
    let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = dir.path().join("bad.auif");
    std::fs::write(&bad, &bytes).map_err(|e| e.to_string())?;
    match checkpoint::load(&bad) {
        Err(Error::Format { .. }) => {}
        other => return Err(format!("corrupted file gave {:?}", other.map(|_| ()))),
    }
    let png = |name: &str, img: &Image| {
        let p = dir.path().join(name);
        auif_core::pipeline::save_gray(img, &p)
            .map(|_| p)
            .map_err(|e| e.to_string())
    };
    let (pi, pv) = (png("ir.png", &ir)?, png("vis.png", &vis)?);
    let o = auif(&[
        "fuse",
        "--checkpoint",
        s(&bad),
        "--ir",
        s(&pi),
        "--vis",
        s(&pv),
        "--out",
        s(&dir.path().join("f.png")),
    ]);
    ensure(
        o.status.code() == Some(1) && stderr(&o).starts_with("error: format: "),
        || {
            format!(
                "cli on corrupted file: {:?} {}",
                o.status.code(),
                stderr(&o)
            )
        },
    )?;
    Ok("reload is bit-identical for 3 strategies; corrupted file rejected".into())
}

fn c9_ablations() -> Outcome {
    let images = synthetic::training_corpus(16, 48, 48, 2);
    let (ir, vis) = synthetic::ir_vis_pair(48, 48, 99);
    let mut notes = Vec::new();
    for name in [
        "plain_conv",
        "no_init",
        "base_only",
        "detail_only",
        "l2_only",
        "ssim_only",
    ] {
        let ablation: Ablation = name.parse().map_err(|e: Error| e.to_string())?;
        let mut cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            crop: 32,
            phase_split: 3,
            ..TrainConfig::default()
        };
        cfg.network.ablation = ablation;
        let (params, log) = train(&images, &cfg).map_err(|e| format!("{name}: {e}"))?;
        let fused = fuse(&ir, &vis, &params, MergeStrategy::Addition)
            .map_err(|e| format!("{name}: {e}"))?;
        ensure(fused.fused.data().iter().all(|v| v.is_finite()), || {
            format!("{name}: non-finite fusion")
        })?;
        ensure(log.steps.len() == 20, || {
            format!("{name}: {} steps", log.steps.len())
        })?;
        if ablation == Ablation::PLAIN_CONV {
            let count = params.parameter_count();
            let expected = 11_631 - 2 * 2 * 10;
            ensure(
                count == expected && count == expected_parameter_count(&cfg.network),
                || format!("plain_conv counts {count}, expected {expected}"),
            )?;
            notes.push(format!("plain_conv {count} learnables"));
        }
    }
    Ok(format!(
        "6 ablations trained 20 steps and fused; {}",
        notes.join(", ")
    ))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {id} [{name}]: PASS ({detail}) [{secs:.1} s]");
            true
        }
        Err(detail) => {
            println!("criterion {id} [{name}]: FAIL ({detail}) [{secs:.1} s]");
            false
        }
    }
}

fn main() {
    // the test runner passes its own flags; `--list` must not run anything
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut trained = None;
    let results = [
        run(1, "parameter count", c1_params),
        run(2, "gradient suite", c2_gradients),
        run(3, "decomposition oracle", c3_decomposition),
        run(4, "desk-scale training", || c4_training(&mut trained)),
        run(5, "metric oracles", c5_metrics),
        run(6, "strategy trend", || c6_strategy(trained.as_ref())),
        run(7, "determinism and repeats", c7_determinism),
        run(8, "checkpoint round-trip", || {
            c8_checkpoint(trained.as_ref())
        }),
        run(9, "ablation flags", c9_ablations),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
