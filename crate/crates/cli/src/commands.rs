use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auif_core::decompose::{
    classic_gd_decompose, filter_decompose, optim_decompose, ClassicVariant,
};
use auif_core::gradsuite::{run_suite, SuiteOptions};
use auif_core::network::{checkpoint, init_network, OPTIM_DECOMP_STEP};
use auif_core::pipeline::{load_gray, pair_directories, save_gray, save_gray16, RunConfig};
use auif_core::{
    fuse as fuse_pair, metrics, trainer, Error, Image, NetworkConfig, Result, Tensor4,
};

use crate::{DecomposeArgs, EvalArgs, FuseArgs, GradcheckArgs, Method, ParamsArgs, TrainArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|()| w.flush()).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn warn_clamped(path: &Path, clamped: usize) {
    if clamped > 0 {
        eprintln!(
            "warning: {clamped} pixels clamped to [0, 1] in {}",
            path.display()
        );
    }
}

/// Side files written next to the checkpoint: loss trace, eta/theta trace, config echo.
pub fn train_outputs(out: &Path) -> [PathBuf; 3] {
    [
        out.with_extension("loss.csv"),
        out.with_extension("eta_theta.csv"),
        out.with_extension("config"),
    ]
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut run = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        run.train.seed = seed;
    }
    if let Some(ab) = a.ablation {
        run.train.network.ablation = ab;
    }
    run.data_ir = a.data_ir.or(run.data_ir);
    run.data_vis = a.data_vis.or(run.data_vis);
    run.out = Some(
        a.out
            .or(run.out)
            .unwrap_or_else(|| PathBuf::from("model.auif")),
    );
    run.train.validate()?;
    let (Some(ir_dir), Some(vis_dir)) = (&run.data_ir, &run.data_vis) else {
        return Err(Error::InvalidInput(
            "training needs data_ir and data_vis (config keys or --data-ir/--data-vis)".into(),
        ));
    };
    let dataset = pair_directories(ir_dir, vis_dir)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    let loaded = dataset.load(Some(run.train.crop))?;
    for r in &loaded.rejected {
        eprintln!("warning: rejected {r}");
    }
    let images = loaded.training_images();
    if images.is_empty() {
        return Err(Error::InvalidInput(
            "every pair was rejected; nothing to train on".into(),
        ));
    }
    let out = run.out.clone().expect("set above");
    let (params, log) = trainer::train(&images, &run.train)?;
    checkpoint::save(&params, &out)?;
    let [loss_csv, eta_csv, echo] = train_outputs(&out);
    write_with(&loss_csv, |w| log.write_loss_csv(w))?;
    write_with(&eta_csv, |w| log.write_eta_theta_csv(w))?;
    run.write_echo(&echo)?;
    println!(
        "pairs={} steps={} initial_loss={:.6} final_epoch_mean={:.6} trace_hash={:016x} seconds={:.1}",
        loaded.pairs.len(),
        log.steps.len(),
        log.initial_loss().unwrap_or(f64::NAN),
        log.final_epoch_mean().unwrap_or(f64::NAN),
        log.trace_hash(),
        log.wall_clock_secs
    );
    println!("checkpoint {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn dump_maps(dir: &Path, base: &Tensor4<f32>, detail: &Tensor4<f32>) -> Result<()> {
    create_dir(dir)?;
    let mut ranges = String::from("map,channel,min,max\n");
    for (name, t) in [("base", base), ("detail", detail)] {
        let d = t.dims();
        for c in 0..d.c {
            let plane = t.plane(0, c);
            let lo = plane.iter().fold(f32::INFINITY, |m, &v| m.min(v)) as f64;
            let hi = plane.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let span = if hi > lo { hi - lo } else { 1.0 };
            let img = Image::from_fn(d.h, d.w, |y, x| (plane[y * d.w + x] as f64 - lo) / span);
            save_gray16(&img, dir.join(format!("{name}_{c:02}.png")))?;
            ranges.push_str(&format!("{name},{c},{lo},{hi}\n"));
        }
    }
    let p = dir.join("ranges.csv");
    std::fs::write(&p, ranges).map_err(|e| Error::Io { path: p, source: e })
}

pub fn fuse(a: FuseArgs) -> Result<ExitCode> {
    let strategy = a.merge_strategy()?;
    let params = checkpoint::load(&a.checkpoint)?;
    let ir = load_gray(&a.ir)?;
    let vis = load_gray(&a.vis)?;
    let result = fuse_pair(&ir, &vis, &params, strategy)?;
    warn_clamped(&a.out, save_gray(&result.fused, &a.out)?);
    if let Some(dir) = &a.dump_maps {
        dump_maps(dir, &result.merged_base, &result.merged_detail)?;
    }
    println!("fused {} ({strategy})", a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn decompose(a: DecomposeArgs) -> Result<ExitCode> {
    let img = load_gray(&a.input)?;
    let r = match a.method {
        Method::Filter => filter_decompose(&img)?,
        Method::Optim => optim_decompose(&img, a.lambda, a.iters, OPTIM_DECOMP_STEP)?,
        Method::GdBase => {
            classic_gd_decompose(&img, ClassicVariant::Base, a.theta, a.eta, a.iters)?
        }
        Method::GdDetail => {
            classic_gd_decompose(&img, ClassicVariant::Detail, a.theta, a.eta, a.iters)?
        }
    };
    warn_clamped(&a.out_base, save_gray(&r.base, &a.out_base)?);
    let shifted = r.detail.map(|d| 0.5 + d);
    warn_clamped(&a.out_detail, save_gray(&shifted, &a.out_detail)?);
    if let (Some(first), Some(last)) = (r.loss_trace.first(), r.loss_trace.last()) {
        println!(
            "objective {first:.6e} -> {last:.6e} over {} iterations",
            r.loss_trace.len() - 1
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let report = metrics::evaluate_dirs(&a.ir_dir, &a.vis_dir, &a.fused_dir)?;
    write_with(&a.csv, |w| report.write_csv(w))?;
    let m = report.mean;
    println!(
        "images={} EN={:.4} SD={:.4} SF={:.4} VIF={:.4} AG={:.4} SCD={:.4}",
        report.rows.len(),
        m.en,
        m.sd,
        m.sf,
        m.vif,
        m.ag,
        m.scd
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if let Some(t) = a.tolerance {
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be > 0, got {t}"
            )));
        }
    }
    let opts = SuiteOptions {
        seeds: (0..a.seeds).collect(),
        network_coords: Some(a.network_coords),
        full_network_seeds: a.full_network_seeds,
        ..SuiteOptions::default()
    };
    let mut reports = run_suite(&opts)?;
    let mut failed = 0;
    for r in &mut reports {
        if let Some(t) = a.tolerance {
            r.tolerance = t;
        }
        if !r.passed() {
            failed += 1;
        }
        println!("{r}");
    }
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    println!(
        "{} checks, {failed} failed, worst max_rel_err={worst:.3e}",
        reports.len()
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

pub fn params(a: ParamsArgs) -> Result<ExitCode> {
    let p = match &a.checkpoint {
        Some(path) => checkpoint::load(path)?,
        None => init_network(NetworkConfig::default(), 0)?,
    };
    println!("{}", p.parameter_count());
    Ok(ExitCode::SUCCESS)
}
