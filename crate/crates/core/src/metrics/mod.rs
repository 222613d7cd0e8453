//! Fusion quality metrics on the 0-255 intensity scale.

mod vif;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::{load_gray, pair_directories, quantize};
use crate::raster::Image;

pub use vif::{
    min_side as vif_min_side, vif, vif_single, window_side as vif_window_side,
    NOISE_VAR as VIF_NOISE_VAR,
};

const SCALE: f64 = 255.0;

/// Entropy in bits of the 256-bin histogram of the quantized image.
pub fn en(f: &Image) -> f64 {
    let mut hist = [0usize; 256];
    for &v in f.data() {
        hist[quantize(v) as usize] += 1;
    }
    let n = f.data().len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Population standard deviation.
pub fn sd(f: &Image) -> f64 {
    let n = f.data().len() as f64;
    let mean = f.data().iter().sum::<f64>() / n;
    let var = f
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    SCALE * var.sqrt()
}

fn check_size(f: &Image, what: &str) -> Result<()> {
    if f.height() < 2 || f.width() < 2 {
        return Err(Error::invalid(format!(
            "{what} needs at least 2x2 pixels, got {}x{}",
            f.height(),
            f.width()
        )));
    }
    Ok(())
}

/// `sqrt(RF^2 + CF^2)` with row (horizontal) and column (vertical) differences.
pub fn sf(f: &Image) -> Result<f64> {
    check_size(f, "SF")?;
    let (h, w) = f.shape();
    let mut rf = 0.0;
    for y in 0..h {
        for x in 1..w {
            let d = f.get(y, x) - f.get(y, x - 1);
            rf += d * d;
        }
    }
    let mut cf = 0.0;
    for y in 1..h {
        for x in 0..w {
            let d = f.get(y, x) - f.get(y - 1, x);
            cf += d * d;
        }
    }
    let rf = rf / (h * (w - 1)) as f64;
    let cf = cf / ((h - 1) * w) as f64;
    Ok(SCALE * (rf + cf).sqrt())
}

/// Mean of `sqrt((dx^2 + dy^2) / 2)` over forward differences.
pub fn ag(f: &Image) -> Result<f64> {
    check_size(f, "AG")?;
    let (h, w) = f.shape();
    let mut acc = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = f.get(y, x + 1) - f.get(y, x);
            let dy = f.get(y + 1, x) - f.get(y, x);
            acc += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(SCALE * acc / ((h - 1) * (w - 1)) as f64)
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let flat = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if a.is_empty() || flat(a) || flat(b) {
        return 0.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// `r(F - V, I) + r(F - I, V)`
pub fn scd(f: &Image, ir: &Image, vis: &Image) -> Result<f64> {
    f.expect_same_shape(ir)?;
    f.expect_same_shape(vis)?;
    let fv: Vec<f64> = f
        .data()
        .iter()
        .zip(vis.data())
        .map(|(a, b)| a - b)
        .collect();
    let fi: Vec<f64> = f.data().iter().zip(ir.data()).map(|(a, b)| a - b).collect();
    Ok(correlation(&fv, ir.data()) + correlation(&fi, vis.data()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricValues {
    pub en: f64,
    pub sd: f64,
    pub sf: f64,
    pub vif: f64,
    pub ag: f64,
    pub scd: f64,
}

impl MetricValues {
    pub fn as_array(&self) -> [f64; 6] {
        [self.en, self.sd, self.sf, self.vif, self.ag, self.scd]
    }

    fn from_array(a: [f64; 6]) -> Self {
        MetricValues {
            en: a[0],
            sd: a[1],
            sf: a[2],
            vif: a[3],
            ag: a[4],
            scd: a[5],
        }
    }
}

pub fn evaluate(fused: &Image, ir: &Image, vis: &Image) -> Result<MetricValues> {
    fused.expect_same_shape(ir)?;
    fused.expect_same_shape(vis)?;
    Ok(MetricValues {
        en: en(fused),
        sd: sd(fused),
        sf: sf(fused)?,
        vif: vif(fused, ir, vis)?,
        ag: ag(fused)?,
        scd: scd(fused, ir, vis)?,
    })
}

/// Per-image metrics of a corpus plus mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, MetricValues)>,
    pub mean: MetricValues,
    pub std: MetricValues,
}

pub const CSV_HEADER: &str = "image,EN,SD,SF,VIF,AG,SCD";

impl MetricReport {
    pub fn from_rows(rows: Vec<(String, MetricValues)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("no images to evaluate"));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 6];
        for (_, v) in &rows {
            for (m, x) in mean.iter_mut().zip(v.as_array()) {
                *m += x / n;
            }
        }
        let mut var = [0.0; 6];
        for (_, v) in &rows {
            for ((s, x), m) in var.iter_mut().zip(v.as_array()).zip(mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        Ok(MetricReport {
            rows,
            mean: MetricValues::from_array(mean),
            std: MetricValues::from_array(var.map(f64::sqrt)),
        })
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let line = |w: &mut dyn Write, name: &str, v: &MetricValues| -> std::io::Result<()> {
            let cells: Vec<String> = v.as_array().iter().map(|x| format!("{x:.6}")).collect();
            writeln!(w, "{name},{}", cells.join(","))
        };
        for (name, v) in &self.rows {
            line(&mut w, name, v)?;
        }
        line(&mut w, "mean", &self.mean)?;
        line(&mut w, "std", &self.std)
    }
}

/// Evaluates every stem-matched (infrared, visible, fused) triple; rows follow pair order.
pub fn evaluate_dirs(ir_dir: &Path, vis_dir: &Path, fused_dir: &Path) -> Result<MetricReport> {
    let pairs = pair_directories(ir_dir, vis_dir)?;
    let fused = pair_directories(ir_dir, fused_dir)?;
    let fused_by_stem: std::collections::HashMap<_, _> = fused
        .pairs
        .iter()
        .map(|p| (p.stem.clone(), p.vis.clone()))
        .collect();
    let jobs: Vec<_> = pairs
        .pairs
        .iter()
        .filter_map(|p| fused_by_stem.get(&p.stem).map(|f| (p.clone(), f.clone())))
        .collect();
    if jobs.is_empty() {
        return Err(Error::invalid(format!(
            "no fused images in {} match the source pairs",
            fused_dir.display()
        )));
    }
    let rows = jobs
        .par_iter()
        .map(|(p, f)| {
            let (ir, vis, fu) = (load_gray(&p.ir)?, load_gray(&p.vis)?, load_gray(f)?);
            Ok((p.stem.clone(), evaluate(&fu, &ir, &vis)?))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn half_split(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, _| if y < h / 2 { 0.0 } else { 1.0 })
    }

    #[test]
    fn constant_images_are_zero() {
        let c = Image::filled(16, 16, 0.3);
        assert_eq!(en(&c), 0.0);
        assert!(sd(&c).abs() < 1e-12);
        assert_eq!(sf(&c).unwrap(), 0.0);
        assert_eq!(ag(&c).unwrap(), 0.0);
    }

    #[test]
    fn two_level_values() {
        let x = half_split(8, 8);
        assert!((en(&x) - 1.0).abs() < 1e-15);
        assert!((sd(&x) - 127.5).abs() < 1e-12);
        let cols = Image::from_fn(6, 7, |_, x| (x % 2) as f64);
        let sfv = sf(&cols).unwrap();
        assert!((sfv - 255.0).abs() < 1e-12, "{sfv}");
    }

    #[test]
    fn ramp_average_gradient() {
        let s = 3.0 / 255.0;
        let ramp = Image::from_fn(10, 12, |_, x| x as f64 * s);
        assert!((ag(&ramp).unwrap() - 3.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    /// Histogram built from a sorted copy and run lengths.
    fn en_oracle(f: &Image) -> f64 {
        let mut q: Vec<u8> = f.data().iter().map(|&v| quantize(v)).collect();
        q.sort_unstable();
        let n = q.len() as f64;
        let mut e = 0.0;
        let mut i = 0;
        while i < q.len() {
            let j = q[i..].iter().take_while(|&&v| v == q[i]).count();
            let p = j as f64 / n;
            e -= p * p.log2();
            i += j;
        }
        e
    }

    #[test]
    fn matches_oracles() {
        for seed in 0..5 {
            let f = synthetic::noise(32, 32, seed);
            assert!((en(&f) - en_oracle(&f)).abs() <= 1e-12);
            let vals: Vec<f64> = f.data().iter().map(|v| v * 255.0).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((sd(&f) - var.sqrt()).abs() <= 1e-9);
        }
    }

    #[test]
    fn invariances() {
        let f = synthetic::ir_vis_pair(24, 30, 1).1;
        let t = f.transpose();
        assert!((sf(&f).unwrap() - sf(&t).unwrap()).abs() < 1e-9);
        assert!((ag(&f).unwrap() - ag(&t).unwrap()).abs() < 1e-9);
        let mut rev = f.data().to_vec();
        rev.reverse();
        let r = Image::new(24, 30, rev).unwrap();
        assert!((en(&f) - en(&r)).abs() < 1e-12);
        assert!((sd(&f) - sd(&r)).abs() < 1e-9);
    }

    #[test]
    fn scd_identities() {
        let (ir, vis) = (synthetic::noise(16, 16, 1), synthetic::noise(16, 16, 2));
        let sum = ir.zip_map(&vis, |a, b| a + b).unwrap();
        assert!((scd(&sum, &ir, &vis).unwrap() - 2.0).abs() < 1e-12);
        let c = Image::filled(16, 16, 0.4);
        let r = correlation(ir.data(), vis.data());
        assert!((scd(&c, &ir, &vis).unwrap() + 2.0 * r).abs() < 1e-12);
        let f = synthetic::noise(16, 16, 3);
        assert!((scd(&f, &ir, &vis).unwrap() - scd(&f, &vis, &ir).unwrap()).abs() < 1e-12);
        assert_eq!(correlation(c.data(), ir.data()), 0.0);
    }

    #[test]
    fn too_small_is_rejected() {
        let x = Image::filled(1, 5, 0.0);
        assert!(sf(&x).is_err());
        assert!(ag(&x).is_err());
    }

    #[test]
    fn csv_layout() {
        let v = MetricValues {
            en: 1.0,
            sd: 2.0,
            sf: 3.0,
            vif: 0.5,
            ag: 4.0,
            scd: 1.5,
        };
        let w = MetricValues { en: 3.0, ..v };
        let r = MetricReport::from_rows(vec![("a".into(), v), ("b".into(), w)]).unwrap();
        assert_eq!(r.mean.en, 2.0);
        assert_eq!(r.std.en, 1.0);
        assert_eq!(r.std.sd, 0.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("mean,2.000000,"));
        assert!(lines[4].starts_with("std,1.000000,"));
    }

    #[test]
    fn magnitudes_are_on_the_byte_scale() {
        let (ir, vis) = synthetic::ir_vis_pair(64, 64, 5);
        let f = ir.zip_map(&vis, |a, b| 0.5 * (a + b)).unwrap();
        let m = evaluate(&f, &ir, &vis).unwrap();
        assert!((5.0..200.0).contains(&m.sd), "{m:?}");
        assert!((1.0..200.0).contains(&m.sf), "{m:?}");
        assert!((0.0..=8.0).contains(&m.en));
        assert!((-2.0..=2.0).contains(&m.scd));
    }
}
