use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::Image;

use super::io::{load_gray, IMAGE_EXTENSIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePair {
    pub stem: String,
    pub ir: PathBuf,
    pub vis: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedDataset {
    pub pairs: Vec<ImagePair>,
    pub split: Split,
    /// Files without a partner in the other directory.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedPairs {
    /// `(stem, infrared, visible)`
    pub pairs: Vec<(String, Image, Image)>,
    /// One line per rejected pair, naming it and the reason.
    pub rejected: Vec<String>,
}

impl LoadedPairs {
    /// Infrared and visible images interleaved in pair order, for training.
    pub fn training_images(&self) -> Vec<Image> {
        self.pairs
            .iter()
            .flat_map(|(_, ir, vis)| [ir.clone(), vis.clone()])
            .collect()
    }
}

fn scan(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            // a.png and a.bmp in one directory: keep the lexicographically first path
            let stem = stem.to_string();
            match out.get(&stem) {
                Some(existing) if existing <= &path => {}
                _ => {
                    out.insert(stem, path);
                }
            }
        }
    }
    Ok(out)
}

/// Pairs files by filename stem, sorted by stem.
pub fn pair_directories(
    ir_dir: impl AsRef<Path>,
    vis_dir: impl AsRef<Path>,
) -> Result<PairedDataset> {
    let (ir_dir, vis_dir) = (ir_dir.as_ref(), vis_dir.as_ref());
    let ir = scan(ir_dir)?;
    let vis = scan(vis_dir)?;
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (stem, path) in &ir {
        match vis.get(stem) {
            Some(v) => pairs.push(ImagePair {
                stem: stem.clone(),
                ir: path.clone(),
                vis: v.clone(),
            }),
            None => warnings.push(format!("unmatched infrared file {}", path.display())),
        }
    }
    for (stem, path) in &vis {
        if !ir.contains_key(stem) {
            warnings.push(format!("unmatched visible file {}", path.display()));
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!(
            "no stem-matched image pairs between {} and {}",
            ir_dir.display(),
            vis_dir.display()
        )));
    }
    Ok(PairedDataset {
        pairs,
        split: Split::Train,
        warnings,
    })
}

impl PairedDataset {
    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Loads every pair; pairs with unequal dims or smaller than `min_side` are
    /// rejected (reported, not fatal).
    pub fn load(&self, min_side: Option<usize>) -> Result<LoadedPairs> {
        let mut pairs = Vec::new();
        let mut rejected = Vec::new();
        for p in &self.pairs {
            let ir = load_gray(&p.ir)?;
            let vis = load_gray(&p.vis)?;
            if ir.shape() != vis.shape() {
                rejected.push(format!(
                    "{}: infrared {}x{} vs visible {}x{}",
                    p.stem,
                    ir.height(),
                    ir.width(),
                    vis.height(),
                    vis.width()
                ));
                continue;
            }
            if let Some(m) = min_side {
                if ir.height() < m || ir.width() < m {
                    rejected.push(format!(
                        "{}: {}x{} is smaller than the {m}x{m} crop",
                        p.stem,
                        ir.height(),
                        ir.width()
                    ));
                    continue;
                }
            }
            pairs.push((p.stem.clone(), ir, vis));
        }
        Ok(LoadedPairs { pairs, rejected })
    }
}
