#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use auif_core::pipeline::save_gray;
use auif_core::synthetic;

pub fn auif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auif"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `ir/` and `vis/` directories of stem-matched synthetic PNG pairs.
pub fn write_pairs(root: &Path, count: usize, side: usize, seed: u64) -> (PathBuf, PathBuf) {
    let ir = root.join("ir");
    let vis = root.join("vis");
    std::fs::create_dir_all(&ir).unwrap();
    std::fs::create_dir_all(&vis).unwrap();
    for k in 0..count {
        let (a, b) = synthetic::ir_vis_pair(side, side, seed + k as u64);
        save_gray(&a, ir.join(format!("p{k:02}.png"))).unwrap();
        save_gray(&b, vis.join(format!("p{k:02}.png"))).unwrap();
    }
    (ir, vis)
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}
