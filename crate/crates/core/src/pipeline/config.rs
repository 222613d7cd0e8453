use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fusion::MergeStrategy;
use crate::trainer::TrainConfig;

/// A `key = value` run file: the training config plus data paths and the
/// fusion strategy. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_ir: Option<PathBuf>,
    pub data_vis: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub strategy: MergeStrategy,
}

const PATH_KEYS: &[&str] = &["data_ir", "data_vis", "out"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut strategy_name = cfg.strategy.name().to_string();
        let mut avg_weight = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            match key {
                "data_ir" => cfg.data_ir = Some(PathBuf::from(value)),
                "data_vis" => cfg.data_vis = Some(PathBuf::from(value)),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "strategy" => strategy_name = value.to_string(),
                "avg_weight" => {
                    avg_weight = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| err(format!("bad value {value:?} for avg_weight")))?,
                    )
                }
                _ => match cfg.train.set(key, value) {
                    Ok(true) => {}
                    Ok(false) => return Err(err(format!("unknown key {key:?}"))),
                    Err(e) => return Err(err(e.to_string())),
                },
            }
        }
        cfg.strategy =
            MergeStrategy::from_name(&strategy_name, avg_weight).map_err(|e| Error::Config {
                line: 0,
                message: e.to_string(),
            })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical form of the effective configuration; `parse(echo())` gives it back.
    pub fn echo(&self) -> String {
        let mut s = self.train.echo();
        for (k, v) in PATH_KEYS
            .iter()
            .zip([&self.data_ir, &self.data_vis, &self.out])
        {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        let _ = writeln!(s, "strategy = {}", self.strategy.name());
        let w = match self.strategy {
            MergeStrategy::Average(w) => w,
            _ => MergeStrategy::DEFAULT_AVERAGE_WEIGHT,
        };
        let _ = writeln!(s, "avg_weight = {w}");
        s
    }

    pub fn write_echo(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.echo()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Ablation;

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# desk run\nepochs = 5\n\nbatch_size=4   # small\nablation = no_init\nstrategy = average\navg_weight = 0.25\ndata_ir = /d/ir\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.network.ablation, Ablation::NO_INIT);
        assert_eq!(c.strategy, MergeStrategy::Average(0.25));
        assert_eq!(c.data_ir.as_deref(), Some(Path::new("/d/ir")));
        assert_eq!(c.train.crop, 128);
    }

    #[test]
    fn unknown_key_is_an_error_with_line() {
        match RunConfig::parse("epochs = 3\nepoch = 4\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("epoch"));
            }
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("epochs 3").is_err());
        assert!(RunConfig::parse("epochs = 3\nepochs = 4").is_err());
        assert!(RunConfig::parse("epochs = many").is_err());
    }

    #[test]
    fn echo_is_a_fixed_point() {
        let c = RunConfig::parse(
            "mu = 2.5\nseed = 9\nout = m.auif\ngrad_clip = 1.5\nstrategy = l1att\n",
        )
        .unwrap();
        let e = c.echo();
        let d = RunConfig::parse(&e).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.echo(), e);
        let defaults = RunConfig::default().echo();
        assert_eq!(RunConfig::parse(&defaults).unwrap().echo(), defaults);
        assert!(defaults.contains("epochs = 80\n"));
    }
}
