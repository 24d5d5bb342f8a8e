//! Flat `key=value` run configuration shared by the CLI subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::graphs::MaskMode;
use crate::model::checkpoint::parse_pairs;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Default train / validation / test ratio.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// Training settings plus the experiment-level keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub split: (f64, f64, f64),
    /// Regions held out as new when no explicit id list is given.
    pub n_new: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), split: DEFAULT_SPLIT, n_new: 0 }
    }
}

fn parse_split(v: &str) -> Option<(f64, f64, f64)> {
    let parts: Vec<f64> = v.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    match parts[..] {
        [a, b, c] => Some((a, b, c)),
        _ => None,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_pairs(&parse_pairs(text)?)?;
        Ok(cfg)
    }

    /// Applies every pair; unknown keys are an error.
    pub fn apply_pairs(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        let rest = self.train.model.apply_pairs(pairs)?;
        for k in rest {
            let v = &pairs[k];
            let bad = || Error::Config(format!("invalid value {v:?} for {k}"));
            let t = &mut self.train;
            match k {
                "epochs" => t.epochs = v.parse().map_err(|_| bad())?,
                "patience" => t.patience = v.parse().map_err(|_| bad())?,
                "lr" => t.lr = v.parse().map_err(|_| bad())?,
                "clip" => t.clip_norm = v.parse().map_err(|_| bad())?,
                "mask_count" => t.mask = MaskMode::Count(v.parse().map_err(|_| bad())?),
                "mask" => t.mask = v.parse()?,
                "loss" => t.loss = v.parse()?,
                "seed" => t.seed = v.parse().map_err(|_| bad())?,
                "workers" => t.workers = v.parse().map_err(|_| bad())?,
                "split" => self.split = parse_split(v).ok_or_else(bad)?,
                "n_new" => self.n_new = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        self.apply_pairs(&BTreeMap::from([(key.to_string(), value.to_string())]))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let (a, b, c) = self.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split {a},{b},{c} must be positive and sum to 1")));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.train.model.to_pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        let t = &self.train;
        let _ = writeln!(s, "epochs={}", t.epochs);
        let _ = writeln!(s, "patience={}", t.patience);
        let _ = writeln!(s, "lr={}", t.lr);
        let _ = writeln!(s, "clip={}", t.clip_norm);
        let _ = writeln!(s, "mask={}", t.mask);
        let _ = writeln!(s, "loss={}", t.loss);
        let _ = writeln!(s, "seed={}", t.seed);
        let _ = writeln!(s, "workers={}", t.workers);
        let _ = writeln!(s, "split={},{},{}", self.split.0, self.split.1, self.split.2);
        let _ = writeln!(s, "n_new={}", self.n_new);
        s
    }
}
