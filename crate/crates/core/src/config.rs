//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Every hyperparameter has a default
//! except `seed`, which must be given. Paths are run-local and are left out of
//! [`RunConfig::snapshot`], the text embedded in checkpoints.

use std::env;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::electra::ElectraConfig;
use crate::ensemble::{EnsembleConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::glove::GloveConfig;

pub const DATA_DIR_ENV: &str = "TREC_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/trec";
pub const TRAIN_FILE_NAME: &str = "train_5500.label";
pub const TEST_FILE_NAME: &str = "TREC_10.label";

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub vectors: PathBuf,
    pub electra_checkpoint: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub eval_metrics: PathBuf,
}

impl Paths {
    /// Dataset files under `$TREC_DATA_DIR` (or `data/trec`), outputs under `artifacts/`.
    pub fn from_env() -> Self {
        let data = env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
        Paths::with_dirs(&data, Path::new("artifacts"))
    }

    pub fn with_dirs(data: &Path, out: &Path) -> Self {
        Paths {
            train: data.join(TRAIN_FILE_NAME),
            test: data.join(TEST_FILE_NAME),
            vectors: out.join("glove.txt"),
            electra_checkpoint: out.join("electra.ckpt"),
            checkpoint: out.join("ensemble.ckpt"),
            metrics: out.join("metrics.csv"),
            eval_metrics: out.join("eval.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub max_len: usize,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
    pub glove: GloveConfig,
    pub electra: ElectraConfig,
    /// Fraction of training questions held out from pretraining to measure replaced-token AUC.
    pub electra_heldout: f64,
    pub ensemble: EnsembleConfig,
    pub train: TrainConfig,
    /// Train the ensemble from freshly initialized branches instead of pretrained artifacts.
    pub fresh_init: bool,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            max_len: 32,
            vocab_min_freq: 1,
            vocab_max_size: 30_000,
            glove: GloveConfig::default(),
            electra: ElectraConfig::default(),
            electra_heldout: 0.1,
            ensemble: EnsembleConfig::default(),
            train: TrainConfig::default(),
            fresh_init: false,
            paths: Paths::from_env(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

impl RunConfig {
    /// Hyperparameters in canonical order, formatted so that parsing them back is exact.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = Vec::new();
        if let Some(seed) = self.seed {
            e.push(("seed", seed.to_string()));
        }
        let g = &self.glove;
        let x = &self.electra;
        let t = &self.train;
        e.extend([
            ("max_len", self.max_len.to_string()),
            ("vocab.min_freq", self.vocab_min_freq.to_string()),
            ("vocab.max_size", self.vocab_max_size.to_string()),
            ("glove.dim", g.dim.to_string()),
            ("glove.window", g.window.to_string()),
            ("glove.epochs", g.epochs.to_string()),
            ("glove.lr", g.lr.to_string()),
            ("glove.x_max", g.x_max.to_string()),
            ("glove.alpha", g.alpha.to_string()),
            ("electra.gen_width", x.gen_width.to_string()),
            ("electra.gen_layers", x.gen_layers.to_string()),
            ("electra.gen_heads", x.gen_heads.to_string()),
            ("electra.disc_width", x.disc_width.to_string()),
            ("electra.disc_layers", x.disc_layers.to_string()),
            ("electra.disc_heads", x.disc_heads.to_string()),
            ("electra.ff_mult", x.ff_mult.to_string()),
            ("electra.max_positions", x.max_positions.to_string()),
            ("electra.mask_rate", x.mask_rate.to_string()),
            ("electra.epochs", x.epochs.to_string()),
            ("electra.batch_size", x.batch_size.to_string()),
            ("electra.lr", x.lr.to_string()),
            ("electra.lambda", x.lambda.to_string()),
            ("electra.heldout", self.electra_heldout.to_string()),
            (
                "ensemble.lstm1_units",
                self.ensemble.lstm1_units.to_string(),
            ),
            (
                "ensemble.lstm2_units",
                self.ensemble.lstm2_units.to_string(),
            ),
            ("ensemble.epochs", t.epochs.to_string()),
            ("ensemble.batch_size", t.batch_size.to_string()),
            ("ensemble.lr", t.lr.to_string()),
            ("ensemble.freeze_electra", t.freeze_electra.to_string()),
            ("ensemble.freeze_glove", t.freeze_glove.to_string()),
            ("ensemble.fresh_init", self.fresh_init.to_string()),
        ]);
        e
    }

    /// Sets one key. Path keys are accepted too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = Some(parse(key, v)?),
            "max_len" => self.max_len = parse(key, v)?,
            "vocab.min_freq" => self.vocab_min_freq = parse(key, v)?,
            "vocab.max_size" => self.vocab_max_size = parse(key, v)?,
            "glove.dim" => self.glove.dim = parse(key, v)?,
            "glove.window" => self.glove.window = parse(key, v)?,
            "glove.epochs" => self.glove.epochs = parse(key, v)?,
            "glove.lr" => self.glove.lr = parse(key, v)?,
            "glove.x_max" => self.glove.x_max = parse(key, v)?,
            "glove.alpha" => self.glove.alpha = parse(key, v)?,
            "electra.gen_width" => self.electra.gen_width = parse(key, v)?,
            "electra.gen_layers" => self.electra.gen_layers = parse(key, v)?,
            "electra.gen_heads" => self.electra.gen_heads = parse(key, v)?,
            "electra.disc_width" => self.electra.disc_width = parse(key, v)?,
            "electra.disc_layers" => self.electra.disc_layers = parse(key, v)?,
            "electra.disc_heads" => self.electra.disc_heads = parse(key, v)?,
            "electra.ff_mult" => self.electra.ff_mult = parse(key, v)?,
            "electra.max_positions" => self.electra.max_positions = parse(key, v)?,
            "electra.mask_rate" => self.electra.mask_rate = parse(key, v)?,
            "electra.epochs" => self.electra.epochs = parse(key, v)?,
            "electra.batch_size" => self.electra.batch_size = parse(key, v)?,
            "electra.lr" => self.electra.lr = parse(key, v)?,
            "electra.lambda" => self.electra.lambda = parse(key, v)?,
            "electra.heldout" => self.electra_heldout = parse(key, v)?,
            "ensemble.lstm1_units" => self.ensemble.lstm1_units = parse(key, v)?,
            "ensemble.lstm2_units" => self.ensemble.lstm2_units = parse(key, v)?,
            "ensemble.epochs" => self.train.epochs = parse(key, v)?,
            "ensemble.batch_size" => self.train.batch_size = parse(key, v)?,
            "ensemble.lr" => self.train.lr = parse(key, v)?,
            "ensemble.freeze_electra" => self.train.freeze_electra = parse(key, v)?,
            "ensemble.freeze_glove" => self.train.freeze_glove = parse(key, v)?,
            "ensemble.fresh_init" => self.fresh_init = parse(key, v)?,
            "path.train" => self.paths.train = PathBuf::from(v),
            "path.test" => self.paths.test = PathBuf::from(v),
            "path.vectors" => self.paths.vectors = PathBuf::from(v),
            "path.electra_checkpoint" => self.paths.electra_checkpoint = PathBuf::from(v),
            "path.checkpoint" => self.paths.checkpoint = PathBuf::from(v),
            "path.metrics" => self.paths.metrics = PathBuf::from(v),
            "path.eval_metrics" => self.paths.eval_metrics = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        self.sync_seeds();
        Ok(())
    }

    fn sync_seeds(&mut self) {
        let seed = self.seed.unwrap_or(0);
        self.glove.seed = seed;
        self.electra.seed = seed;
        self.train.seed = seed;
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_text(&text)
    }

    /// Hyperparameters only, one `key = value` per line.
    pub fn snapshot(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (set seed = N)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        if self.max_len > self.electra.max_positions {
            return bad(format!(
                "max_len {} exceeds electra.max_positions {}",
                self.max_len, self.electra.max_positions
            ));
        }
        if self.vocab_min_freq == 0 || self.vocab_max_size < 3 {
            return bad("vocab.min_freq must be >= 1 and vocab.max_size >= 3".into());
        }
        let g = &self.glove;
        if g.dim == 0 || g.window == 0 || !(g.lr > 0.0) || !(g.x_max > 0.0) || !(g.alpha > 0.0) {
            return bad("glove settings must be positive".into());
        }
        self.electra.validate()?;
        if !(0.0..1.0).contains(&self.electra_heldout) {
            return bad(format!(
                "electra.heldout {} outside [0, 1)",
                self.electra_heldout
            ));
        }
        if self.ensemble.lstm1_units == 0 || self.ensemble.lstm2_units == 0 {
            return bad("lstm unit counts must be positive".into());
        }
        if self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return bad("ensemble batch size and learning rate must be positive".into());
        }
        Ok(())
    }
}
