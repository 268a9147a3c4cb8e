//! Flat `section.key = value` configuration with documented defaults.

use std::path::Path;

use bn_adapt::AdaptConfig;
use domain_data::DataConfig;
use fed_protocol::TransportKind;
use nn_engine::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    /// Federated rounds R.
    pub rounds: u32,
    /// Client count m.
    pub clients: u32,
    /// Support shots per class.
    pub k: usize,
    /// Query samples per class.
    pub q: usize,
    pub gain_range: (f32, f32),
    pub bias_range: (f32, f32),
    pub transport: TransportKind,
    /// Master seed: drives data generation, training and rounds.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            rounds: 3,
            clients: 4,
            k: 5,
            q: 20,
            gain_range: domain_data::DEFAULT_GAIN_RANGE,
            bias_range: domain_data::DEFAULT_BIAS_RANGE,
            transport: TransportKind::InProc,
            seed: 42,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        CliError::Config(format!(
            "line {line}: cannot parse value '{value}' for key '{key}'"
        ))
    })
}

impl SimConfig {
    /// Parse the file at `path`; `FEDMIX_SEED`, when set, overrides the seed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Ok(s) = std::env::var("FEDMIX_SEED") {
            cfg.set_seed(
                s.parse()
                    .map_err(|_| CliError::Config(format!("FEDMIX_SEED is not a u64: '{s}'")))?,
            );
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {line}: expected 'section.key = value'"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value, line)?;
        }
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "data.classes" => self.data.classes = parse_value(key, value, line)?,
            "data.side" => self.data.side = parse_value(key, value, line)?,
            "data.train_size" => self.data.train_size = parse_value(key, value, line)?,
            "data.test_size" => self.data.test_size = parse_value(key, value, line)?,
            "data.grid" => self.data.grid = parse_value(key, value, line)?,
            "data.noise_std" => self.data.noise_std = parse_value(key, value, line)?,
            "train.steps" => self.train.steps = parse_value(key, value, line)?,
            "train.lr" => self.train.lr = parse_value(key, value, line)?,
            "train.momentum" => self.train.momentum = parse_value(key, value, line)?,
            "train.batch_size" => self.train.batch_size = parse_value(key, value, line)?,
            "train.bn_momentum" => self.train.bn_momentum = parse_value(key, value, line)?,
            "adapt.steps" => self.adapt.steps = parse_value(key, value, line)?,
            "adapt.lr" => self.adapt.lr = parse_value(key, value, line)?,
            "adapt.momentum" => self.adapt.momentum = parse_value(key, value, line)?,
            "adapt.batch_size" => self.adapt.batch_size = parse_value(key, value, line)?,
            "adapt.lambda0" => self.adapt.lambda0 = parse_value(key, value, line)?,
            "adapt.mixstyle_p" => self.adapt.mixstyle.p = parse_value(key, value, line)?,
            "adapt.mixstyle_alpha" => self.adapt.mixstyle.alpha = parse_value(key, value, line)?,
            "adapt.mixstyle_enabled" => {
                self.adapt.mixstyle.enabled = parse_value(key, value, line)?
            }
            "fed.rounds" => self.rounds = parse_value(key, value, line)?,
            "fed.clients" => self.clients = parse_value(key, value, line)?,
            "fed.k_shot" => self.k = parse_value(key, value, line)?,
            "fed.query" => self.q = parse_value(key, value, line)?,
            "fed.gain_min" => self.gain_range.0 = parse_value(key, value, line)?,
            "fed.gain_max" => self.gain_range.1 = parse_value(key, value, line)?,
            "fed.bias_min" => self.bias_range.0 = parse_value(key, value, line)?,
            "fed.bias_max" => self.bias_range.1 = parse_value(key, value, line)?,
            "fed.transport" => {
                self.transport = value
                    .parse()
                    .map_err(|e| CliError::Config(format!("line {line}: {e}")))?
            }
            "sim.seed" => {
                let seed = parse_value(key, value, line)?;
                self.set_seed(seed);
            }
            other => {
                return Err(CliError::Config(format!(
                    "line {line}: unknown key '{other}'"
                )))
            }
        }
        Ok(())
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(CliError::Config("fed.rounds: must be at least 1".into()));
        }
        if self.clients == 0 {
            return Err(CliError::Config("fed.clients: must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(CliError::Config("fed.k_shot: must be at least 1".into()));
        }
        if self.q == 0 {
            return Err(CliError::Config("fed.query: must be at least 1".into()));
        }
        self.data
            .validate()
            .map_err(|e| CliError::Config(format!("data.*: {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train.*: {e}")))?;
        self.adapt
            .validate()
            .map_err(|e| CliError::Config(format!("adapt.*: {e}")))?;
        Ok(())
    }
}
