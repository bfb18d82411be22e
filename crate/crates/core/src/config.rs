//! Run configuration: a flat, diff-friendly key-value format with dotted
//! sections (`loss.C = 5`, `optimizer.phase1.lr = 0.1`). The same text form
//! is embedded verbatim in every report and checkpoint, so any run can be
//! replayed from its own snapshot.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::Criterion;
use crate::error::{Error, Result};
use crate::eval::ChunkPolicy;
use crate::loss::{LossConfig, MarginMode};
use crate::model::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Baseline,
    TwoStep,
    Joint,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::TwoStep => "two_step",
            Regime::Joint => "joint",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Regime::Baseline),
            "two_step" => Ok(Regime::TwoStep),
            "joint" => Ok(Regime::Joint),
            other => Err(Error::Parse(format!(
                "unknown regime '{other}' (expected baseline, two_step or joint)"
            ))),
        }
    }
}

/// Stochastic gradient descent settings for one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Learning rate and epoch budget of one training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

/// Full experiment configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub regime: Regime,
    pub criterion: Criterion,
    pub seed: u64,
    pub batch_size: usize,
    pub chunk_len: usize,
    /// Early-stopping patience in epochs; 0 disables early stopping and
    /// best-weights restoration.
    pub patience: usize,
    pub manifest: Option<PathBuf>,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub momentum: f64,
    pub weight_decay: f64,
    pub phase1: PhaseConfig,
    /// Head phase of the two-step regime; ignored by the single-phase ones.
    pub phase2: PhaseConfig,
    pub chunk_policy: ChunkPolicy,
    pub perplexity: f64,
}

impl RunConfig {
    /// Regime defaults: baseline and joint train one phase of 300 epochs at
    /// lr 0.005; two-step trains the encoder 150 epochs at lr 0.1 and the
    /// head 300 epochs at lr 0.005.
    pub fn for_regime(regime: Regime) -> Self {
        let phase1 = match regime {
            Regime::TwoStep => PhaseConfig {
                learning_rate: 0.1,
                epochs: 150,
            },
            _ => PhaseConfig {
                learning_rate: 0.005,
                epochs: 300,
            },
        };
        RunConfig {
            regime,
            criterion: Criterion::Musicality,
            seed: 0,
            batch_size: 8,
            chunk_len: crate::contour::DEFAULT_CHUNK_LEN,
            patience: 75,
            manifest: None,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            momentum: 0.9,
            weight_decay: 1e-5,
            phase1,
            phase2: PhaseConfig {
                learning_rate: 0.005,
                epochs: 300,
            },
            chunk_policy: ChunkPolicy::Center,
            perplexity: 30.0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.encoder.validate()?;
        if self.encoder.input_len != self.chunk_len {
            return Err(Error::Validation(format!(
                "encoder input length {} must equal chunk_len {}",
                self.encoder.input_len, self.chunk_len
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Validation("batch_size must be >= 2".into()));
        }
        if self.phase1.epochs == 0 || self.phase2.epochs == 0 {
            return Err(Error::Validation("phase epoch budgets must be >= 1".into()));
        }
        if self.phase1.learning_rate <= 0.0
            || self.phase2.learning_rate <= 0.0
            || !self.phase1.learning_rate.is_finite()
            || !self.phase2.learning_rate.is_finite()
        {
            return Err(Error::Validation("learning rates must be > 0".into()));
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::Validation(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        if !self.perplexity.is_finite() || self.perplexity <= 0.0 {
            return Err(Error::Validation("perplexity must be > 0".into()));
        }
        if let ChunkPolicy::Mean { chunks } = self.chunk_policy {
            if chunks == 0 {
                return Err(Error::Validation("chunks_per_recording must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn optimizer_for(&self, phase: &PhaseConfig) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: phase.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Canonical text form; `parse` inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "regime = {}", self.regime);
        let _ = writeln!(out, "criterion = {}", self.criterion);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "chunk_len = {}", self.chunk_len);
        let _ = writeln!(out, "patience = {}", self.patience);
        if let Some(m) = &self.manifest {
            let _ = writeln!(out, "data.manifest = {}", m.display());
        }
        let _ = writeln!(out, "loss.C = {}", self.loss.bins);
        let _ = writeln!(out, "loss.s = {}", self.loss.margin);
        let _ = writeln!(out, "loss.mode = {}", self.loss.mode);
        let _ = writeln!(out, "loss.contrastive_weight = {}", self.loss.contrastive_weight);
        let channels: Vec<String> = self
            .encoder
            .conv_channels
            .iter()
            .map(|c| c.to_string())
            .collect();
        let _ = writeln!(out, "encoder.channels = {}", channels.join(","));
        let _ = writeln!(out, "encoder.kernel_size = {}", self.encoder.kernel_size);
        let _ = writeln!(out, "encoder.stride = {}", self.encoder.stride);
        let _ = writeln!(out, "optimizer.momentum = {}", self.momentum);
        let _ = writeln!(out, "optimizer.weight_decay = {}", self.weight_decay);
        let _ = writeln!(out, "optimizer.phase1.lr = {}", self.phase1.learning_rate);
        let _ = writeln!(out, "optimizer.phase1.epochs = {}", self.phase1.epochs);
        let _ = writeln!(out, "optimizer.phase2.lr = {}", self.phase2.learning_rate);
        let _ = writeln!(out, "optimizer.phase2.epochs = {}", self.phase2.epochs);
        let policy = match self.chunk_policy {
            ChunkPolicy::Center => "center".to_string(),
            ChunkPolicy::Mean { .. } => "mean".to_string(),
        };
        let _ = writeln!(out, "eval.chunk_policy = {policy}");
        let chunks = match self.chunk_policy {
            ChunkPolicy::Center => 1,
            ChunkPolicy::Mean { chunks } => chunks,
        };
        let _ = writeln!(out, "eval.chunks_per_recording = {chunks}");
        let _ = writeln!(out, "eval.perplexity = {}", self.perplexity);
        out
    }

    /// Parse config text, then apply `key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut map = KeyMap::from_text(text)?;
        map.apply_overrides(overrides)?;
        RunConfig::from_map(&mut map)
    }

    fn from_map(map: &mut KeyMap) -> Result<RunConfig> {
        let regime: Regime = map.parse_required("regime")?;
        let mut cfg = RunConfig::for_regime(regime);
        if let Some(v) = map.take("criterion") {
            cfg.criterion = v.parse()?;
        }
        if let Some(v) = map.take("seed") {
            cfg.seed = parse_num(&v, "seed")?;
        }
        if let Some(v) = map.take("batch_size") {
            cfg.batch_size = parse_num(&v, "batch_size")?;
        }
        if let Some(v) = map.take("chunk_len") {
            cfg.chunk_len = parse_num(&v, "chunk_len")?;
        }
        if let Some(v) = map.take("patience") {
            cfg.patience = parse_num(&v, "patience")?;
        }
        if let Some(v) = map.take("data.manifest") {
            cfg.manifest = Some(PathBuf::from(v));
        }
        if let Some(v) = map.take("loss.C") {
            cfg.loss.bins = parse_num(&v, "loss.C")?;
        }
        if let Some(v) = map.take("loss.s") {
            cfg.loss.margin = parse_num(&v, "loss.s")?;
        }
        if let Some(v) = map.take("loss.mode") {
            cfg.loss.mode = v.parse::<MarginMode>()?;
        }
        if let Some(v) = map.take("loss.contrastive_weight") {
            cfg.loss.contrastive_weight = parse_num(&v, "loss.contrastive_weight")?;
        }
        if let Some(v) = map.take("encoder.channels") {
            cfg.encoder.conv_channels = v
                .split(',')
                .map(|c| parse_num(c.trim(), "encoder.channels"))
                .collect::<Result<Vec<usize>>>()?;
        }
        if let Some(v) = map.take("encoder.kernel_size") {
            cfg.encoder.kernel_size = parse_num(&v, "encoder.kernel_size")?;
        }
        if let Some(v) = map.take("encoder.stride") {
            cfg.encoder.stride = parse_num(&v, "encoder.stride")?;
        }
        if let Some(v) = map.take("optimizer.momentum") {
            cfg.momentum = parse_num(&v, "optimizer.momentum")?;
        }
        if let Some(v) = map.take("optimizer.weight_decay") {
            cfg.weight_decay = parse_num(&v, "optimizer.weight_decay")?;
        }
        if let Some(v) = map.take("optimizer.phase1.lr") {
            cfg.phase1.learning_rate = parse_num(&v, "optimizer.phase1.lr")?;
        }
        if let Some(v) = map.take("optimizer.phase1.epochs") {
            cfg.phase1.epochs = parse_num(&v, "optimizer.phase1.epochs")?;
        }
        if let Some(v) = map.take("optimizer.phase2.lr") {
            cfg.phase2.learning_rate = parse_num(&v, "optimizer.phase2.lr")?;
        }
        if let Some(v) = map.take("optimizer.phase2.epochs") {
            cfg.phase2.epochs = parse_num(&v, "optimizer.phase2.epochs")?;
        }
        let policy = map.take("eval.chunk_policy");
        let chunks = map
            .take("eval.chunks_per_recording")
            .map(|v| parse_num(&v, "eval.chunks_per_recording"))
            .transpose()?
            .unwrap_or(1);
        cfg.chunk_policy = match policy.as_deref() {
            None | Some("center") => ChunkPolicy::Center,
            Some("mean") => ChunkPolicy::Mean { chunks },
            Some(other) => {
                return Err(Error::Parse(format!(
                    "unknown eval.chunk_policy '{other}' (expected center or mean)"
                )))
            }
        };
        if let Some(v) = map.take("eval.perplexity") {
            cfg.perplexity = parse_num(&v, "eval.perplexity")?;
        }
        map.expect_empty()?;
        cfg.encoder.input_len = cfg.chunk_len;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Grid configuration for run-matrix: the regime, criterion, and seed lists
/// plus the shared base keys. Each cell re-applies the base keys on top of
/// that regime's defaults, so an unset learning rate still follows the
/// per-regime protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixConfig {
    pub regimes: Vec<Regime>,
    pub criteria: Vec<Criterion>,
    pub seeds: Vec<u64>,
    /// Shared keys applied to every cell (regime/criterion/seed excluded).
    entries: Vec<(String, String)>,
}

impl MatrixConfig {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let regimes: Vec<&str> = self.regimes.iter().map(|r| r.name()).collect();
        let criteria: Vec<&str> = self.criteria.iter().map(|c| c.name()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "matrix.regimes = {}", regimes.join(","));
        let _ = writeln!(out, "matrix.criteria = {}", criteria.join(","));
        let _ = writeln!(out, "matrix.seeds = {}", seeds.join(","));
        for (key, value) in &self.entries {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<MatrixConfig> {
        let mut map = KeyMap::from_text(text)?;
        map.apply_overrides(overrides)?;
        let regimes = map
            .take("matrix.regimes")
            .unwrap_or_else(|| "baseline,two_step,joint".into())
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<Regime>>>()?;
        let criteria = map
            .take("matrix.criteria")
            .unwrap_or_else(|| "musicality,note_accuracy,rhythm_accuracy".into())
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<Criterion>>>()?;
        let seeds = map
            .take("matrix.seeds")
            .unwrap_or_else(|| "0,1,2,3,4".into())
            .split(',')
            .map(|s| parse_num(s.trim(), "matrix.seeds"))
            .collect::<Result<Vec<u64>>>()?;
        if regimes.is_empty() || criteria.is_empty() || seeds.is_empty() {
            return Err(Error::Validation(
                "matrix needs at least one regime, criterion and seed".into(),
            ));
        }
        // Cells own these three keys.
        for cell_key in ["regime", "criterion", "seed"] {
            map.take(cell_key);
        }
        let matrix = MatrixConfig {
            regimes,
            criteria,
            seeds,
            entries: map.entries.clone(),
        };
        // Surface bad base keys now rather than mid-grid.
        matrix.cell_config(matrix.regimes[0], matrix.criteria[0], matrix.seeds[0])?;
        Ok(matrix)
    }

    /// Config for one grid cell: regime defaults, then the shared base keys.
    pub fn cell_config(
        &self,
        regime: Regime,
        criterion: Criterion,
        seed: u64,
    ) -> Result<RunConfig> {
        let mut text = format!("regime = {regime}\ncriterion = {criterion}\nseed = {seed}\n");
        for (key, value) in &self.entries {
            let _ = writeln!(text, "{key} = {value}");
        }
        RunConfig::parse(&text, &[])
    }

    pub fn manifest(&self) -> Option<PathBuf> {
        self.entries
            .iter()
            .find(|(k, _)| k == "data.manifest")
            .map(|(_, v)| PathBuf::from(v))
    }

    pub fn set_manifest(&mut self, path: &std::path::Path) {
        let value = path.display().to_string();
        if let Some(entry) = self.entries.iter_mut().find(|(k, _)| k == "data.manifest") {
            entry.1 = value;
        } else {
            self.entries.push(("data.manifest".into(), value));
        }
    }
}

fn parse_num<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("config key {key}: cannot parse '{value}'")))
}

/// Ordered key-value view of a config document.
struct KeyMap {
    entries: Vec<(String, String)>,
}

impl KeyMap {
    fn from_text(text: &str) -> Result<KeyMap> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: expected 'key = value'", no + 1))
            })?;
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        let mut seen = BTreeSet::new();
        for (key, _) in &entries {
            if !seen.insert(key.clone()) {
                return Err(Error::Parse(format!("duplicate config key '{key}'")));
            }
        }
        Ok(KeyMap { entries })
    }

    /// Overrides must name keys the schema knows; they replace or add.
    fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Usage(format!("override '{item}' is not of the form key=value"))
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Usage(format!("override names unknown config key '{key}'")));
            }
            if let Some(entry) = self.entries.iter_mut().find(|(k, _)| *k == key) {
                entry.1 = value;
            } else {
                self.entries.push((key, value));
            }
        }
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        let idx = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(idx).1)
    }

    fn parse_required<T: FromStr<Err = Error>>(&mut self, key: &str) -> Result<T> {
        self.take(key)
            .ok_or_else(|| Error::Parse(format!("config is missing required key '{key}'")))?
            .parse()
    }

    fn expect_empty(&self) -> Result<()> {
        if let Some((key, _)) = self.entries.first() {
            return Err(Error::Parse(format!("unknown config key '{key}'")));
        }
        Ok(())
    }
}

const KNOWN_KEYS: [&str; 26] = [
    "regime",
    "criterion",
    "seed",
    "batch_size",
    "chunk_len",
    "patience",
    "data.manifest",
    "loss.C",
    "loss.s",
    "loss.mode",
    "loss.contrastive_weight",
    "encoder.channels",
    "encoder.kernel_size",
    "encoder.stride",
    "optimizer.momentum",
    "optimizer.weight_decay",
    "optimizer.phase1.lr",
    "optimizer.phase1.epochs",
    "optimizer.phase2.lr",
    "optimizer.phase2.epochs",
    "eval.chunk_policy",
    "eval.chunks_per_recording",
    "eval.perplexity",
    "matrix.regimes",
    "matrix.criteria",
    "matrix.seeds",
];
