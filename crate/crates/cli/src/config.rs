//! Experiment configuration: one TOML file with optional sections, plus
//! command-line overrides that always win.

use std::path::Path;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tablegraph_core::baseline::BaselineConfig;
use tablegraph_core::data::{infer_schema, DatasetRecord, SynthConfig};
use tablegraph_core::doc::ClassSchema;
use tablegraph_core::network::{LossKind, ModelConfig, Targets, TrainConfig};

use crate::failure::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    /// Names of the field classes after body and header. Inferred from the
    /// dataset annotations when absent.
    pub fields: Option<Vec<String>>,
    /// Seed for the train/validation/generalization split; defaults to the
    /// training seed.
    pub split_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.train.seed)
    }

    pub fn schema(&self, records: &[DatasetRecord], min_classes: usize) -> Result<ClassSchema, Failure> {
        let schema = match &self.fields {
            Some(f) => ClassSchema::with_fields(f).map_err(Failure::from)?,
            None => infer_schema(records, min_classes).map_err(Failure::from)?,
        };
        tablegraph_core::data::validate_classes(records, &schema)?;
        Ok(schema)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Bce,
    Focal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetsArg {
    All,
    Lineitems,
    Others,
    NoHeader,
}

impl From<TargetsArg> for Targets {
    fn from(t: TargetsArg) -> Self {
        match t {
            TargetsArg::All => Targets::All,
            TargetsArg::Lineitems => Targets::Lineitems,
            TargetsArg::Others => Targets::Others,
            TargetsArg::NoHeader => Targets::NoHeader,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Neighbors per edge in the box graph.
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_seq_conv: bool,
    #[arg(long)]
    pub no_dropout_block: bool,
    /// Drops the text features and the character embedding.
    #[arg(long)]
    pub no_text_features: bool,
    #[arg(long, value_enum)]
    pub targets: Option<TargetsArg>,
}

impl Overrides {
    /// Loads the config file and applies every flag on top of it.
    pub fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        self.apply(&mut cfg);
        cfg.model.validate().map_err(Failure::from)?;
        cfg.train.validate().map_err(Failure::from)?;
        cfg.baseline.validate().map_err(Failure::from)?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.synth.seed = s;
            cfg.train.seed = s;
            cfg.baseline.seed = s;
        }
        if let Some(n) = self.neighbors {
            cfg.model.n_neighbors = n;
            cfg.baseline.k_neighbors = n;
        }
        if let Some(l) = self.loss {
            cfg.train.loss = match l {
                LossArg::Bce => LossKind::Bce,
                LossArg::Focal => LossKind::Focal,
            };
        }
        if self.no_attention {
            cfg.model.use_attention = false;
        }
        if self.no_seq_conv {
            cfg.model.use_seq_conv = false;
        }
        if self.no_dropout_block {
            cfg.model.use_dropout_block = false;
        }
        if self.no_text_features {
            cfg.model.use_text_features = false;
            cfg.model.use_char_embed = false;
        }
        if let Some(t) = self.targets {
            cfg.train.targets = t.into();
        }
    }
}
