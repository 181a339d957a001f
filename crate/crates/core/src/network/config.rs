use serde::{Deserialize, Serialize};

use crate::doc::ClassSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Neighbors kept per box edge; 0 turns graph convolution into a dense layer.
    pub n_neighbors: usize,
    pub char_kernel: usize,
    pub char_filters: usize,
    /// Width of every hidden layer, including the attention units.
    pub hidden_width: usize,
    pub seq_conv_kernel: usize,
    pub attention_heads: usize,
    pub ffn_width: usize,
    pub post_conv_kernel: usize,
    pub dropout_rate: f64,
    pub class_count: usize,
    pub use_attention: bool,
    pub use_seq_conv: bool,
    pub use_dropout_block: bool,
    pub use_text_features: bool,
    pub use_char_embed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_neighbors: 1,
            char_kernel: 3,
            char_filters: 16,
            hidden_width: 64,
            seq_conv_kernel: 5,
            attention_heads: 8,
            ffn_width: 128,
            post_conv_kernel: 3,
            dropout_rate: 0.1,
            class_count: 4,
            use_attention: true,
            use_seq_conv: true,
            use_dropout_block: true,
            use_text_features: true,
            use_char_embed: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("char_kernel", self.char_kernel),
            ("char_filters", self.char_filters),
            ("hidden_width", self.hidden_width),
            ("seq_conv_kernel", self.seq_conv_kernel),
            ("attention_heads", self.attention_heads),
            ("ffn_width", self.ffn_width),
            ("post_conv_kernel", self.post_conv_kernel),
            ("class_count", self.class_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden_width.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "hidden_width {} is not divisible by attention_heads {}",
                self.hidden_width, self.attention_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Focal,
}

/// Which classes contribute to the loss and get scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Targets {
    All,
    /// Line-item body and header only.
    Lineitems,
    /// Everything except the line-item classes.
    Others,
    NoHeader,
}

impl Targets {
    pub fn active(self, schema: &ClassSchema) -> Vec<bool> {
        (0..schema.class_count())
            .map(|c| {
                let line_item = c == schema.body_class || c == schema.header_class;
                match self {
                    Targets::All => true,
                    Targets::Lineitems => line_item,
                    Targets::Others => !line_item,
                    Targets::NoHeader => c != schema.header_class,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub augment: bool,
    pub targets: Targets,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            max_epochs: 100,
            batch_size: 8,
            loss: LossKind::Bce,
            focal_gamma: 2.0,
            augment: true,
            targets: Targets::All,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::Config("focal_gamma must be non-negative".into()));
        }
        Ok(())
    }
}
