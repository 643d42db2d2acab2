//! Flat JSON run configuration. Every run directory and checkpoint embeds the
//! full configuration so runs are self-describing.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wavemix::blocks::{DEFAULT_LITE_EXPANSION, DEFAULT_MLP_HIDDEN_MULT};
use wavemix::model::{BlockKind, ModelConfig};
use wavemix::optim::AdamConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // model
    pub model: String,
    pub dim: usize,
    pub depth: usize,
    pub levels: Option<usize>,
    pub dropout: f64,
    pub lite_expansion: usize,
    pub mlp_hidden_mult: usize,
    pub ff_expansion: usize,
    // optimizer
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    // data
    pub dataset: String,
    pub data_dir: PathBuf,
    /// Optional cap on the training split (reduced-scale gates).
    pub train_subset: Option<usize>,
    // run
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub repeat: usize,
    pub deterministic: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "wavemix".to_string(),
            dim: 16,
            depth: 5,
            levels: None,
            dropout: 0.5,
            lite_expansion: DEFAULT_LITE_EXPANSION,
            mlp_hidden_mult: DEFAULT_MLP_HIDDEN_MULT,
            ff_expansion: 2,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            dataset: "mnist".to_string(),
            data_dir: PathBuf::from("data"),
            train_subset: None,
            batch_size: 64,
            epochs: 120,
            seed: 0,
            repeat: 1,
            deterministic: false,
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    /// Model configuration for a dataset geometry.
    pub fn model_config(
        &self,
        in_channels: usize,
        input_size: (usize, usize),
        num_classes: usize,
    ) -> Result<ModelConfig> {
        let kind = BlockKind::parse(&self.model)?;
        let mut mc = ModelConfig::new(kind, self.dim, self.depth);
        mc.levels = self.levels;
        mc.input_size = input_size;
        mc.in_channels = in_channels;
        mc.num_classes = num_classes;
        mc.dropout = self.dropout;
        mc.lite_expansion = self.lite_expansion;
        mc.mlp_hidden_mult = self.mlp_hidden_mult;
        mc.ff_expansion = self.ff_expansion;
        Ok(mc)
    }
}
