use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamHyper, OptimizerKind};
use crate::error::{Error, Result};
use crate::forest::TreeConfig;
use crate::model::{FusionMode, ModelDims, TrainConfig};

/// Every knob of a run. Read from a flat TOML file in which every key is
/// optional except `seed`, which may instead come from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,

    /// Directory holding `notes.jsonl`, `labels.jsonl` and the structured files.
    pub data_dir: PathBuf,
    /// Optional pretrained word vectors in word2vec text format.
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub max_len: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,

    pub d_embed: usize,
    pub d_lstm: usize,
    pub d_tree: usize,
    pub d_leaf: usize,

    pub tree_max_depth: usize,
    pub tree_learning_rate: f64,
    pub tree_l2_lambda: f64,
    pub tree_min_child_weight: f64,
    pub min_positives: usize,

    pub fusion: FusionMode,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,

    pub threshold: f64,
    pub ks: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let tree = TreeConfig::default();
        Self {
            seed: None,
            data_dir: PathBuf::from("data"),
            embeddings: None,
            out_dir: PathBuf::from("runs"),
            max_len: 4000,
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
            d_embed: 100,
            d_lstm: 128,
            d_tree: 128,
            d_leaf: 30,
            tree_max_depth: tree.max_depth,
            tree_learning_rate: tree.learning_rate,
            tree_l2_lambda: tree.l2_lambda,
            tree_min_child_weight: tree.min_child_weight,
            min_positives: tree.min_positives,
            fusion: FusionMode::Attention,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 1,
            clip_norm: 5.0,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            ks: vec![5],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("no seed given (set `seed` or pass --seed)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let dims = [
            ("max_len", self.max_len),
            ("d_embed", self.d_embed),
            ("d_lstm", self.d_lstm),
            ("d_tree", self.d_tree),
            ("d_leaf", self.d_leaf),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let ratios = [self.train_ratio, self.val_ratio, self.test_ratio];
        if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.tree_learning_rate > 0.0) || !(self.tree_l2_lambda >= 0.0) || !(self.tree_min_child_weight >= 0.0) {
            return Err(Error::Config("invalid tree settings".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("ks must be positive".into()));
        }
        Ok(())
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            max_depth: self.tree_max_depth,
            learning_rate: self.tree_learning_rate,
            l2_lambda: self.tree_l2_lambda,
            min_child_weight: self.tree_min_child_weight,
            min_positives: self.min_positives,
        }
    }

    pub fn model_dims(&self, vocab_size: usize, leaf_counts: &[usize], n_labels: usize) -> ModelDims {
        ModelDims {
            vocab_size,
            d_embed: self.d_embed,
            d_lstm: self.d_lstm,
            d_tree: self.d_tree,
            d_leaf: self.d_leaf,
            n_trees: leaf_counts.len(),
            total_leaves: leaf_counts.iter().sum(),
            n_labels,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            fusion: self.fusion,
            optimizer: self.optimizer,
            adam: AdamHyper {
                lr: self.learning_rate,
                ..AdamHyper::default()
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            seed,
            threshold: self.threshold,
            ks: self.ks.clone(),
        }
    }
}
