use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::FusionMode;
use super::params::{ModelDims, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters plus everything needed to check that evaluation inputs
/// were prepared the same way as training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub fusion: FusionMode,
    pub epoch: usize,
    pub labels: Vec<String>,
    pub vocab_hash: String,
    pub schema_hash: Option<String>,
    pub ensemble_hash: Option<String>,
    pub dims: ModelDims,
    pub arrays: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        fusion: FusionMode,
        epoch: usize,
        labels: Vec<String>,
        vocab_hash: String,
        schema_hash: Option<String>,
        ensemble_hash: Option<String>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            fusion,
            epoch,
            labels,
            vocab_hash,
            schema_hash,
            ensemble_hash,
            dims: params.dims,
            arrays: params
                .named()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let mut params = ModelParams::zeros(self.dims)?;
        if self.arrays.len() != ModelParams::NAMES.len() {
            return Err(Error::Invalid(format!(
                "checkpoint holds {} arrays, expected {}",
                self.arrays.len(),
                ModelParams::NAMES.len()
            )));
        }
        for (name, slot) in ModelParams::NAMES.into_iter().zip(params.tensors_mut()) {
            let t = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint is missing array {name}")))?;
            if t.shape != slot.shape || t.data.len() != slot.numel() {
                return Err(Error::shape("checkpoint array", &t.shape, &slot.shape));
            }
            *slot = t.clone();
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                expected: CHECKPOINT_VERSION,
                found: ckpt.version,
            });
        }
        ckpt.params()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        let dims = ModelDims {
            vocab_size: 7,
            d_embed: 3,
            d_lstm: 2,
            d_tree: 3,
            d_leaf: 2,
            n_trees: 2,
            total_leaves: 5,
            n_labels: 2,
        };
        ModelParams::init(dims, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn exact_round_trip() {
        let p = params();
        let c = Checkpoint::new(&p, FusionMode::Maxpool, 3, vec!["a".into(), "b".into()], "v".into(), None, Some("e".into()));
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params().unwrap(), p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().params().unwrap(), p);
    }

    #[test]
    fn rejects_bad_files() {
        let p = params();
        let mut c = Checkpoint::new(&p, FusionMode::Attention, 1, vec![], "v".into(), None, None);
        c.version = 99;
        assert!(matches!(Checkpoint::from_json(&c.to_json()), Err(Error::Version { .. })));
        c.version = CHECKPOINT_VERSION;
        c.arrays.get_mut("w_out").unwrap().shape = vec![1, 1];
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
        c.arrays.remove("w_out");
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
    }
}
