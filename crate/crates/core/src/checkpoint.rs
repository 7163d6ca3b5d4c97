//! Versioned JSON checkpoints: the model config, the training config that
//! produced the weights, and every weight tensor by name. Floats round-trip
//! bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::training::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "groupvae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub tensors: Vec<Tensor>,
}

/// Reconstructs the config a set of weights was initialized from.
pub fn model_config(params: &ModelParams) -> ModelConfig {
    let enc = &params.encoder.layers;
    ModelConfig {
        obs_dim: params.obs_dim(),
        hidden: enc[..enc.len() - 1].iter().map(|l| l.w.ncols()).collect(),
        partition: params.partition.clone(),
        likelihood: params.likelihood,
        activation: params.encoder.activation,
        temperature: params.temperature,
    }
}

impl Checkpoint {
    pub fn new(params: &ModelParams, train: Option<TrainConfig>, step: u64) -> Self {
        let tensors = params
            .named_shapes()
            .into_iter()
            .zip(params.slices())
            .map(|((name, shape), data)| Tensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model_config(params),
            train,
            step,
            tensors,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::param(format!(
                "unsupported checkpoint format {} v{}",
                self.format, self.version
            )));
        }
        let mut params = init_params(&self.model, 0)?;
        let expected = params.named_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::Dimension {
                context: "checkpoint tensor count",
                expected: expected.len(),
                actual: self.tensors.len(),
            });
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::param(format!(
                    "checkpoint tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        for (dst, t) in params.slices_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(&t.data);
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LatentPartition};

    #[test]
    fn round_trip_is_bitwise() {
        let mut cfg = ModelConfig::new(7, LatentPartition::equal_split(&["a", "b"], 4).unwrap());
        cfg.hidden = vec![5, 3];
        cfg.activation = Activation::Elu;
        let mut p = init_params(&cfg, 11).unwrap();
        let mut flat = p.flat();
        flat[0] = 0.1 + 0.2;
        flat[1] = f64::MIN_POSITIVE;
        flat[2] = -1.0 / 3.0;
        p.set_flat(&flat).unwrap();
        let ck = Checkpoint::new(&p, Some(TrainConfig::default()), 42);
        let back: Checkpoint = serde_json::from_str(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let q = back.params().unwrap();
        assert_eq!(model_config(&q), cfg);
        for (a, b) in p.flat().iter().zip(q.flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mismatched_tensors_rejected() {
        let cfg = ModelConfig::new(4, LatentPartition::equal_split(&["a", "b"], 2).unwrap());
        let p = init_params(&cfg, 0).unwrap();
        let mut ck = Checkpoint::new(&p, None, 0);
        ck.tensors[0].shape = vec![1, 1];
        assert!(ck.params().is_err());
        let mut ck = Checkpoint::new(&p, None, 0);
        ck.version = 99;
        assert!(ck.params().is_err());
    }
}
