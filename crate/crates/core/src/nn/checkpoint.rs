use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Dense, Mlp, Tensor};
use crate::{Error, Result};

const FORMAT: &str = "mlp-v1";

/// On-disk form of an [`Mlp`]: layer sizes, flat row-major weights, and the
/// seed used at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&Mlp> for MlpCheckpoint {
    fn from(net: &Mlp) -> Self {
        Self {
            format: FORMAT.to_string(),
            seed: net.seed(),
            sizes: net.sizes().to_vec(),
            hidden: net.hidden_activation(),
            output: net.output_activation(),
            weights: net.layers().iter().map(|l| l.weight.values().to_vec()).collect(),
            biases: net.layers().iter().map(|l| l.bias.values().to_vec()).collect(),
        }
    }
}

impl MlpCheckpoint {
    pub fn into_mlp(self) -> Result<Mlp> {
        if self.format != FORMAT {
            return Err(Error::InvalidArgument(format!(
                "checkpoint format `{}` is not `{FORMAT}`",
                self.format
            )));
        }
        if self.sizes.len() < 2 || self.weights.len() + 1 != self.sizes.len() || self.biases.len() + 1 != self.sizes.len() {
            return Err(Error::InvalidArgument("checkpoint layer count does not match sizes".into()));
        }
        let layers = self
            .sizes
            .windows(2)
            .zip(self.weights)
            .zip(self.biases)
            .map(|((w, weight), bias)| {
                Ok(Dense {
                    weight: Tensor::matrix(w[1], w[0], weight)?,
                    bias: Tensor::new(vec![w[1]], bias)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, self.hidden, self.output, self.seed)
    }
}

impl Mlp {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&MlpCheckpoint::from(self))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Mlp> {
        let text = fs::read_to_string(path)?;
        let ckpt: MlpCheckpoint = serde_json::from_str(&text)?;
        ckpt.into_mlp()
    }
}
