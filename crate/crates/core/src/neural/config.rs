use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Ff,
    Lstm,
}

/// Which inputs a mixture-weight network sees besides count features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFeatures {
    /// Count features only.
    C,
    /// Count features plus the previous word's embedding.
    Cr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub embedding_size: usize,
    pub input_features: InputFeatures,
    pub dropout_rate: f64,
    pub block_dropout_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            architecture: Architecture::Ff,
            hidden_size: 200,
            embedding_size: 200,
            input_features: InputFeatures::C,
            dropout_rate: 0.5,
            block_dropout_rate: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.embedding_size == 0 {
            return Err(Error::InvalidArgument(
                "network sizes must be positive".into(),
            ));
        }
        for (name, r) in [
            ("dropout", self.dropout_rate),
            ("block dropout", self.block_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!(
                    "{name} rate {r} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}
