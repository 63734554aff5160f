//! Model families built on the mixture core, their training loop, and EM
//! static interpolation.

mod em;
mod io;
mod model;
mod rows;
mod train;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use em::{component_probabilities, em_static_weights, EmResult, StaticInterpolation};
pub use io::{load_model, read_model_info, save_model, ModelFileInfo, StoredSource};
pub use model::{LanguageModel, Model, TokenScore};
pub use rows::{RowLayout, TokenRows};
pub use train::{minibatch_loss, train, LogEntry, TrainingConfig, TrainingLog};

use crate::corpus::Vocabulary;
use crate::counts::NGramCountStore;
use crate::error::{Error, Result};
use crate::neural::{Architecture, InputFeatures, NetworkConfig};
use crate::smoothing::SmoothingSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    HeuristicNGram,
    NeurallyInterpolatedNGram,
    NeuralLM,
    Hybrid,
    StaticInterpolation,
}

impl ModelKind {
    pub fn has_count_columns(self) -> bool {
        matches!(
            self,
            ModelKind::HeuristicNGram | ModelKind::NeurallyInterpolatedNGram | ModelKind::Hybrid
        )
    }

    pub fn has_identity_block(self) -> bool {
        matches!(self, ModelKind::NeuralLM | ModelKind::Hybrid)
    }

    pub fn has_network(self) -> bool {
        matches!(
            self,
            ModelKind::NeurallyInterpolatedNGram | ModelKind::NeuralLM | ModelKind::Hybrid
        )
    }
}

/// Where the mixture weights of an n-gram model come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    #[default]
    Network,
    /// Fallback-product weights from the count heuristics.
    Heuristic,
}

/// An additional count store contributing one column per order.
#[derive(Debug, Clone)]
pub struct CountSource {
    pub store: Arc<NGramCountStore>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub order: usize,
    pub smoothing: SmoothingSpec,
    pub network: Option<NetworkConfig>,
    pub extra_count_sources: Vec<CountSource>,
    pub lambda_source: LambdaSource,
}

impl ModelSpec {
    pub fn heuristic(order: usize, smoothing: SmoothingSpec) -> Self {
        ModelSpec {
            kind: ModelKind::HeuristicNGram,
            order,
            smoothing,
            network: None,
            extra_count_sources: Vec::new(),
            lambda_source: LambdaSource::Heuristic,
        }
    }

    pub fn neurally_interpolated(
        order: usize,
        smoothing: SmoothingSpec,
        network: NetworkConfig,
    ) -> Self {
        ModelSpec {
            kind: ModelKind::NeurallyInterpolatedNGram,
            order,
            smoothing,
            network: Some(network),
            extra_count_sources: Vec::new(),
            lambda_source: LambdaSource::Network,
        }
    }

    pub fn neural_lm(order: usize, network: NetworkConfig) -> Self {
        ModelSpec {
            kind: ModelKind::NeuralLM,
            order,
            smoothing: SmoothingSpec::kn(),
            network: Some(network),
            extra_count_sources: Vec::new(),
            lambda_source: LambdaSource::Network,
        }
    }

    pub fn hybrid(order: usize, smoothing: SmoothingSpec, network: NetworkConfig) -> Self {
        ModelSpec {
            kind: ModelKind::Hybrid,
            order,
            smoothing,
            network: Some(network),
            extra_count_sources: Vec::new(),
            lambda_source: LambdaSource::Network,
        }
    }

    /// Number of count-based columns: one per order per count source.
    pub fn count_columns(&self) -> usize {
        if self.kind.has_count_columns() {
            self.order * (1 + self.extra_count_sources.len())
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidArgument(
                "n-gram order must be at least 1".into(),
            ));
        }
        match (self.kind, &self.network) {
            (ModelKind::HeuristicNGram, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "a heuristic n-gram model has no network".into(),
                ))
            }
            (ModelKind::StaticInterpolation, _) => {
                return Err(Error::InvalidArgument(
                    "static interpolations are built from trained components".into(),
                ))
            }
            (k, None) if k.has_network() => {
                return Err(Error::InvalidArgument(
                    "this model kind needs a network configuration".into(),
                ))
            }
            (_, Some(net)) => net.validate()?,
            _ => {}
        }
        if self.kind == ModelKind::HeuristicNGram && self.lambda_source != LambdaSource::Heuristic {
            return Err(Error::InvalidArgument(
                "a heuristic n-gram model takes heuristic weights".into(),
            ));
        }
        if self.lambda_source == LambdaSource::Heuristic && !self.extra_count_sources.is_empty() {
            return Err(Error::InvalidArgument(
                "heuristic weights cover a single count source".into(),
            ));
        }
        if !self.kind.has_count_columns() && !self.extra_count_sources.is_empty() {
            return Err(Error::InvalidArgument(
                "a neural LM has no count columns".into(),
            ));
        }
        Ok(())
    }

    /// Previous-word embeddings the network reads per position.
    pub fn context_words(&self) -> usize {
        let Some(net) = &self.network else { return 0 };
        match (self.kind, net.architecture) {
            (ModelKind::NeurallyInterpolatedNGram, _) => match net.input_features {
                InputFeatures::C => 0,
                InputFeatures::Cr => 1,
            },
            (_, Architecture::Ff) => self.order.saturating_sub(1).max(1),
            (_, Architecture::Lstm) => 1,
        }
    }
}

/// Adds a count source: `N` more columns and that source's count features.
pub fn attach_count_source(
    spec: &ModelSpec,
    vocab: &Vocabulary,
    source: CountSource,
) -> Result<ModelSpec> {
    source.store.check_vocabulary(vocab)?;
    if source.store.order() != spec.order {
        return Err(Error::InvalidArgument(format!(
            "count source of order {} for an order-{} model",
            source.store.order(),
            spec.order
        )));
    }
    let mut out = spec.clone();
    out.extra_count_sources.push(source);
    out.validate()?;
    Ok(out)
}
