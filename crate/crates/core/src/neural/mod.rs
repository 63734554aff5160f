//! Mixture-weight networks: a small reverse-mode engine, the feed-forward
//! and LSTM architectures, dropout, block dropout and Adam.

pub mod adam;
pub mod config;
pub mod dropout;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod net;
pub mod params;
pub mod tensor;

pub use adam::Adam;
pub use config::{Architecture, InputFeatures, NetworkConfig};
pub use dropout::{block_dropout_mask, block_dropped, standard_dropout};
pub use features::{context_features, feature_mean, normalize_features};
pub use gradcheck::gradient_check;
pub use graph::{masked_softmax, Graph, MixtureOutput, MixtureTargets, NodeId};
pub use net::{output_lambda, LambdaNet, NetInput, NetShape};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;
