use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::{CountSource, LambdaSource, ModelKind, ModelSpec};
use crate::corpus::Vocabulary;
use crate::counts::NGramCountStore;
use crate::error::{Error, Result};
use crate::neural::params::{read_u32, take};
use crate::neural::{LambdaNet, NetShape, NetworkConfig, ParamSet};
use crate::scalar::Scalar;
use crate::smoothing::SmoothingSpec;

const MAGIC: &[u8; 8] = b"MODLMNET";
const VERSION: u32 = 1;

/// A count store referenced by a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSource {
    pub path: PathBuf,
    pub order: usize,
    pub vocab_fingerprint: u64,
}

/// Metadata header of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFileInfo {
    pub kind: ModelKind,
    pub order: usize,
    pub smoothing: SmoothingSpec,
    pub network: Option<NetworkConfig>,
    pub lambda_source: LambdaSource,
    pub net_shape: Option<NetShape>,
    pub vocab_path: PathBuf,
    pub vocab_size: usize,
    pub vocab_fingerprint: u64,
    pub counts: Option<StoredSource>,
    pub extra_counts: Vec<StoredSource>,
    pub feature_mean: Vec<f64>,
    pub seed: u64,
}

fn stored(src: &CountSource, what: &str) -> Result<StoredSource> {
    let path = src
        .path
        .clone()
        .ok_or_else(|| Error::InvalidArgument(format!("{what} has no file path to record")))?;
    Ok(StoredSource {
        path,
        order: src.store.order(),
        vocab_fingerprint: src.store.vocab_fingerprint(),
    })
}

/// Writes the model: magic, version, JSON metadata (with the paths of its
/// vocabulary and count stores), then the network parameters.
pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let info = ModelFileInfo {
        kind: model.spec.kind,
        order: model.spec.order,
        smoothing: model.spec.smoothing.clone(),
        network: model.spec.network.clone(),
        lambda_source: model.spec.lambda_source,
        net_shape: model.net.as_ref().map(|n| *n.shape()),
        vocab_path: model.vocab_path.clone().ok_or_else(|| {
            Error::InvalidArgument("model has no vocabulary path to record".into())
        })?,
        vocab_size: model.vocab.len(),
        vocab_fingerprint: model.vocab.fingerprint(),
        counts: model
            .counts
            .as_ref()
            .map(|c| stored(c, "count store"))
            .transpose()?,
        extra_counts: model
            .spec
            .extra_count_sources
            .iter()
            .map(|c| stored(c, "extra count store"))
            .collect::<Result<_>>()?,
        feature_mean: model
            .feature_mean
            .iter()
            .map(|x| x.to_f64_lossy())
            .collect(),
        seed: model.seed,
    };
    let json =
        serde_json::to_vec(&info).map_err(|e| Error::format("model metadata", e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    if let Some(net) = &model.net {
        net.params().write_blobs(&mut out);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the metadata header of a model file.
pub fn read_model_info(path: impl AsRef<Path>) -> Result<(ModelFileInfo, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut input = bytes.as_slice();
    if take::<8>(&mut input)? != *MAGIC {
        return Err(Error::format("model file", "bad magic"));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::format(
            "model file",
            format!("unsupported version {version}"),
        ));
    }
    let len = read_u32(&mut input)? as usize;
    if input.len() < len {
        return Err(Error::format("model file", "truncated metadata"));
    }
    let info: ModelFileInfo = serde_json::from_slice(&input[..len])
        .map_err(|e| Error::format("model metadata", e.to_string()))?;
    Ok((info, input[len..].to_vec()))
}

fn load_source(s: &StoredSource, vocab: &Vocabulary) -> Result<CountSource> {
    let store = NGramCountStore::load(&s.path)?;
    store.check_vocabulary(vocab)?;
    if store.order() != s.order || store.vocab_fingerprint() != s.vocab_fingerprint {
        return Err(Error::VocabularyMismatch(format!(
            "{} no longer matches the model",
            s.path.display()
        )));
    }
    Ok(CountSource {
        store: Arc::new(store),
        path: Some(s.path.clone()),
    })
}

/// Loads a model together with the vocabulary and count stores it names.
pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let (info, blobs) = read_model_info(path)?;
    let vocab = Vocabulary::load(&info.vocab_path)?;
    if vocab.len() != info.vocab_size || vocab.fingerprint() != info.vocab_fingerprint {
        return Err(Error::VocabularyMismatch(format!(
            "{} differs from the vocabulary the model was trained with",
            info.vocab_path.display()
        )));
    }
    let counts = info
        .counts
        .as_ref()
        .map(|s| load_source(s, &vocab))
        .transpose()?;
    let extras = info
        .extra_counts
        .iter()
        .map(|s| load_source(s, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec {
        kind: info.kind,
        order: info.order,
        smoothing: info.smoothing.clone(),
        network: info.network.clone(),
        extra_count_sources: extras,
        lambda_source: info.lambda_source,
    };
    let net = match (&info.network, info.net_shape) {
        (Some(cfg), Some(shape)) => {
            let mut input = blobs.as_slice();
            let params = ParamSet::<T>::read_blobs(&mut input)?;
            if !input.is_empty() {
                return Err(Error::format(
                    "model file",
                    "trailing bytes after parameters",
                ));
            }
            Some(LambdaNet::from_params(cfg.clone(), shape, params)?)
        }
        _ => None,
    };
    let mean = info.feature_mean.iter().map(|&x| T::of(x)).collect();
    let mut model = Model::from_parts(spec, Arc::new(vocab), counts, net, mean)?;
    model.vocab_path = Some(info.vocab_path);
    model.seed = info.seed;
    Ok(model)
}
