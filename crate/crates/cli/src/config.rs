use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{BuildVocabArgs, CountArgs, EvalArgs, InterpArgs, TrainArgs};
use crate::UsageError;

/// Per-command tables of a run configuration file. Keys are the long flag
/// names of the command.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "build-vocab")]
    pub build_vocab: Option<BuildVocabArgs>,
    pub count: Option<CountArgs>,
    pub train: Option<TrainArgs>,
    pub eval: Option<EvalArgs>,
    #[serde(rename = "interp-em")]
    pub interp_em: Option<InterpArgs>,
}

pub fn load(path: &Path) -> anyhow::Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

/// Values given on the command line replace those from the file.
pub fn overlay<T: Serialize + DeserializeOwned>(file: Option<T>, flags: T) -> anyhow::Result<T> {
    let Some(file) = file else { return Ok(flags) };
    let mut base = toml::Table::try_from(&file)?;
    base.extend(toml::Table::try_from(&flags)?);
    base.try_into()
        .map_err(|e: toml::de::Error| UsageError(e.to_string()).into())
}

/// The resolved configuration as a config-file table.
pub fn render<T: Serialize>(command: &str, args: &T) -> String {
    let mut table = toml::Table::new();
    table.insert(
        command.to_string(),
        toml::Value::Table(toml::Table::try_from(args).unwrap_or_default()),
    );
    format!(
        "# resolved configuration\n{}",
        toml::to_string(&table).unwrap_or_default()
    )
}
