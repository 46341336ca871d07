//! Versioned model persistence.
//!
//! Models are stored as self-describing JSON with a format version and a
//! model-type tag. Floats are encoded as shortest-round-trip decimal text,
//! so a save/load cycle reproduces predictions bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boosting::BoostedEnsemble;
use crate::ensembles::{FittedModel, StackedModel};
use crate::error::{Error, Result};
use crate::learners::{Forest, GaussianNb};

/// Bump when the serialized layout changes incompatibly.
pub const FORMAT_VERSION: u32 = 1;

/// Any persistable model, tagged by type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "snake_case")]
pub enum Model {
    Boost(BoostedEnsemble),
    Forest(Forest),
    GaussianNb(GaussianNb),
    Stacked(StackedModel),
}

impl Model {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Model::Boost(_) => "boost",
            Model::Forest(_) => "forest",
            Model::GaussianNb(_) => "gaussian_nb",
            Model::Stacked(_) => "stacked",
        }
    }

    pub fn into_boost(self) -> Result<BoostedEnsemble> {
        match self {
            Model::Boost(m) => Ok(m),
            other => Err(type_error("boost", other.type_tag())),
        }
    }

    pub fn into_forest(self) -> Result<Forest> {
        match self {
            Model::Forest(m) => Ok(m),
            other => Err(type_error("forest", other.type_tag())),
        }
    }

    pub fn into_stacked(self) -> Result<StackedModel> {
        match self {
            Model::Stacked(m) => Ok(m),
            other => Err(type_error("stacked", other.type_tag())),
        }
    }
}

impl From<FittedModel> for Model {
    fn from(m: FittedModel) -> Self {
        match m {
            FittedModel::Boost(b) => Model::Boost(b),
            FittedModel::Forest(f) => Model::Forest(f),
            FittedModel::Nb { model, .. } => Model::GaussianNb(model),
        }
    }
}

fn type_error(expected: &str, found: &str) -> Error {
    Error::format(format!(
        "model type mismatch: expected {expected}, file contains {found}"
    ))
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    #[serde(flatten)]
    model: Model,
}

/// Serialize a model to a new file at `path`.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let envelope = Envelope {
        format_version: FORMAT_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| Error::format(format!("model serialization failed: {e}")))?;
    crate::data::write_text(path, &text)
}

/// Load any model, checking the format version. A truncated or mangled
/// file yields a clean error and no partial model.
pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    // version is checked before the full decode so the error names versions
    // even when the payload layout changed
    let probe: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("unreadable model file {path:?}: {e}")))?;
    let version = probe
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::format(format!("model file {path:?} has no format_version")))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::format(format!(
            "model format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        )));
    }
    let envelope: Envelope = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("model decode failed for {path:?}: {e}")))?;
    Ok(envelope.model)
}
