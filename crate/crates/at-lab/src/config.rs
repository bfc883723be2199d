//! Run configuration: a JSON document selecting a dataset, a training
//! setup, and an output directory, with dotted-path `key=value` overrides
//! for scripting experiment matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{gen_blobs, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Which dataset a run trains on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Synthetic Gaussian class clusters.
    Blobs {
        n_per_class: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    },
    /// IDX-format image/label file pairs (the MNIST container format).
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
        /// Optional cap on the number of training samples.
        limit: Option<usize>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Blobs {
            n_per_class: 200,
            dim: 20,
            classes: 5,
            spread: 0.3,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// Materializes the (train, test) split pair.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Blobs {
                n_per_class,
                dim,
                classes,
                spread,
                seed,
            } => Ok((
                gen_blobs(*n_per_class, *dim, *classes, *spread, *seed, "train")?,
                gen_blobs(*n_per_class, *dim, *classes, *spread, *seed, "test")?,
            )),
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
            } => {
                let mut train = load_idx(Path::new(train_images), Path::new(train_labels))?;
                if let Some(n) = limit {
                    train = train.take(*n);
                }
                let test = load_idx(Path::new(test_images), Path::new(test_labels))?;
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }

    pub fn from_value(value: Value) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies one `key=value` override to a JSON document in place. Keys are
/// dotted paths; a bare key that is not a top-level field is treated as a
/// `train.` field, so `seed=7` and `method=pgd_at_mt` work as expected.
/// Values parse as JSON when possible and fall back to strings, so
/// `method=pgd_at_mt` needs no quoting.
pub fn apply_override(value: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override {spec:?} is not of the form key=value"))
    })?;
    if path.is_empty() {
        return Err(Error::InvalidConfig(format!("empty key in override {spec:?}")));
    }
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));

    let mut parts: Vec<&str> = path.split('.').collect();
    let top_level = ["dataset", "train", "out_dir"];
    if !top_level.contains(&parts[0]) {
        parts.insert(0, "train");
    }

    let mut cursor = value;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("override path {path:?} crosses a non-object"))
            })?
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    cursor
        .as_object_mut()
        .ok_or_else(|| Error::InvalidConfig(format!("override path {path:?} crosses a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Loads a run config from a JSON file and applies overrides. Unknown
/// keys anywhere in the document are rejected.
pub fn load_run_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut value: Value = serde_json::from_str(&text)?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    RunConfig::from_value(value)
}
