//! JSON pipeline configuration.
//!
//! ```json
//! {
//!   "classes": [
//!     {"name": "ground", "resolution": "low"},
//!     {"name": "wall", "resolution": "low"},
//!     {"name": "door", "resolution": "high"}
//!   ],
//!   "merge": [{"from": "door", "into": "wall"}],
//!   "voxel_size": 0.03,
//!   "k": 14,
//!   "classifier": {"learning_rate": 0.5, "epochs": 40, "seed": 42},
//!   "folds": {"floor0.ply": 0, "floor1.ply": 1}
//! }
//! ```
//!
//! Only `classes` is required.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::TrainParams;
use crate::cloud::{build_merged_schema, ClassDef, ClassSchema, MergeMap, MergedSchema};
use crate::error::{Error, Result};

/// Voxel edge length used when a config does not set one, in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.03;
/// Neighborhood size used when a config does not set one.
pub const DEFAULT_K: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeEntry {
    pub from: String,
    pub into: String,
}

/// The JSON document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub classes: Vec<ClassDef>,
    #[serde(default)]
    pub merge: Vec<MergeEntry>,
    #[serde(default = "default_voxel")]
    pub voxel_size: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub classifier: TrainParams,
    #[serde(default)]
    pub folds: BTreeMap<String, usize>,
}

fn default_voxel() -> f64 {
    DEFAULT_VOXEL_SIZE
}

fn default_k() -> usize {
    DEFAULT_K
}

/// Validated configuration with class names resolved to ids.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub schema: ClassSchema,
    pub merge: MergeMap,
    pub merged: MergedSchema,
    pub voxel_size: f64,
    pub k: usize,
    pub train: TrainParams,
    pub folds: BTreeMap<String, usize>,
}

impl PipelineConfig {
    pub fn from_document(doc: ConfigDocument) -> Result<Self> {
        let schema = ClassSchema::new(doc.classes.clone())
            .map_err(|e| Error::InvalidConfig(format!("classes: {e}")))?;
        let mut entries = Vec::with_capacity(doc.merge.len());
        for m in &doc.merge {
            let resolve = |name: &str| {
                schema
                    .id_of(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("merge: unknown class {name:?}")))
            };
            entries.push((resolve(&m.from)?, resolve(&m.into)?));
        }
        let merge = MergeMap::new(entries);
        let merged = build_merged_schema(&schema, &merge)
            .map_err(|e| Error::InvalidConfig(format!("merge: {e}")))?;
        if !(doc.voxel_size > 0.0 && doc.voxel_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "voxel_size must be positive, got {}",
                doc.voxel_size
            )));
        }
        if doc.k < 3 {
            return Err(Error::InvalidConfig(format!(
                "k must be at least 3, got {}",
                doc.k
            )));
        }
        doc.classifier
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("classifier: {e}")))?;
        if !doc.folds.is_empty() {
            let max = *doc.folds.values().max().unwrap();
            for f in 0..=max {
                if !doc.folds.values().any(|&v| v == f) {
                    return Err(Error::InvalidConfig(format!(
                        "folds: ids must be contiguous from 0, fold {f} is empty"
                    )));
                }
            }
        }
        Ok(PipelineConfig {
            schema,
            merge,
            merged,
            voxel_size: doc.voxel_size,
            k: doc.k,
            train: doc.classifier,
            folds: doc.folds,
        })
    }

    pub fn to_document(&self) -> ConfigDocument {
        ConfigDocument {
            classes: self.schema.classes().to_vec(),
            merge: self
                .merge
                .entries()
                .iter()
                .map(|&(from, into)| MergeEntry {
                    from: self.schema.name(from).unwrap_or_default().to_string(),
                    into: self.schema.name(into).unwrap_or_default().to_string(),
                })
                .collect(),
            voxel_size: self.voxel_size,
            k: self.k,
            classifier: self.train.clone(),
            folds: self.folds.clone(),
        }
    }

    pub fn fold_count(&self) -> usize {
        self.folds.values().max().map_or(0, |m| m + 1)
    }
}

pub fn read_config(json: &str) -> Result<PipelineConfig> {
    let doc: ConfigDocument =
        serde_json::from_str(json).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    PipelineConfig::from_document(doc)
}

pub fn write_config(config: &PipelineConfig) -> String {
    serde_json::to_string_pretty(&config.to_document()).expect("config serializes")
}
