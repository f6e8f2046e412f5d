//! Flat, versioned JSON run configuration.

use std::path::Path;

use mmfuse::encoders::backbone::{BackboneConfig, TOY_GEOMETRY};
use mmfuse::encoders::tabular::TabularSchema;
use mmfuse::model::{FusionMode, ModelConfig};
use mmfuse::training::{AugmentConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_VERSION: u64 = 1;

/// Every knob of a run. Missing keys take the defaults below; unknown keys
/// are rejected. `version` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u64,
    pub seed: u64,
    #[serde(with = "mode_serde")]
    pub fusion_mode: FusionMode,

    pub geometry: [usize; 3],
    pub n_majority: usize,
    pub n_minority: usize,
    pub class_signal: f64,

    pub widths: [usize; 3],
    pub reduce_width: usize,
    pub feature_dim: usize,
    pub use_e3d_msca: bool,
    pub reduction: usize,
    pub dropout: f64,
    pub kan_hidden: usize,
    pub kan_degree: usize,
    pub kan_grid: usize,
    pub kan_range: f64,
    pub pyramid_dims: [usize; 3],
    pub token_dim: usize,
    pub heads: usize,

    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub threshold: f64,
    pub oversample: bool,
    pub augment_rotate: bool,
    pub augment_sharpen: bool,
    pub augment_normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let b = &m.backbone;
        let t = TrainConfig::default();
        let s = SynthConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            fusion_mode: m.fusion,
            geometry: TOY_GEOMETRY,
            n_majority: s.n_majority,
            n_minority: s.n_minority,
            class_signal: s.class_signal,
            widths: b.widths,
            reduce_width: b.reduce_width,
            feature_dim: b.feature_dim,
            use_e3d_msca: b.use_e3d_msca,
            reduction: b.reduction,
            dropout: b.dropout,
            kan_hidden: m.kan_hidden,
            kan_degree: m.kan_degree,
            kan_grid: m.kan_grid,
            kan_range: m.kan_range,
            pyramid_dims: m.pyramid_dims,
            token_dim: m.token_dim,
            heads: m.heads,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            threshold: t.threshold,
            oversample: t.oversample,
            augment_rotate: t.augment.rotate,
            augment_sharpen: t.augment.sharpen,
            augment_normalize: t.augment.normalize,
        }
    }
}

mod mode_serde {
    use mmfuse::model::FusionMode;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &FusionMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FusionMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|_| {
            let known: Vec<&str> = FusionMode::ALL.iter().map(|m| m.as_str()).collect();
            D::Error::custom(format!("unknown fusion_mode '{s}', expected one of {known:?}"))
        })
    }
}

fn config_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

impl RunConfig {
    /// Parses a JSON object, requiring `"version": 1`.
    pub fn from_value(v: Value) -> Result<Self, CliError> {
        match v.get("version") {
            Some(Value::Number(n)) if n.as_u64() == Some(CONFIG_VERSION) => {}
            Some(other) => return Err(config_err(format!("field version: unsupported value {other}, expected {CONFIG_VERSION}"))),
            None => return Err(config_err("field version: missing")),
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| config_err(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let v: Value = serde_json::from_str(text).map_err(|e| config_err(format!("config is not valid JSON: {e}")))?;
        Self::from_value(v)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let checks: [(&str, bool, &str); 6] = [
            ("class_signal", self.class_signal.is_finite(), "must be finite"),
            ("dropout", (0.0..1.0).contains(&self.dropout), "must lie in [0, 1)"),
            ("epochs", self.epochs > 0, "must be at least 1"),
            ("kan_range", self.kan_range > 0.0 && self.kan_range.is_finite(), "must be positive"),
            ("n_majority", self.n_majority > 0, "must be at least 1"),
            ("n_minority", self.n_minority > 0, "must be at least 1"),
        ];
        for (field, ok, why) in checks {
            if !ok {
                return Err(config_err(format!("field {field}: {why}")));
            }
        }
        self.model_config().validate().map_err(|e| config_err(format!("model fields: {e}")))?;
        self.train_config().validate().map_err(|e| config_err(format!("training fields: {e}")))?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                geometry: self.geometry,
                widths: self.widths,
                reduce_width: self.reduce_width,
                feature_dim: self.feature_dim,
                use_e3d_msca: self.use_e3d_msca,
                reduction: self.reduction,
                dropout: self.dropout,
            },
            schema: TabularSchema::default(),
            kan_hidden: self.kan_hidden,
            kan_degree: self.kan_degree,
            kan_grid: self.kan_grid,
            kan_range: self.kan_range,
            pyramid_dims: self.pyramid_dims,
            token_dim: self.token_dim,
            heads: self.heads,
            fusion: self.fusion_mode,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed: self.seed,
            threshold: self.threshold,
            oversample: self.oversample,
            augment: AugmentConfig {
                rotate: self.augment_rotate,
                sharpen: self.augment_sharpen,
                normalize: self.augment_normalize,
            },
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_majority: self.n_majority,
            n_minority: self.n_minority,
            geometry: self.geometry,
            class_signal: self.class_signal,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn content_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One ablation cell: a name plus overrides of model or training fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub config: RunConfig,
}

/// `{"version": 1, "base": {..config..}, "cells": [{"name": .., <overrides>}, ..]}`.
/// Cells share the base seed and dataset, so they may not override the
/// seed or any data-generation field.
pub fn load_grid(text: &str) -> Result<Vec<AblationCell>, CliError> {
    const DATA_FIELDS: [&str; 6] = ["seed", "geometry", "n_majority", "n_minority", "class_signal", "version"];
    let v: Value = serde_json::from_str(text).map_err(|e| config_err(format!("grid is not valid JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| config_err("grid must be a JSON object"))?;
    for key in obj.keys() {
        if !["version", "base", "cells"].contains(&key.as_str()) {
            return Err(config_err(format!("grid: unknown field {key}")));
        }
    }
    match obj.get("version").and_then(Value::as_u64) {
        Some(CONFIG_VERSION) => {}
        _ => return Err(config_err(format!("grid field version: missing or not {CONFIG_VERSION}"))),
    }
    let mut base = obj.get("base").cloned().unwrap_or_else(|| Value::Object(Default::default()));
    let base_obj = base.as_object_mut().ok_or_else(|| config_err("grid field base: must be an object"))?;
    base_obj.insert("version".into(), Value::from(CONFIG_VERSION));
    RunConfig::from_value(base.clone())?;
    let cells = obj.get("cells").and_then(Value::as_array).ok_or_else(|| config_err("grid field cells: missing or not a list"))?;
    if cells.is_empty() {
        return Err(config_err("grid field cells: empty"));
    }
    let mut out: Vec<AblationCell> = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let cell = cell.as_object().ok_or_else(|| config_err(format!("grid cell {i}: must be an object")))?;
        let name = match cell.get("name") {
            Some(Value::String(s)) if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_-".contains(c)) => s.clone(),
            _ => return Err(config_err(format!("grid cell {i}: name must be a non-empty [A-Za-z0-9_-] string"))),
        };
        if out.iter().any(|c| c.name == name) {
            return Err(config_err(format!("grid cell {i}: duplicate name {name}")));
        }
        let mut merged = base.clone();
        let m = merged.as_object_mut().expect("object");
        for (k, val) in cell {
            if k == "name" {
                continue;
            }
            if DATA_FIELDS.contains(&k.as_str()) {
                return Err(config_err(format!("grid cell {name}: field {k} is shared by all cells and belongs in base")));
            }
            m.insert(k.clone(), val.clone());
        }
        let config = RunConfig::from_value(merged).map_err(|e| config_err(format!("grid cell {name}: {e}")))?;
        out.push(AblationCell { name, config });
    }
    Ok(out)
}
