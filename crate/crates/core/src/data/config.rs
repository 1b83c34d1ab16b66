//! Run configuration (TOML).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::data::MissingValues;
use crate::error::{Error, Result};
use crate::relation::TemporalRelationConfig;

/// Relation class count and piece ratio per benchmark dataset.
pub const PRESETS: [(&str, usize, f64); 6] = [
    ("CricketX", 3, 0.2),
    ("UWaveGestureLibraryAll", 4, 0.2),
    ("DodgerLoopDay", 5, 0.35),
    ("InsectWingbeatSound", 6, 0.4),
    ("MFPT", 4, 0.2),
    ("XJTU", 4, 0.2),
];

/// `(C, piece_ratio)` for a known dataset name (case-insensitive; `UGLA`,
/// `DLD` and `IWS` abbreviations accepted).
pub fn dataset_preset(name: &str) -> Option<(usize, f64)> {
    let key = match name.to_ascii_lowercase().as_str() {
        "ugla" => "uwavegesturelibraryall".to_string(),
        "dld" => "dodgerloopday".to_string(),
        "iws" => "insectwingbeatsound".to_string(),
        other => other.to_string(),
    };
    PRESETS
        .iter()
        .find(|(n, _, _)| n.to_ascii_lowercase() == key)
        .map(|&(_, c, r)| (c, r))
}

/// Which rows pretraining sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PretrainOn {
    /// The training part of each evaluation split.
    #[default]
    Train,
    /// Every row of the dataset, labels ignored.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_pretrain: f64,
    pub lr_linear: f64,
    /// Augmented views per sample.
    #[serde(rename = "K", alias = "views")]
    pub views: usize,
    /// Temporal relation classes.
    #[serde(rename = "C", alias = "classes")]
    pub classes: usize,
    pub piece_ratio: f64,
    pub seed: u64,
    pub eval_epochs: usize,
    pub policy: AugmentationPolicy,
    /// Linear-classifier runs per data split.
    pub trials: usize,
    /// Random data splits.
    pub splits: usize,
    pub pieces_per_sample: usize,
    pub stratified_pieces: bool,
    pub pretrain_on: PretrainOn,
    pub znormalize: bool,
    pub keep_original_split: bool,
    pub missing_values: MissingValues,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 128,
            lr_pretrain: 0.01,
            lr_linear: 0.5,
            views: 16,
            classes: 3,
            piece_ratio: 0.2,
            seed: 0,
            eval_epochs: 400,
            policy: AugmentationPolicy::default(),
            trials: 10,
            splits: 5,
            pieces_per_sample: 1,
            stratified_pieces: false,
            pretrain_on: PretrainOn::Train,
            znormalize: true,
            keep_original_split: false,
            missing_values: MissingValues::Interpolate,
            jobs: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the dataset's `(C, piece_ratio)` preset applied.
    pub fn for_dataset(name: &str) -> Self {
        let mut cfg = Self::default();
        if let Some((c, r)) = dataset_preset(name) {
            cfg.classes = c;
            cfg.piece_ratio = r;
        }
        cfg
    }

    pub fn relation(&self) -> TemporalRelationConfig {
        TemporalRelationConfig {
            class_count: self.classes,
            piece_ratio: self.piece_ratio,
            stratified: self.stratified_pieces,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("K", self.views),
            ("eval_epochs", self.eval_epochs),
            ("trials", self.trials),
            ("splits", self.splits),
            ("pieces_per_sample", self.pieces_per_sample),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{key}` must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "`batch_size` must be at least 2 to form negative pairs".into(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("`C` must be at least 2, got {}", self.classes)));
        }
        for (key, v) in [("lr_pretrain", self.lr_pretrain), ("lr_linear", self.lr_linear)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("`{key}` must be a positive number, got {v}")));
            }
        }
        if !(self.piece_ratio > 0.0 && self.piece_ratio < 1.0) {
            return Err(Error::Config(format!(
                "`piece_ratio` must lie in (0, 1), got {}",
                self.piece_ratio
            )));
        }
        self.policy
            .validate()
            .map_err(|e| Error::Config(format!("`policy`: {e}")))
    }

    /// Parses TOML text; keys left out keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(text, &Self::default())
    }

    /// Parses TOML text; keys left out keep their value in `base`.
    pub fn from_toml_over(text: &str, base: &Self) -> Result<Self> {
        // `preset` picks (C, piece_ratio); explicit keys override it
        let mut table: toml::Table = toml::from_str(text).map_err(config_error)?;
        let base = match table.remove("preset") {
            None => base.clone(),
            Some(toml::Value::String(name)) => {
                let (classes, piece_ratio) =
                    dataset_preset(&name).ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
                Self {
                    classes,
                    piece_ratio,
                    ..base.clone()
                }
            }
            Some(other) => {
                return Err(Error::Config(format!("`preset` must be a string, got {other}")));
            }
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        let explicit_c = ["C", "classes"].iter().any(|k| table.contains_key(*k));
        let explicit_k = ["K", "views"].iter().any(|k| table.contains_key(*k));
        if explicit_c {
            merged.remove("C");
        }
        if explicit_k {
            merged.remove("K");
        }
        for (k, v) in table {
            merged.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().trim().to_string())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
