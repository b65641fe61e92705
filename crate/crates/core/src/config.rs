//! Run configuration: defaults, ablation presets, and loading from a keyed
//! text file of flat dotted keys (`focal.gamma = 2.19`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::imbalance::{AugmentConfig, SmoteConfig};
use crate::model::ModelConfig;
use crate::optim::FocalParams;
use crate::{CLASS_NAMES, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    BaselineCe,
    FocalOnly,
    AugmentOnly,
    SmoteOnly,
    Full,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::BaselineCe,
        Preset::FocalOnly,
        Preset::AugmentOnly,
        Preset::SmoteOnly,
        Preset::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BaselineCe => "baseline_ce",
            Preset::FocalOnly => "focal_only",
            Preset::AugmentOnly => "augment_only",
            Preset::SmoteOnly => "smote_only",
            Preset::Full => "full",
        }
    }

    /// `(focal, augmentation, smote)` switches.
    pub fn switches(self) -> (bool, bool, bool) {
        match self {
            Preset::BaselineCe => (false, false, false),
            Preset::FocalOnly => (true, false, false),
            Preset::AugmentOnly => (false, true, false),
            Preset::SmoteOnly => (false, false, true),
            Preset::Full => (true, true, true),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Optional per-class values keyed by lower-case class name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTable {
    pub healthy: Option<f64>,
    pub copd: Option<f64>,
    pub bronchiectasis: Option<f64>,
    pub bronchiolitis: Option<f64>,
    pub pneumonia: Option<f64>,
    pub urti: Option<f64>,
}

impl ClassTable {
    pub fn to_vec(&self) -> Vec<Option<f64>> {
        vec![
            self.healthy,
            self.copd,
            self.bronchiectasis,
            self.bronchiolitis,
            self.pneumonia,
            self.urti,
        ]
    }

    pub fn from_slice(v: &[Option<f64>]) -> Self {
        let at = |i: usize| v.get(i).copied().flatten();
        Self {
            healthy: at(0),
            copd: at(1),
            bronchiectasis: at(2),
            bronchiolitis: at(3),
            pneumonia: at(4),
            urti: at(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub kan_hidden: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub spline_min: f64,
    pub spline_max: f64,
    pub base_branch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalSection {
    pub enabled: bool,
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub min_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Section {
    pub enabled: bool,
    pub epochs: usize,
    pub majority_cap: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    /// Re-augment and re-extract every epoch; otherwise one augmented
    /// variant per training file is drawn once per fold.
    pub per_epoch: bool,
    pub base_probability: f64,
    pub noise_level: f64,
    pub max_shift_fraction: f64,
    pub pitch_range_semitones: f64,
    pub transform_probability: f64,
    pub probability: ClassTable,
    pub pitch_range: ClassTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoteSection {
    pub enabled: bool,
    pub k: usize,
    pub target_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    pub spline_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: ModelSection,
    pub focal: FocalSection,
    pub train: TrainSection,
    pub stage1: Stage1Section,
    pub cv: CvSection,
    pub augment: AugmentSection,
    pub smote: SmoteSection,
    pub features: FeatureConfig,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        let focal = FocalParams::default();
        Self {
            preset: Preset::Full,
            seed: 42,
            model: ModelSection {
                lstm_hidden: 64,
                dropout: 0.3,
                kan_hidden: 32,
                grid_size: 3,
                spline_order: 3,
                spline_min: -1.0,
                spline_max: 1.0,
                base_branch: false,
            },
            focal: FocalSection {
                enabled: true,
                alpha: focal.alpha,
                gamma: focal.gamma,
            },
            train: TrainSection {
                lr: 3e-3,
                weight_decay: 1e-3,
                batch_size: 64,
                max_epochs: 30,
                early_stop_patience: 7,
                scheduler_factor: 0.5,
                scheduler_patience: 4,
                min_lr: 1e-6,
            },
            stage1: Stage1Section {
                enabled: true,
                epochs: 7,
                majority_cap: 50,
                lr: 3e-3,
            },
            cv: CvSection { folds: 5 },
            augment: AugmentSection {
                enabled: true,
                per_epoch: true,
                base_probability: aug.base_probability,
                noise_level: aug.noise_level,
                max_shift_fraction: aug.max_shift_fraction,
                pitch_range_semitones: aug.pitch_range_semitones,
                transform_probability: aug.transform_probability,
                probability: ClassTable::from_slice(&aug.class_probability),
                pitch_range: ClassTable::from_slice(&aug.class_pitch_range),
            },
            smote: SmoteSection {
                enabled: true,
                k: 5,
                target_ratio: 0.5,
            },
            features: FeatureConfig::default(),
            export: ExportSection { spline_samples: 101 },
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn toml_flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, toml::Value)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                toml_flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    for part in key.split('.') {
        node = node.get_mut(part).expect("key checked against the flattened template");
    }
    *node = value;
}

/// Converts a parsed value to the JSON type of the slot it replaces.
fn coerce(key: &str, slot: &Value, v: &toml::Value) -> Result<Value> {
    let err = || Error::Config(format!("bad value `{v}` for `{key}`"));
    Ok(match (slot, v) {
        (Value::Bool(_), toml::Value::Boolean(b)) => Value::Bool(*b),
        (Value::String(_), toml::Value::String(s)) => Value::String(s.clone()),
        (Value::Number(n), toml::Value::Integer(i)) if n.is_u64() => {
            Value::from(u64::try_from(*i).map_err(|_| err())?)
        }
        (Value::Number(n), toml::Value::Integer(i)) if n.is_f64() => Value::from(*i as f64),
        (Value::Number(n), toml::Value::Float(f)) if n.is_f64() => Value::from(*f),
        (Value::Null, toml::Value::Integer(i)) => Value::from(*i as f64),
        (Value::Null, toml::Value::Float(f)) => Value::from(*f),
        _ => return Err(err()),
    })
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let mut c = Self::default();
        c.apply_preset(preset);
        c
    }

    /// Sets the three technique switches (and records the preset name).
    pub fn apply_preset(&mut self, preset: Preset) {
        let (focal, augment, smote) = preset.switches();
        self.preset = preset;
        self.focal.enabled = focal;
        self.augment.enabled = augment;
        self.smote.enabled = smote;
    }

    /// Every setting as `dotted.key -> value`.
    pub fn flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    /// Applies `key = value` assignments on top of `self`; unknown keys and
    /// mistyped values are rejected. A `preset` key re-applies its switches
    /// after all other assignments.
    pub fn merge_text(&self, text: &str) -> Result<Self> {
        let parsed: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut pairs = Vec::new();
        toml_flatten("", &toml::Value::Table(parsed), &mut pairs);
        let template = self.flat();
        let mut root = serde_json::to_value(self).expect("config serializes");
        let mut preset = None;
        for (key, v) in pairs {
            let slot = template
                .get(&key)
                .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
            if key == "preset" {
                let name = v.as_str().ok_or_else(|| Error::Config("preset must be a string".into()))?;
                preset = Some(name.parse::<Preset>()?);
                continue;
            }
            set_path(&mut root, &key, coerce(&key, slot, &v)?);
        }
        let mut cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = preset {
            cfg.apply_preset(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::default().merge_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let m = &self.model;
        if m.lstm_hidden == 0 || m.kan_hidden == 0 || m.grid_size == 0 {
            return bad("model widths and grid size must be positive");
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad("model.dropout must lie in [0, 1)");
        }
        if !(m.spline_min < m.spline_max) {
            return bad("model.spline_min must be below model.spline_max");
        }
        self.focal_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.train;
        if !(t.lr > 0.0 && t.weight_decay >= 0.0 && t.min_lr >= 0.0 && t.min_lr <= t.lr) {
            return bad("learning rates must be positive with 0 <= min_lr <= lr and weight decay >= 0");
        }
        if t.batch_size == 0 || t.max_epochs == 0 || t.early_stop_patience == 0 {
            return bad("batch size, epochs and patience must be positive");
        }
        if !(t.scheduler_factor > 0.0 && t.scheduler_factor < 1.0) {
            return bad("train.scheduler_factor must lie in (0, 1)");
        }
        if self.stage1.majority_cap == 0 || !(self.stage1.lr > 0.0) {
            return bad("stage1.majority_cap and stage1.lr must be positive");
        }
        if self.cv.folds < 2 {
            return bad("cv.folds must be >= 2");
        }
        if self.export.spline_samples < 2 {
            return bad("export.spline_samples must be >= 2");
        }
        self.augment_config().validate()?;
        self.smote_config().validate()?;
        Ok(())
    }

    /// Focal parameters in effect; disabled focal loss is plain cross-entropy.
    pub fn focal_params(&self) -> FocalParams {
        if self.focal.enabled {
            FocalParams {
                alpha: self.focal.alpha,
                gamma: self.focal.gamma,
                alpha_per_class: None,
            }
        } else {
            FocalParams::cross_entropy()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        let a = &self.augment;
        AugmentConfig {
            base_probability: a.base_probability,
            class_probability: a.probability.to_vec(),
            noise_level: a.noise_level,
            max_shift_fraction: a.max_shift_fraction,
            pitch_range_semitones: a.pitch_range_semitones,
            class_pitch_range: a.pitch_range.to_vec(),
            transform_probability: a.transform_probability,
        }
    }

    pub fn smote_config(&self) -> SmoteConfig {
        SmoteConfig {
            k: self.smote.k,
            target_ratio: self.smote.target_ratio,
            target_counts: None,
        }
    }

    pub fn model_config(&self, d_feat: usize) -> ModelConfig {
        ModelConfig {
            d_feat,
            lstm_hidden: self.model.lstm_hidden,
            dropout: self.model.dropout,
            kan_hidden: self.model.kan_hidden,
            grid_size: self.model.grid_size,
            spline_order: self.model.spline_order,
            num_classes: NUM_CLASSES,
            spline_domain: (self.model.spline_min, self.model.spline_max),
            base_branch: self.model.base_branch,
        }
    }
}

/// Class names in the lower-case form used by configuration keys.
pub fn class_keys() -> Vec<String> {
    CLASS_NAMES.iter().map(|c| c.to_ascii_lowercase()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.focal_params().gamma, 2.19);
        assert_eq!(c.augment_config().probability(5), 0.6);
        assert_eq!(c.train.batch_size, 64);
    }

    #[test]
    fn flat_keys_parse() {
        let c = RunConfig::default()
            .merge_text("focal.gamma = 2.0\ntrain.max_epochs = 10\naugment.probability.bronchiolitis = 0.3\n")
            .unwrap();
        assert_eq!(c.focal.gamma, 2.0);
        assert_eq!(c.train.max_epochs, 10);
        assert_eq!(c.augment.probability.bronchiolitis, Some(0.3));
        // Integers are accepted for real-valued keys.
        assert_eq!(RunConfig::default().merge_text("train.lr = 1").unwrap().train.lr, 1.0);
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        let d = RunConfig::default();
        assert!(matches!(d.merge_text("focal.gama = 2.0"), Err(Error::Config(_))));
        assert!(matches!(d.merge_text("train.batch_size = -3"), Err(Error::Config(_))));
        assert!(matches!(d.merge_text("focal.enabled = 1"), Err(Error::Config(_))));
        assert!(matches!(d.merge_text("model.dropout = 1.5"), Err(Error::Config(_))));
        assert!(matches!(d.merge_text("preset = \"nope\""), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_is_cross_entropy_without_techniques() {
        let c = RunConfig::for_preset(Preset::BaselineCe);
        assert_eq!(c.focal_params(), FocalParams::cross_entropy());
        assert!(!c.augment.enabled && !c.smote.enabled);
        let f = RunConfig::for_preset(Preset::Full);
        assert!(f.focal.enabled && f.augment.enabled && f.smote.enabled);
    }

    #[test]
    fn presets_differ_from_full_only_in_switches() {
        let full = RunConfig::for_preset(Preset::Full).flat();
        let switches = ["preset", "focal.enabled", "augment.enabled", "smote.enabled"];
        for p in Preset::ALL {
            let other = RunConfig::for_preset(p).flat();
            assert_eq!(full.keys().collect::<Vec<_>>(), other.keys().collect::<Vec<_>>());
            for (k, v) in &full {
                if !switches.contains(&k.as_str()) {
                    assert_eq!(v, &other[k], "{p}: {k}");
                }
            }
        }
    }

    #[test]
    fn preset_key_applies_switches() {
        let c = RunConfig::default().merge_text("preset = \"smote_only\"").unwrap();
        assert_eq!(c.preset, Preset::SmoteOnly);
        assert!(!c.focal.enabled && c.smote.enabled);
        assert_eq!("focal_only".parse::<Preset>().unwrap(), Preset::FocalOnly);
    }
}
