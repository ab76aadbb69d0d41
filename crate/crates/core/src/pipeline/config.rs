//! Experiment configuration: a TOML file, optionally layered over a named preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::image::CropMode;
use crate::data::{AugmentPlan, CellRecord, DatasetTag};
use crate::error::{Error, Result};
use crate::eval::TestPlan;
use crate::nn::NetworkSpec;
use crate::optim::OptimConfig;

pub const PRESETS: [&str; 3] = ["herlev", "hemlbc", "desk"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Five conv layers and a 1024-256-K head on 227-pixel input.
    ConvnetT,
    /// Three small conv layers; input size follows `crop_size`.
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Msra,
    Gaussian,
    /// Copy conv layers from `init.source`, or from a seeded stub when no source is given.
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub method: InitMethod,
    #[serde(default = "default_std")]
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

fn default_std() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Select the best epoch on the held-out cross-validation fold.
    HeldOutFold,
    /// Hold out part of the training cells instead, so the test fold is never seen.
    InnerHoldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub mode: ValidationMode,
    /// Share of training cells held out in `inner_holdout` mode.
    pub inner_fraction: f64,
    /// Views rendered per validation cell; each is scored on its centre crop.
    pub views: AugmentPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCrops {
    Ten,
    Center,
}

impl From<TestCrops> for CropMode {
    fn from(c: TestCrops) -> Self {
        match c {
            TestCrops::Ten => CropMode::TenCrop,
            TestCrops::Center => CropMode::Center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub views: AugmentPlan,
    pub crops: TestCrops,
}

/// Training augmentation, chosen by binary class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlans {
    pub normal: AugmentPlan,
    pub abnormal: AugmentPlan,
}

impl TrainPlans {
    pub fn for_record(&self, r: &CellRecord) -> AugmentPlan {
        if r.is_abnormal() {
            self.abnormal
        } else {
            self.normal
        }
    }
}

/// Synthetic dataset parameters used by `synth-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub image_size: usize,
    pub classes: crate::data::synth::SynthClasses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Relative paths are resolved against the config file's directory.
    pub manifest: PathBuf,
    pub dataset: DatasetTag,
    pub num_classes: usize,
    pub seed: u64,
    pub folds: usize,
    /// Runs are always reproducible; kept so configs can state it explicitly.
    pub deterministic: bool,
    /// Write every training patch to disk during `prepare` and read them back while training.
    pub materialize_cache: bool,
    pub crop_size: usize,
    pub architecture: Architecture,
    pub init: InitConfig,
    pub train: TrainPlans,
    pub test: TestConfig,
    pub validation: ValidationConfig,
    pub optim: OptimConfig,
    pub synth: SynthSection,
}

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let herlev_abnormal = AugmentPlan::new(10, 36.0, 10, 10);
        let common = |dataset, normal: AugmentPlan| PipelineConfig {
            manifest: "manifest.tsv".into(),
            dataset,
            num_classes: 2,
            seed: 1,
            folds: 5,
            deterministic: true,
            materialize_cache: false,
            crop_size: 227,
            architecture: Architecture::ConvnetT,
            init: InitConfig {
                method: InitMethod::Transfer,
                std: 0.01,
                source: None,
            },
            train: TrainPlans {
                normal,
                abnormal: herlev_abnormal,
            },
            test: TestConfig {
                views: herlev_abnormal,
                crops: TestCrops::Ten,
            },
            validation: ValidationConfig {
                mode: ValidationMode::HeldOutFold,
                inner_fraction: 0.1,
                views: AugmentPlan::new(1, 0.0, 1, 0),
            },
            optim: OptimConfig::default(),
            synth: SynthSection {
                image_size: 96,
                classes: crate::data::synth::SynthClasses::Binary,
            },
        };
        match name {
            "herlev" => Ok(common(
                DatasetTag::Herlev,
                AugmentPlan::new(20, 18.0, 14, 10),
            )),
            "hemlbc" => Ok(common(DatasetTag::Hemlbc, herlev_abnormal)),
            "desk" => {
                let sized = |p: AugmentPlan| p.with_sizes(48, 36);
                // offsets cover the 5-pixel centre perturbation used in evaluation
                let train = sized(AugmentPlan::new(4, 90.0, 4, 6));
                let mut cfg = common(DatasetTag::Other, train);
                cfg.manifest = "data/manifest.tsv".into();
                cfg.train.abnormal = train;
                cfg.crop_size = 32;
                cfg.architecture = Architecture::Tiny;
                cfg.init.method = InitMethod::Gaussian;
                cfg.test.views = sized(AugmentPlan::new(4, 90.0, 3, 4));
                cfg.validation.views = sized(AugmentPlan::new(4, 90.0, 1, 0));
                cfg.optim = OptimConfig {
                    base_lr_transferred: 0.0002,
                    base_lr_new: 0.002,
                    batch_size: 32,
                    epochs: 10,
                    ..OptimConfig::default()
                };
                Ok(cfg)
            }
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {PRESETS:?})"
            ))),
        }
    }

    /// Parse TOML. A top-level `preset = "name"` key starts from that preset
    /// and the remaining keys override it table by table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: Self = match table.remove("preset") {
            Some(toml::Value::String(name)) => {
                let base = toml::Table::try_from(Self::preset(&name)?)
                    .map_err(|e| Error::Config(e.to_string()))?;
                let mut merged = toml::Value::Table(base);
                merge(&mut merged, toml::Value::Table(table));
                merged
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
            }
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
            None => toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.manifest.is_relative() {
            self.manifest = base.join(&self.manifest);
        }
        if let Some(src) = self.init.source.as_mut() {
            if src.is_relative() {
                *src = base.join(&*src);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 && self.num_classes != 7 {
            return Err(Error::Config(format!(
                "num_classes must be 2 or 7, got {}",
                self.num_classes
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config("at least 2 folds are required".into()));
        }
        for (what, plan) in [
            ("train.normal", &self.train.normal),
            ("train.abnormal", &self.train.abnormal),
            ("test.views", &self.test.views),
            ("validation.views", &self.validation.views),
        ] {
            plan.validate()
                .map_err(|e| Error::Config(format!("{what}: {e}")))?;
            if plan.resize_to < self.crop_size {
                return Err(Error::Config(format!(
                    "{what}: resize_to {} is smaller than crop_size {}",
                    plan.resize_to, self.crop_size
                )));
            }
            if plan.resize_to != self.train.normal.resize_to {
                return Err(Error::Config(format!(
                    "{what}: every plan must share one resize_to"
                )));
            }
        }
        if !(self.validation.inner_fraction > 0.0 && self.validation.inner_fraction < 1.0) {
            return Err(Error::Config(
                "validation.inner_fraction must be in (0, 1)".into(),
            ));
        }
        self.optim.validate()?;
        self.network_spec()?.validate()?;
        Ok(())
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let spec = match self.architecture {
            Architecture::ConvnetT => {
                if self.crop_size != 227 {
                    return Err(Error::Config(format!(
                        "convnet_t needs crop_size 227, got {}",
                        self.crop_size
                    )));
                }
                NetworkSpec::convnet_t(self.num_classes)
            }
            Architecture::Tiny => NetworkSpec::tiny(self.crop_size, self.num_classes),
        };
        Ok(spec)
    }

    pub fn test_plan(&self) -> TestPlan {
        TestPlan {
            views: self.test.views,
            crops: self.test.crops.into(),
            crop_size: self.crop_size,
        }
    }

    pub fn validation_plan(&self) -> TestPlan {
        TestPlan {
            views: self.validation.views,
            crops: CropMode::Center,
            crop_size: self.crop_size,
        }
    }

    /// Side of a training patch after resizing; also the mean image size.
    pub fn resized_patch_size(&self) -> usize {
        self.train.normal.resize_to
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
