//! JSON run manifests, model settings and grid specifications.

use std::fs;
use std::path::{Path, PathBuf};

use muqar::model::fusion::{FusionConfig, InputDims};
use muqar::model::qar::{BackboneConfig, BackboneKind};
use muqar::model::{AblationMask, Head, ModelConfig};
use muqar::train::TrainConfig;
use muqar::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} directory {} does not exist", path.display())))
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} file {} does not exist", path.display())))
    }
}

/// Architecture choices that do not depend on the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub fusion: FusionConfig,
    /// Desk-scale preset of the run's backbone kind when absent.
    pub backbone: Option<BackboneConfig>,
    pub joint_width: usize,
    pub head: Head,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::desk(),
            backbone: None,
            joint_width: 32,
            head: Head::Regression,
        }
    }
}

/// Everything a train, evaluate, predict or grid run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    /// Output directory of `muqar build`.
    pub data: Option<PathBuf>,
    /// JSON file holding [`ModelSettings`].
    pub model_config: Option<PathBuf>,
    pub mask: String,
    /// Defaults to `convlstm_x` when the mask has `X`, else `convlstm`.
    pub backbone: Option<BackboneKind>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            data: None,
            model_config: None,
            mask: "I+A+X".into(),
            backbone: None,
            seed: 0,
            out: None,
            train: TrainConfig::desk(),
        }
    }
}

impl RunManifest {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }

    pub fn mask(&self) -> Result<AblationMask> {
        self.mask.parse()
    }

    pub fn backbone_kind(&self) -> Result<BackboneKind> {
        Ok(self.backbone.unwrap_or(if self.mask()?.exogenous {
            BackboneKind::ConvlstmX
        } else {
            BackboneKind::Convlstm
        }))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        let d = self.data.as_deref().ok_or_else(|| Error::invalid("no data directory given (--data)"))?;
        require_dir(d, "data")?;
        Ok(d)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        let o = self.out.as_deref().ok_or_else(|| Error::invalid("no output directory given (--out)"))?;
        fs::create_dir_all(o)?;
        Ok(o)
    }

    pub fn settings(&self) -> Result<ModelSettings> {
        match &self.model_config {
            Some(p) => {
                require_file(p, "model config")?;
                read_json(p)
            }
            None => Ok(ModelSettings::default()),
        }
    }

    /// Model config for a dataset with `dims`, `n` and `k`. An explicit
    /// backbone config takes the run's kind but keeps its widths.
    pub fn model_config(&self, dims: InputDims, n: usize, k: usize) -> Result<ModelConfig> {
        let settings = self.settings()?;
        let kind = self.backbone_kind()?;
        let backbone = match settings.backbone {
            Some(b) => BackboneConfig { kind, ..b },
            None => BackboneConfig::desk(kind),
        };
        let mut config = ModelConfig::new(dims, n, k, self.mask()?, settings.fusion, backbone);
        config.joint_width = settings.joint_width;
        config.head = settings.head;
        config.seed = self.seed;
        config.validate()?;
        Ok(config)
    }
}

/// Backbone kinds times stack depths; depth `L` uses the first `L` widths
/// for every stack of the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub backbones: Vec<BackboneKind>,
    pub layers: Vec<usize>,
    /// Narrowing widths, e.g. `[512, 256, 128]`.
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: String,
    pub backbone: BackboneConfig,
}

impl GridSpec {
    pub fn candidates(&self, base: Option<&BackboneConfig>) -> Result<Vec<Candidate>> {
        if self.backbones.is_empty() || self.layers.is_empty() {
            return Err(Error::invalid("grid enumerates no candidate"));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l == 0 || l > self.widths.len()) {
            return Err(Error::invalid(format!(
                "grid depth {l} needs between 1 and {} widths",
                self.widths.len()
            )));
        }
        let mut out = Vec::new();
        for &kind in &self.backbones {
            for &layers in &self.layers {
                let stack = self.widths[..layers].to_vec();
                let mut b = base.map_or_else(|| BackboneConfig::desk(kind), |b| BackboneConfig { kind, ..b.clone() });
                match kind {
                    BackboneKind::Cnn => b.cnn_widths = stack.clone(),
                    BackboneKind::Lstm => b.lstm_widths = stack.clone(),
                    BackboneKind::Convlstm | BackboneKind::ConvlstmX => {
                        b.cnn_widths = stack.clone();
                        b.lstm_widths = stack.clone();
                    }
                }
                let widths: Vec<String> = stack.iter().map(usize::to_string).collect();
                out.push(Candidate {
                    label: format!("{kind}-{}", widths.join("-")),
                    backbone: b,
                });
            }
        }
        Ok(out)
    }
}
