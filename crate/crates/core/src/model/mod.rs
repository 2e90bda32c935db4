//! The forecasting model: fusion encoder and QAR backbone joined by a
//! dense layer and a `k`-wide output.

pub mod batch;
pub mod fusion;
pub mod nn;
pub mod qar;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{encode_visual, Batch};
pub use fusion::{FusedFeature, FusionConfig, FusionMlp, FusionParts, InputDims};
pub use qar::{count_parameters, Backbone, BackboneConfig, BackboneKind};

use crate::error::{Error, Result};
use crate::series::TrainingExample;
use crate::tensor::{Graph, Mode, NodeId, ParamStore};
use crate::Scalar;
use nn::Dense;

/// Active feature families: image-side product features `I`, captions
/// `C`, target series `A`, exogenous series `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationMask {
    pub image: bool,
    pub caption: bool,
    pub target: bool,
    pub exogenous: bool,
}

impl AblationMask {
    pub fn uses_fusion(&self) -> bool {
        self.image || self.caption
    }

    pub fn uses_qar(&self) -> bool {
        self.target || self.exogenous
    }

    /// Fusion parts implied by the mask. `I` brings visual, categorical,
    /// temporal and demographic features; `C` adds captions.
    pub fn fusion_parts(&self) -> FusionParts {
        FusionParts {
            visual: self.image,
            caption: self.caption,
            categorical: self.image,
            temporal: self.image,
            demographic: self.image,
        }
    }
}

impl fmt::Display for AblationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.image, "I"), (self.target, "A"), (self.exogenous, "X"), (self.caption, "C")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, s)| *s)
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

impl FromStr for AblationMask {
    type Err = Error;

    /// Accepts `I,A,X`, `I+A+X` or `[I+A]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = AblationMask {
            image: false,
            caption: false,
            target: false,
            exogenous: false,
        };
        for part in s.trim_matches(|c| c == '[' || c == ']').split([',', '+']) {
            match part.trim().to_ascii_uppercase().as_str() {
                "I" => m.image = true,
                "C" => m.caption = true,
                "A" => m.target = true,
                "X" => m.exogenous = true,
                "" => {}
                other => return Err(Error::invalid(format!("unknown feature family `{other}` (I, C, A, X)"))),
            }
        }
        if !(m.uses_fusion() || m.uses_qar()) {
            return Err(Error::invalid("ablation mask enables no feature family"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Regression,
    /// Softmax over `classes`; the first target value is the class index.
    Classification { classes: usize },
}

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub version: u32,
    pub dims: InputDims,
    pub n: usize,
    pub k: usize,
    pub mask: AblationMask,
    pub fusion: FusionConfig,
    pub backbone: BackboneConfig,
    pub joint_width: usize,
    pub head: Head,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(dims: InputDims, n: usize, k: usize, mask: AblationMask, fusion: FusionConfig, backbone: BackboneConfig) -> Self {
        Self {
            version: MODEL_VERSION,
            dims,
            n,
            k,
            mask,
            fusion,
            backbone,
            joint_width: 256,
            head: Head::Regression,
            seed: 0,
        }
    }

    /// Desk-scale fusion and backbone with a 32-wide joint layer.
    pub fn desk(dims: InputDims, n: usize, k: usize, mask: AblationMask, kind: BackboneKind) -> Self {
        let mut c = Self::new(dims, n, k, mask, FusionConfig::desk(), BackboneConfig::desk(kind));
        c.joint_width = 32;
        c
    }

    pub fn output_width(&self) -> usize {
        match self.head {
            Head::Regression => self.k,
            Head::Classification { classes } => classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "model config version {} unsupported (expected {MODEL_VERSION})",
                self.version
            )));
        }
        if self.n == 0 || self.k == 0 || self.joint_width == 0 {
            return Err(Error::invalid("n, k and the joint width must be positive"));
        }
        if let Head::Classification { classes } = self.head {
            if classes < 2 || self.k != 1 {
                return Err(Error::invalid("classification needs at least 2 classes and k = 1"));
            }
        }
        let m = self.mask;
        if m.uses_qar() {
            self.backbone.validate()?;
            if m.exogenous != self.backbone.kind.uses_exogenous() {
                return Err(Error::invalid(format!(
                    "mask {m} and backbone {} disagree: X is used exactly by convlstm_x",
                    self.backbone.kind
                )));
            }
            if m.exogenous && !m.target {
                return Err(Error::invalid("X requires A"));
            }
        }
        if m.uses_fusion() {
            self.fusion.validate()?;
        }
        Ok(())
    }
}

/// Forecasting model with its own parameter store.
#[derive(Debug, Clone)]
pub struct MuqarModel<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub fusion: Option<FusionMlp>,
    pub backbone: Option<Backbone>,
    pub joint: Dense,
    pub output: Dense,
}

pub type Model64 = MuqarModel<f64>;
pub type Model32 = MuqarModel<f32>;

impl<T: Scalar> MuqarModel<T> {
    /// Parameters are initialized from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let fusion = config
            .mask
            .uses_fusion()
            .then(|| FusionMlp::new(&mut store, "fusion", &config.fusion, config.mask.fusion_parts(), &config.dims, &mut rng))
            .transpose()?;
        let backbone = config
            .mask
            .uses_qar()
            .then(|| Backbone::new(&mut store, "qar", &config.backbone, config.dims.t_max, config.dims.num_attributes, &mut rng))
            .transpose()?;
        let joint_in = fusion.as_ref().map_or(0, FusionMlp::output_width) + backbone.as_ref().map_or(0, Backbone::output_width);
        let joint = Dense::new(&mut store, "joint", joint_in, config.joint_width, &mut rng);
        let output = Dense::new(&mut store, "output", config.joint_width, config.output_width(), &mut rng);
        Ok(Self {
            config,
            store,
            fusion,
            backbone,
            joint,
            output,
        })
    }

    /// Same architecture under a different mask, freshly initialized.
    pub fn ablate(&self, mask: AblationMask) -> Result<Self> {
        let mut config = self.config.clone();
        config.mask = mask;
        Self::new(config)
    }

    /// Width of `[F_F; F_Q]`.
    pub fn joint_input_width(&self) -> usize {
        self.joint.inputs
    }

    pub fn batch(&self, examples: &[&TrainingExample]) -> Result<Batch<T>> {
        Batch::from_examples(examples, &self.config.dims, self.config.n, self.config.k)
    }

    /// Output logits or forecasts, `[B, width]`, before any softmax.
    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch<T>) -> Result<NodeId> {
        let mut parts = Vec::with_capacity(2);
        if let Some(f) = &self.fusion {
            parts.push(f.forward(g, batch)?.output);
        }
        if let Some(b) = &self.backbone {
            let a = g.input(batch.a.clone());
            let x = self.config.mask.exogenous.then(|| g.input(batch.x.clone()));
            parts.push(b.forward(g, a, x)?);
        }
        let joined = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        let h = self.joint.forward(g, joined)?;
        let h = g.relu(h)?;
        Ok(self.output.forward(g, h)?)
    }

    /// Training loss summed over the batch and divided by `denom`.
    pub fn loss(&self, g: &mut Graph<T>, batch: &Batch<T>, denom: T) -> Result<NodeId> {
        let out = self.forward(g, batch)?;
        Ok(match self.config.head {
            Head::Regression => g.mse_loss(out, &batch.target, denom)?,
            Head::Classification { classes } => {
                let labels = class_labels(&batch.target, classes)?;
                g.cross_entropy(out, &labels, denom)?
            }
        })
    }

    /// Inference-mode outputs per example: linear forecasts for
    /// regression, class probabilities for classification.
    pub fn predict_batch(&self, batch: &Batch<T>) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::new(&self.store, Mode::Inference);
        let mut out = self.forward(&mut g, batch)?;
        if let Head::Classification { .. } = self.config.head {
            out = g.softmax(out)?;
        }
        let width = self.config.output_width();
        Ok(g.value(out)?.data().chunks(width).map(<[T]>::to_vec).collect())
    }

    pub fn predict(&self, examples: &[&TrainingExample]) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(256) {
            out.extend(self.predict_batch(&self.batch(chunk)?)?);
        }
        Ok(out)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Writes `model.json`, `params.bin` and `params.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&self.config)?)?;
        self.store.dump(&dir.join(PARAMS_BIN), &dir.join(PARAMS_JSON))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(MODEL_FILE))?)?;
        let version = raw.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(MODEL_VERSION as u64) {
            return Err(Error::invalid(format!(
                "checkpoint version {version:?} unsupported (expected {MODEL_VERSION})"
            )));
        }
        let config: ModelConfig = serde_json::from_value(raw)?;
        let mut model = Self::new(config)?;
        model.store.load(&dir.join(PARAMS_BIN), &dir.join(PARAMS_JSON))?;
        Ok(model)
    }
}

pub const MODEL_FILE: &str = "model.json";
pub const PARAMS_BIN: &str = "params.bin";
pub const PARAMS_JSON: &str = "params.json";

/// Class index carried in the first target value of each row.
pub fn class_labels<T: Scalar>(target: &[T], classes: usize) -> Result<Vec<usize>> {
    target
        .iter()
        .map(|v| {
            let f = v.as_f64();
            if f >= 0.0 && f.fract() == 0.0 && (f as usize) < classes {
                Ok(f as usize)
            } else {
                Err(Error::invalid(format!("class label {f} outside 0..{classes}")))
            }
        })
        .collect()
}
