use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named collection of learnable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
    index: HashMap<String, ParamId>,
}

/// One entry of the parameter dump manifest. `offset` is in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format: String,
    pub entries: Vec<ParamEntry>,
}

pub const PARAM_FORMAT: &str = "f64le-v1";

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor. Names must be unique within the store.
    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        tensor.set_requires_grad(true);
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add_uniform(name, shape, limit, rng)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        limit: f64,
        rng: &mut R,
    ) -> ParamId {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::of(rng.gen_range(-limit..=limit)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("valid shape"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (t, n))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn accumulate(&mut self, grads: &super::Gradients<T>) {
        for (id, grad) in grads.iter() {
            self.tensors[id.0].accumulate_grad(grad);
        }
    }

    /// Copies every same-named, same-shaped tensor from `other`.
    pub fn copy_matching(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for (i, name) in self.names.iter().enumerate() {
            if let Some(src) = other.id(name).map(|id| other.get(id)) {
                if src.shape() == self.tensors[i].shape() {
                    self.tensors[i].data_mut().copy_from_slice(src.data());
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn manifest(&self) -> ParamManifest {
        let mut offset = 0;
        let entries = self
            .iter()
            .map(|(_, name, t)| {
                let entry = ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel() * 8;
                entry
            })
            .collect();
        ParamManifest {
            format: PARAM_FORMAT.to_string(),
            entries,
        }
    }

    /// Writes the flat little-endian f64 stream to `bin` and its manifest to `json`.
    pub fn dump(&self, bin: &Path, json: &Path) -> std::io::Result<()> {
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        for t in &self.tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        fs::File::create(bin)?.write_all(&bytes)?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(json, manifest)
    }

    /// Overwrites this store's values from a dump. Every parameter must be
    /// present with an identical shape.
    pub fn load(&mut self, bin: &Path, json: &Path) -> Result<(), LoadError> {
        let manifest: ParamManifest = serde_json::from_str(&fs::read_to_string(json)?)?;
        if manifest.format != PARAM_FORMAT {
            return Err(LoadError::Format(manifest.format));
        }
        let mut bytes = Vec::new();
        fs::File::open(bin)?.read_to_end(&mut bytes)?;
        let mut seen = 0;
        for entry in &manifest.entries {
            let id = self
                .id(&entry.name)
                .ok_or_else(|| LoadError::Mismatch(format!("unexpected parameter {}", entry.name)))?;
            let t = &mut self.tensors[id.0];
            if t.shape() != entry.shape.as_slice() {
                return Err(LoadError::Mismatch(format!(
                    "{}: stored shape {:?}, model expects {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            let end = entry.offset + t.numel() * 8;
            let chunk = bytes
                .get(entry.offset..end)
                .ok_or_else(|| LoadError::Mismatch(format!("{}: truncated stream", entry.name)))?;
            for (dst, raw) in t.data_mut().iter_mut().zip(chunk.chunks_exact(8)) {
                *dst = T::of(f64::from_le_bytes(raw.try_into().expect("8 bytes")));
            }
            seen += 1;
        }
        if seen != self.len() {
            return Err(LoadError::Mismatch(format!(
                "dump holds {seen} parameters, model has {}",
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unsupported parameter format `{0}`")]
    Format(String),
    #[error("parameter dump mismatch: {0}")]
    Mismatch(String),
}

impl From<LoadError> for TensorError {
    fn from(e: LoadError) -> Self {
        TensorError::UnknownParam(e.to_string())
    }
}
