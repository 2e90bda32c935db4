//! Layer building blocks over the tensor graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor, TensorError};
use crate::Scalar;

/// Embedding tables start uniform in this range.
pub const EMBEDDING_INIT: f64 = 0.05;

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = store.add_glorot(format!("{name}.w"), &[inputs, outputs], inputs, outputs, rng);
        let b = store.add_zeros(format!("{name}.b"), &[outputs]);
        Self { w, b, inputs, outputs }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId, TensorError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    pub fn num_parameters(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }
}

/// Embedding table with uniform init; row `pad`, if any, starts at zero.
pub fn add_embedding<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    rows: usize,
    dim: usize,
    pad: Option<usize>,
    rng: &mut R,
) -> ParamId {
    let mut data: Vec<T> = (0..rows * dim)
        .map(|_| T::of(rng.gen_range(-EMBEDDING_INIT..=EMBEDDING_INIT)))
        .collect();
    if let Some(p) = pad {
        data[p * dim..(p + 1) * dim].iter_mut().for_each(|v| *v = T::zero());
    }
    store.add(name, Tensor::new(vec![rows, dim], data).expect("positive table shape"))
}

/// Looks up `indices` (row-major `[batch, per_row]`) and flattens each
/// row's embeddings into one `[batch, per_row * dim]` block.
pub fn embed_flat<T: Scalar>(
    g: &mut Graph<T>,
    table: ParamId,
    indices: &[usize],
    batch: usize,
    pad: Option<usize>,
) -> Result<NodeId, TensorError> {
    let t = g.param(table);
    let dim = g.value(t)?.shape()[1];
    let e = g.embedding(t, indices, pad)?;
    g.reshape(e, &[batch, indices.len() / batch * dim])
}
