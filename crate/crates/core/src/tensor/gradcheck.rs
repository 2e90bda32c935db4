use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Mode, NodeId, ParamStore, Tensor, TensorError};

/// Operation kinds covered by [`grad_check_op`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    MatMul,
    Conv1d,
    Embedding,
    Concat,
    Add,
    Sub,
    Multiply,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Dropout,
    Mean,
    Sum,
    L2Normalize,
    GlobalAvgPool,
    Slice,
    Reshape,
    MseLoss,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::MatMul,
        OpKind::Conv1d,
        OpKind::Embedding,
        OpKind::Concat,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Multiply,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Softmax,
        OpKind::Dropout,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::L2Normalize,
        OpKind::GlobalAvgPool,
        OpKind::Slice,
        OpKind::Reshape,
        OpKind::MseLoss,
        OpKind::CrossEntropy,
    ];
}

/// Gradients below this magnitude are compared absolutely: central
/// differences cannot resolve them to relative precision.
pub const GRAD_FLOOR: f64 = 1e-6;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let err = (analytic - numeric).abs() / numeric.abs().max(analytic.abs()).max(GRAD_FLOOR);
    if err.is_nan() {
        f64::INFINITY
    } else {
        err
    }
}

/// Compares analytic gradients against central differences for every
/// scalar in `store`. The graph output is reduced to a scalar through a
/// fixed random weighting so that every output element matters.
///
/// Returns `max |analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`;
/// NaN on either side counts as an infinite error.
pub fn grad_check<F>(store: &mut ParamStore<f64>, eps: f64, mode: Mode, build: F) -> f64
where
    F: Fn(&mut Graph<f64>) -> Result<NodeId, TensorError>,
{
    let eval = |store: &ParamStore<f64>| -> Result<(f64, Option<super::Gradients<f64>>), TensorError> {
        let mut g = Graph::new(store, mode);
        let out = build(&mut g)?;
        let shape = g.value(out)?.shape().to_vec();
        let numel: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ numel as u64);
        let weights: Vec<f64> = (0..numel)
            .map(|_| {
                let m = rng.gen_range(0.5..1.5);
                if rng.gen::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let w = g.input(Tensor::new(shape, weights)?);
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss)?.data()[0];
        Ok((value, Some(g.backward(loss)?)))
    };

    let grads = match eval(store) {
        Ok((_, Some(grads))) => grads,
        _ => return f64::INFINITY,
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic: Vec<f64> = grads
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
        for (i, a) in analytic.iter().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store).map(|r| r.0);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store).map(|r| r.0);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = match (plus, minus) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * eps),
                _ => f64::NAN,
            };
            worst = worst.max(relative_error(*a, numeric));
        }
    }
    worst
}

fn as_2d(point: &Tensor<f64>) -> Tensor<f64> {
    match point.shape() {
        [_, _] => point.clone(),
        _ => point.clone().reshape(vec![1, point.numel()]).expect("numel > 0"),
    }
}

fn as_3d(point: &Tensor<f64>) -> Tensor<f64> {
    match point.shape() {
        [_, _, _] => point.clone(),
        _ => point.clone().reshape(vec![1, point.numel(), 1]).expect("numel > 0"),
    }
}

fn random_like(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let numel = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("valid shape")
}

/// Gradient check of a single operation at `point`.
///
/// `point` is the primary operand; any further operands (the right-hand
/// matrix of a matmul, conv weights, ...) are derived deterministically
/// from the point's size and checked as well.
pub fn grad_check_op(kind: OpKind, point: &Tensor<f64>, eps: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED ^ point.numel() as u64);
    let mut store = ParamStore::<f64>::new();
    let mode = if kind == OpKind::Dropout {
        Mode::Train { seed: 99 }
    } else {
        Mode::Inference
    };
    let flat = as_2d(point);
    let width = flat.shape()[1];
    match kind {
        OpKind::MatMul => {
            let a = store.add("a", flat.clone());
            let b = store.add("b", random_like(&[width, 3], &mut rng));
            grad_check(&mut store, eps, mode, |g| {
                let (an, bn) = (g.param(a), g.param(b));
                g.matmul(an, bn)
            })
        }
        OpKind::Conv1d => {
            let x3 = as_3d(point);
            let cin = x3.shape()[2];
            let x = store.add("x", x3);
            let w = store.add("w", random_like(&[3, cin, 2], &mut rng));
            let b = store.add("b", random_like(&[2], &mut rng));
            grad_check(&mut store, eps, mode, |g| {
                let (xn, wn, bn) = (g.param(x), g.param(w), g.param(b));
                g.conv1d(xn, wn, bn)
            })
        }
        OpKind::Embedding => {
            let rows = flat.shape()[0];
            let table = store.add("table", flat.clone());
            let indices = [0, rows - 1, rows / 2, 0];
            grad_check(&mut store, eps, mode, |g| {
                let tn = g.param(table);
                g.embedding(tn, &indices, None)
            })
        }
        OpKind::Concat => {
            let a = store.add("a", flat.clone());
            let b = store.add("b", random_like(&[flat.shape()[0], 2], &mut rng));
            grad_check(&mut store, eps, mode, |g| {
                let (an, bn) = (g.param(a), g.param(b));
                g.concat(&[an, bn, an], 1)
            })
        }
        OpKind::Add => {
            let a = store.add("a", flat.clone());
            let b = store.add("b", random_like(flat.shape(), &mut rng));
            let bias = store.add("bias", random_like(&[width], &mut rng));
            grad_check(&mut store, eps, mode, |g| {
                let (an, bn, cn) = (g.param(a), g.param(b), g.param(bias));
                let s = g.add(an, bn)?;
                g.add(s, cn)
            })
        }
        OpKind::Sub | OpKind::Multiply => {
            let a = store.add("a", flat.clone());
            let b = store.add("b", random_like(flat.shape(), &mut rng));
            grad_check(&mut store, eps, mode, |g| {
                let (an, bn) = (g.param(a), g.param(b));
                if kind == OpKind::Sub {
                    g.sub(an, bn)
                } else {
                    g.mul(an, bn)
                }
            })
        }
        OpKind::MseLoss => {
            let a = store.add("a", flat.clone());
            let target: Vec<f64> = (0..flat.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            grad_check(&mut store, eps, mode, |g| {
                let an = g.param(a);
                g.mse_loss(an, &target, 3.0)
            })
        }
        OpKind::CrossEntropy => {
            let rows = flat.shape()[0];
            let labels: Vec<usize> = (0..rows).map(|r| (r * 7 + 1) % width).collect();
            let a = store.add("a", flat.clone());
            grad_check(&mut store, eps, mode, |g| {
                let an = g.param(a);
                g.cross_entropy(an, &labels, 2.0)
            })
        }
        OpKind::GlobalAvgPool => {
            let x = store.add("x", as_3d(point));
            grad_check(&mut store, eps, mode, |g| {
                let xn = g.param(x);
                g.global_avg_pool(xn)
            })
        }
        _ => {
            let x = store.add("x", flat.clone());
            grad_check(&mut store, eps, mode, |g| {
                let xn = g.param(x);
                match kind {
                    OpKind::Scale => g.scale(xn, -1.7),
                    OpKind::Relu => g.relu(xn),
                    OpKind::Sigmoid => g.sigmoid(xn),
                    OpKind::Tanh => g.tanh(xn),
                    OpKind::Softmax => g.softmax(xn),
                    OpKind::Dropout => g.dropout(xn, 0.3),
                    OpKind::Mean => g.mean(xn),
                    OpKind::Sum => g.sum(xn),
                    OpKind::L2Normalize => g.l2_normalize(xn),
                    OpKind::Slice => {
                        let start = usize::from(width > 1);
                        g.slice(xn, 1, start, width - start)
                    }
                    OpKind::Reshape => g.reshape(xn, &[width, flat.shape()[0]]),
                    _ => unreachable!("binary ops handled above"),
                }
            })
        }
    }
}
