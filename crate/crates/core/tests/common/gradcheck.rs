use muqar::model::qar::{Backbone, BackboneConfig, BackboneKind};
use muqar::tensor::{grad_check, grad_check_op, Graph, Mode, OpKind, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Random point for `kind` with a seeded shape. Values stay away from
/// zero so that relu kinks and the L2 norm's origin are never straddled.
pub fn op_point(kind: OpKind, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = match kind {
        OpKind::Conv1d | OpKind::GlobalAvgPool => vec![rng.gen_range(1..3), rng.gen_range(3..6), rng.gen_range(1..4)],
        _ => vec![rng.gen_range(1..4), rng.gen_range(2..5)],
    };
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn op_error(kind: OpKind, seed: u64) -> f64 {
    grad_check_op(kind, &op_point(kind, seed), EPS)
}

fn small(kind: BackboneKind) -> BackboneConfig {
    let (cnn, lstm, mlp) = match kind {
        BackboneKind::Cnn => (vec![3, 2], vec![], Some(2)),
        BackboneKind::Lstm => (vec![], vec![3, 2], None),
        _ => (vec![2], vec![3], Some(2)),
    };
    BackboneConfig {
        kind,
        cnn_widths: cnn,
        lstm_widths: lstm,
        mlp_width: mlp,
        dropout: 0.0,
        kernel: 3,
    }
}

/// Gradient check of a whole backbone, inputs included, at a seeded
/// random parameter point, plus the point's distance to the nearest relu
/// kink. Central differences are only meaningful when that distance
/// exceeds [`EPS`].
pub fn backbone_error(kind: BackboneKind, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, n, t_max, c) = (2, 4, 2, 3);
    let mut store = ParamStore::<f64>::new();
    let backbone = Backbone::new(&mut store, "qar", &small(kind), t_max, c, &mut rng).unwrap();
    let input = |shape: &[usize], rng: &mut ChaCha8Rng| {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    };
    let a = input(&[batch, n, t_max], &mut rng);
    let x = input(&[batch, n, c], &mut rng);
    let a = store.add("input.a", a);
    let x = store.add("input.x", x);
    let build = |g: &mut Graph<f64>| {
        let an = g.param(a);
        let xn = kind.uses_exogenous().then(|| g.param(x));
        Ok(backbone.forward(g, an, xn).expect("backbone forward"))
    };
    let margin = {
        let mut g = Graph::new(&store, Mode::Inference);
        build(&mut g).unwrap();
        g.relu_margin().unwrap_or(f64::INFINITY)
    };
    (grad_check(&mut store, EPS, Mode::Inference, build), margin)
}
