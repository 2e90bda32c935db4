//! Quasi-autoregressive encoders over the target matrix `A` and, for the
//! dual-tower kind, the exogenous matrix `X`.
//!
//! Each tower is a stack of same-padded temporal convolutions followed by
//! a stack of LSTM layers and an optional relu dense head. `cnn` pools the
//! conv stack over time instead of running an LSTM; `lstm` has no convs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::Dense;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Cnn,
    Lstm,
    Convlstm,
    ConvlstmX,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [BackboneKind::Cnn, BackboneKind::Lstm, BackboneKind::Convlstm, BackboneKind::ConvlstmX];

    pub fn uses_exogenous(self) -> bool {
        self == BackboneKind::ConvlstmX
    }

    fn has_convs(self) -> bool {
        self != BackboneKind::Lstm
    }

    fn has_lstm(self) -> bool {
        self != BackboneKind::Cnn
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::Cnn => "cnn",
            BackboneKind::Lstm => "lstm",
            BackboneKind::Convlstm => "convlstm",
            BackboneKind::ConvlstmX => "convlstm_x",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "cnn" => Ok(BackboneKind::Cnn),
            "lstm" => Ok(BackboneKind::Lstm),
            "convlstm" => Ok(BackboneKind::Convlstm),
            "convlstm_x" | "convlstmx" => Ok(BackboneKind::ConvlstmX),
            _ => Err(Error::invalid(format!("unknown backbone `{s}` (cnn, lstm, convlstm, convlstm_x)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    #[serde(default)]
    pub cnn_widths: Vec<usize>,
    #[serde(default)]
    pub lstm_widths: Vec<usize>,
    #[serde(default)]
    pub mlp_width: Option<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_kernel() -> usize {
    3
}

impl BackboneConfig {
    /// Layer widths of the best Mallzee configuration for each kind.
    pub fn full(kind: BackboneKind) -> Self {
        let (cnn, lstm, mlp) = match kind {
            BackboneKind::Cnn => (vec![512, 256, 128], vec![], Some(128)),
            BackboneKind::Lstm => (vec![], vec![512], None),
            BackboneKind::Convlstm | BackboneKind::ConvlstmX => (vec![512, 256, 128], vec![512, 256], Some(128)),
        };
        Self {
            kind,
            cnn_widths: cnn,
            lstm_widths: lstm,
            mlp_width: mlp,
            dropout: 0.1,
            kernel: 3,
        }
    }

    /// Narrow variant of [`BackboneConfig::full`] that trains in seconds
    /// on one CPU core.
    pub fn desk(kind: BackboneKind) -> Self {
        let (cnn, lstm, mlp) = match kind {
            BackboneKind::Cnn => (vec![16, 16], vec![], Some(16)),
            BackboneKind::Lstm => (vec![], vec![16], None),
            BackboneKind::Convlstm | BackboneKind::ConvlstmX => (vec![16], vec![16], Some(16)),
        };
        Self {
            kind,
            cnn_widths: cnn,
            lstm_widths: lstm,
            mlp_width: mlp,
            dropout: 0.2,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kind;
        if k.has_convs() && self.cnn_widths.is_empty() {
            return Err(Error::invalid(format!("{k} backbone needs cnn widths")));
        }
        if k.has_lstm() && self.lstm_widths.is_empty() {
            return Err(Error::invalid(format!("{k} backbone needs lstm widths")));
        }
        if !k.has_convs() && !self.cnn_widths.is_empty() {
            return Err(Error::invalid(format!("{k} backbone takes no cnn widths")));
        }
        if !k.has_lstm() && !self.lstm_widths.is_empty() {
            return Err(Error::invalid(format!("{k} backbone takes no lstm widths")));
        }
        if self.cnn_widths.iter().chain(&self.lstm_widths).chain(&self.mlp_width).any(|&w| w == 0) {
            return Err(Error::invalid("backbone widths must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("conv kernel {} must be odd", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("backbone dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn tower_width(&self) -> usize {
        self.mlp_width
            .or_else(|| self.lstm_widths.last().copied())
            .or_else(|| self.cnn_widths.last().copied())
            .expect("validated")
    }

    /// Width `q` of the representation.
    pub fn output_width(&self) -> usize {
        self.tower_width() * if self.kind.uses_exogenous() { 2 } else { 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

/// LSTM layer, gate order `i, f, g, o`, single bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        Self {
            w: store.add_uniform(format!("{name}.w"), &[inputs, 4 * hidden], limit, rng),
            u: store.add_uniform(format!("{name}.u"), &[hidden, 4 * hidden], limit, rng),
            b: store.add_uniform(format!("{name}.b"), &[4 * hidden], limit, rng),
            hidden,
        }
    }

    pub fn num_parameters(inputs: usize, hidden: usize) -> usize {
        4 * hidden * (inputs + hidden) + 4 * hidden
    }

    /// Runs over `steps` (each `[B, inputs]`) and returns every hidden state.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, steps: &[NodeId]) -> Result<Vec<NodeId>> {
        let batch = g.value(steps[0])?.shape()[0];
        let h0 = g.input(Tensor::zeros(&[batch, self.hidden]));
        let (w, u, b) = (g.param(self.w), g.param(self.u), g.param(self.b));
        let (mut h, mut c) = (h0, h0);
        let mut out = Vec::with_capacity(steps.len());
        for (t, &x) in steps.iter().enumerate() {
            let xw = g.matmul(x, w)?;
            let z = if t == 0 {
                xw
            } else {
                let hu = g.matmul(h, u)?;
                g.add(xw, hu)?
            };
            let z = g.add(z, b)?;
            let hd = self.hidden;
            let zi = g.slice(z, 1, 0, hd)?;
            let zf = g.slice(z, 1, hd, hd)?;
            let zg = g.slice(z, 1, 2 * hd, hd)?;
            let zo = g.slice(z, 1, 3 * hd, hd)?;
            let (i, gg, o) = (g.sigmoid(zi)?, g.tanh(zg)?, g.sigmoid(zo)?);
            let ig = g.mul(i, gg)?;
            c = if t == 0 {
                ig
            } else {
                let f = g.sigmoid(zf)?;
                let fc = g.mul(f, c)?;
                g.add(fc, ig)?
            };
            let tc = g.tanh(c)?;
            h = g.mul(o, tc)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub convs: Vec<Conv>,
    pub lstms: Vec<Lstm>,
    pub head: Option<Dense>,
}

impl Tower {
    fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, config: &BackboneConfig, channels: usize, rng: &mut R) -> Self {
        let k = config.kernel;
        let mut width = channels;
        let mut convs = Vec::new();
        for (i, &out) in config.cnn_widths.iter().enumerate() {
            let (fan_in, fan_out) = (k * width, k * out);
            convs.push(Conv {
                w: store.add_glorot(format!("{name}.conv{i}.w"), &[k, width, out], fan_in, fan_out, rng),
                b: store.add_zeros(format!("{name}.conv{i}.b"), &[out]),
            });
            width = out;
        }
        let mut lstms = Vec::new();
        for (i, &hidden) in config.lstm_widths.iter().enumerate() {
            lstms.push(Lstm::new(store, &format!("{name}.lstm{i}"), width, hidden, rng));
            width = hidden;
        }
        let head = config.mlp_width.map(|m| Dense::new(store, &format!("{name}.head"), width, m, rng));
        Self { convs, lstms, head }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, input: NodeId, dropout: f64) -> Result<NodeId> {
        let mut h = input;
        for conv in &self.convs {
            let (w, b) = (g.param(conv.w), g.param(conv.b));
            h = g.conv1d(h, w, b)?;
            h = g.relu(h)?;
            h = g.dropout(h, dropout)?;
        }
        let mut h = if self.lstms.is_empty() {
            g.global_avg_pool(h)?
        } else {
            let shape = g.value(h)?.shape().to_vec();
            let (batch, len, ch) = (shape[0], shape[1], shape[2]);
            let mut steps = Vec::with_capacity(len);
            for t in 0..len {
                let s = g.slice(h, 1, t, 1)?;
                steps.push(g.reshape(s, &[batch, ch])?);
            }
            for lstm in &self.lstms {
                steps = lstm.forward(g, &steps)?;
            }
            let last = *steps.last().expect("non-empty window");
            g.dropout(last, dropout)?
        };
        if let Some(head) = &self.head {
            h = head.forward(g, h)?;
            h = g.relu(h)?;
        }
        Ok(h)
    }

    fn num_parameters(config: &BackboneConfig, channels: usize) -> usize {
        let mut width = channels;
        let mut total = 0;
        for &out in &config.cnn_widths {
            total += config.kernel * width * out + out;
            width = out;
        }
        for &hidden in &config.lstm_widths {
            total += Lstm::num_parameters(width, hidden);
            width = hidden;
        }
        if let Some(m) = config.mlp_width {
            total += Dense::num_parameters(width, m);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub target_tower: Tower,
    pub exogenous_tower: Option<Tower>,
}

impl Backbone {
    /// `t_max` channels feed the target tower, `num_attributes` the
    /// exogenous one. The two towers never share weights.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &BackboneConfig,
        t_max: usize,
        num_attributes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let target_tower = Tower::new(store, &format!("{prefix}.a"), config, t_max, rng);
        let exogenous_tower = config
            .kind
            .uses_exogenous()
            .then(|| Tower::new(store, &format!("{prefix}.x"), config, num_attributes, rng));
        Ok(Self {
            config: config.clone(),
            target_tower,
            exogenous_tower,
        })
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    /// `a` is `[B, n, t_max]`, `x` is `[B, n, C]` and required exactly
    /// when the kind is `convlstm_x`. Returns `[B, q]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, a: NodeId, x: Option<NodeId>) -> Result<NodeId> {
        let d = self.config.dropout;
        match (&self.exogenous_tower, x) {
            (None, None) => self.target_tower.forward(g, a, d),
            (Some(tx), Some(x)) => {
                let fa = self.target_tower.forward(g, a, d)?;
                let fx = tx.forward(g, x, d)?;
                Ok(g.concat(&[fa, fx], 1)?)
            }
            (None, Some(_)) => Err(Error::invalid(format!(
                "{} backbone does not take exogenous series",
                self.config.kind
            ))),
            (Some(_), None) => Err(Error::invalid("convlstm_x backbone requires exogenous series")),
        }
    }
}

/// Exact learnable scalar count of a backbone.
pub fn count_parameters(config: &BackboneConfig, t_max: usize, num_attributes: usize) -> usize {
    let mut total = Tower::num_parameters(config, t_max);
    if config.kind.uses_exogenous() {
        total += Tower::num_parameters(config, num_attributes);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(kind: BackboneKind, cnn: &[usize], lstm: &[usize], mlp: Option<usize>) -> BackboneConfig {
        BackboneConfig {
            kind,
            cnn_widths: cnn.to_vec(),
            lstm_widths: lstm.to_vec(),
            mlp_width: mlp,
            dropout: 0.0,
            kernel: 3,
        }
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn run(store: &ParamStore<f64>, b: &Backbone, a: &Tensor<f64>, x: Option<&Tensor<f64>>) -> Result<Vec<f64>> {
        let mut g = Graph::new(store, Mode::Inference);
        let an = g.input(a.clone());
        let xn = x.map(|x| g.input(x.clone()));
        let out = b.forward(&mut g, an, xn)?;
        Ok(g.value(out)?.data().to_vec())
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_parameters(&cfg(BackboneKind::Lstm, &[], &[4], None), 9, 20), 224);
        assert_eq!(count_parameters(&cfg(BackboneKind::Cnn, &[8], &[], None), 9, 20), 224);
        let small = count_parameters(&cfg(BackboneKind::Lstm, &[], &[4], None), 9, 20);
        let big = count_parameters(&cfg(BackboneKind::Lstm, &[], &[8], None), 9, 20);
        assert!(big > small);
        for kind in BackboneKind::ALL {
            let c = BackboneConfig { dropout: 0.0, ..BackboneConfig::full(kind) };
            let mut store = ParamStore::<f64>::new();
            Backbone::new(&mut store, "q", &c, 9, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(store.num_scalars(), count_parameters(&c, 9, 20), "{kind}");
        }
    }

    #[test]
    fn output_widths() {
        let lstm = cfg(BackboneKind::Lstm, &[], &[512], None);
        let mut store = ParamStore::<f64>::new();
        let b = Backbone::new(&mut store, "q", &lstm, 3, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let out = run(&store, &b, &random_input(&[2, 5, 3], 1), None).unwrap();
        assert_eq!(out.len(), 2 * 512);
        assert_eq!(BackboneConfig::full(BackboneKind::ConvlstmX).output_width(), 256);
    }

    #[test]
    fn zero_input_zero_bias_cnn_outputs_zero() {
        let c = cfg(BackboneKind::Cnn, &[4, 3], &[], Some(2));
        let mut store = ParamStore::<f64>::new();
        let b = Backbone::new(&mut store, "q", &c, 3, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let out = run(&store, &b, &Tensor::zeros(&[2, 6, 3]), None).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exogenous_input_contract() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plain = Backbone::new(&mut store, "p", &cfg(BackboneKind::Convlstm, &[3], &[2], None), 2, 4, &mut rng).unwrap();
        let dual = Backbone::new(&mut store, "d", &cfg(BackboneKind::ConvlstmX, &[3], &[2], None), 2, 4, &mut rng).unwrap();
        let (a, x) = (random_input(&[1, 4, 2], 1), random_input(&[1, 4, 4], 2));
        assert!(run(&store, &plain, &a, Some(&x)).is_err());
        assert!(run(&store, &dual, &a, None).is_err());

        let zeros = Tensor::zeros(&[1, 4, 4]);
        let both = run(&store, &dual, &a, Some(&zeros)).unwrap();
        let mut g = Graph::new(&store, Mode::Inference);
        let (an, xn) = (g.input(a.clone()), g.input(zeros));
        let fa = dual.target_tower.forward(&mut g, an, 0.0).unwrap();
        let fx = dual.exogenous_tower.as_ref().unwrap().forward(&mut g, xn, 0.0).unwrap();
        let separate = [g.value(fa).unwrap().data(), g.value(fx).unwrap().data()].concat();
        assert_eq!(both, separate);

        let mut bumped = x.clone();
        bumped.data_mut()[5] += 0.5;
        assert_ne!(run(&store, &dual, &a, Some(&x)).unwrap(), run(&store, &dual, &a, Some(&bumped)).unwrap());
    }

    #[test]
    fn zero_padded_channels_match_narrower_twin() {
        let c = cfg(BackboneKind::Lstm, &[], &[3], None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut wide, mut narrow) = (ParamStore::<f64>::new(), ParamStore::<f64>::new());
        let bw = Backbone::new(&mut wide, "q", &c, 4, 1, &mut rng).unwrap();
        let bn = Backbone::new(&mut narrow, "q", &c, 2, 1, &mut rng).unwrap();
        for (id, name, t) in wide.iter().map(|(i, n, t)| (i, n.to_string(), t.clone())).collect::<Vec<_>>() {
            let nid = narrow.id(&name).unwrap();
            let keep = narrow.get(nid).numel();
            narrow.get_mut(nid).data_mut().copy_from_slice(&t.data()[..keep]);
            let _ = id;
        }
        let a_narrow = random_input(&[2, 5, 2], 9);
        let mut padded = vec![0.0; 2 * 5 * 4];
        for (i, row) in a_narrow.data().chunks(2).enumerate() {
            padded[i * 4..i * 4 + 2].copy_from_slice(row);
        }
        let a_wide = Tensor::new(vec![2, 5, 4], padded).unwrap();
        assert_eq!(run(&wide, &bw, &a_wide, None).unwrap(), run(&narrow, &bn, &a_narrow, None).unwrap());
    }

    #[test]
    fn kind_parsing() {
        for k in BackboneKind::ALL {
            assert_eq!(k.to_string().parse::<BackboneKind>().unwrap(), k);
        }
        assert_eq!("ConvLSTM+X".parse::<BackboneKind>().unwrap(), BackboneKind::ConvlstmX);
        assert!("transformer".parse::<BackboneKind>().is_err());
    }
}
