//! Multimodal encoder: visual, caption, categorical, temporal and
//! demographic features, concatenated and passed through a relu MLP.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::nn::{add_embedding, embed_flat, Dense};
use crate::data::calendar::{DAY_SLOTS, MONTH_SLOTS, SEASON_SLOTS, WEEK_SLOTS};
use crate::data::text::{CAPTION_LEN, PAD};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::Scalar;

/// Dataset-derived input sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    /// `C`.
    pub num_attributes: usize,
    pub t_max: usize,
    /// `V`, the pooled visual width.
    pub feature_dim: usize,
    /// Zero when the dataset declares no groups.
    pub num_groups: usize,
    /// `W`, excluding padding.
    pub vocab_size: usize,
    pub caption_len: usize,
}

impl InputDims {
    pub fn group_slots(&self) -> usize {
        self.num_groups.max(1)
    }
}

impl From<&crate::data::DatasetManifest> for InputDims {
    fn from(m: &crate::data::DatasetManifest) -> Self {
        Self {
            num_attributes: m.num_attributes,
            t_max: m.t_max,
            feature_dim: m.feature_dim,
            num_groups: m.num_groups,
            vocab_size: m.vocab_size,
            caption_len: CAPTION_LEN,
        }
    }
}

/// Which feature families enter the concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionParts {
    pub visual: bool,
    pub caption: bool,
    pub categorical: bool,
    pub temporal: bool,
    pub demographic: bool,
}

impl FusionParts {
    pub const ALL: FusionParts = FusionParts {
        visual: true,
        caption: true,
        categorical: true,
        temporal: true,
        demographic: true,
    };

    pub fn any(&self) -> bool {
        self.visual || self.caption || self.categorical || self.temporal || self.demographic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub d_c: usize,
    pub d_t: usize,
    pub d_g: usize,
    pub d_w: usize,
    pub mlp_widths: Vec<usize>,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_c: 32,
            d_t: 32,
            d_g: 32,
            d_w: 32,
            mlp_widths: vec![2048, 1024, 512, 256],
            dropout: 0.1,
        }
    }
}

impl FusionConfig {
    /// Narrow variant of the default for single-core runs.
    pub fn desk() -> Self {
        Self {
            d_c: 8,
            d_t: 8,
            d_g: 8,
            d_w: 8,
            mlp_widths: vec![64, 32],
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d_c, self.d_t, self.d_g, self.d_w].contains(&0) {
            return Err(Error::invalid("fusion embedding sizes must be positive"));
        }
        if self.mlp_widths.is_empty() || self.mlp_widths.contains(&0) {
            return Err(Error::invalid("fusion MLP needs at least one positive layer width"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("fusion dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionPart {
    Visual,
    Caption,
    Categorical,
    Temporal,
    Demographic,
}

/// Position of one feature family inside the concatenated MLP input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartSlice {
    pub part: FusionPart,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTables {
    pub categorical: Option<ParamId>,
    pub day: Option<ParamId>,
    pub week: Option<ParamId>,
    pub month: Option<ParamId>,
    pub season: Option<ParamId>,
    pub group: Option<ParamId>,
    pub word: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMlp {
    pub config: FusionConfig,
    pub parts: FusionParts,
    pub tables: EmbeddingTables,
    pub layout: Vec<PartSlice>,
    pub layers: Vec<Dense>,
}

/// Forward result: the MLP output node plus the concatenated input node.
#[derive(Debug, Clone, Copy)]
pub struct FusionNodes {
    pub input: NodeId,
    pub output: NodeId,
}

/// Host-side copy of one example's fused representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature<T> {
    pub values: Vec<T>,
    pub layout: Vec<PartSlice>,
}

impl FusionMlp {
    /// Registers tables and layers under `prefix`. Demographic embeddings
    /// are only created when the dataset declares groups.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &FusionConfig,
        mut parts: FusionParts,
        dims: &InputDims,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        parts.demographic &= dims.num_groups > 0;
        if !parts.any() {
            return Err(Error::invalid("fusion encoder with every feature family disabled"));
        }
        let mut layout = Vec::new();
        let mut width = 0;
        let mut push = |part, len| {
            layout.push(PartSlice { part, start: width, len });
            width += len;
        };
        let name = |t: &str| format!("{prefix}.{t}");
        let mut tables = EmbeddingTables {
            categorical: None,
            day: None,
            week: None,
            month: None,
            season: None,
            group: None,
            word: None,
        };
        if parts.visual {
            push(FusionPart::Visual, dims.feature_dim);
        }
        if parts.caption {
            tables.word = Some(add_embedding(store, &name("E_word"), dims.vocab_size + 1, config.d_w, Some(PAD), rng));
            push(FusionPart::Caption, dims.caption_len * config.d_w);
        }
        if parts.categorical {
            tables.categorical = Some(add_embedding(store, &name("E_c"), dims.num_attributes + 1, config.d_c, Some(PAD), rng));
            push(FusionPart::Categorical, dims.t_max * config.d_c);
        }
        if parts.temporal {
            tables.day = Some(add_embedding(store, &name("E_d"), DAY_SLOTS, config.d_t, None, rng));
            tables.week = Some(add_embedding(store, &name("E_w"), WEEK_SLOTS, config.d_t, None, rng));
            tables.month = Some(add_embedding(store, &name("E_m"), MONTH_SLOTS, config.d_t, None, rng));
            tables.season = Some(add_embedding(store, &name("E_s"), SEASON_SLOTS, config.d_t, None, rng));
            push(FusionPart::Temporal, 4 * config.d_t);
        }
        if parts.demographic {
            tables.group = Some(add_embedding(store, &name("E_g"), dims.num_groups, config.d_g, None, rng));
            push(FusionPart::Demographic, config.d_g);
        }
        let mut layers = Vec::with_capacity(config.mlp_widths.len());
        let mut inputs = width;
        for (i, &w) in config.mlp_widths.iter().enumerate() {
            layers.push(Dense::new(store, &name(&format!("mlp{i}")), inputs, w, rng));
            inputs = w;
        }
        Ok(Self {
            config: config.clone(),
            parts,
            tables,
            layout,
            layers,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layout.iter().map(|s| s.len).sum()
    }

    pub fn output_width(&self) -> usize {
        *self.config.mlp_widths.last().expect("validated non-empty")
    }

    /// Builds `[F_v; F_w; F_c; F_t; F_g]` for the enabled parts.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, batch: &Batch<T>) -> Result<NodeId> {
        let b = batch.size;
        let mut pieces = Vec::with_capacity(5);
        for slice in &self.layout {
            let node = match slice.part {
                FusionPart::Visual => {
                    let v = Tensor::new(vec![b, slice.len], batch.visual.clone())?;
                    g.input(v)
                }
                FusionPart::Caption => embed_flat(g, self.tables.word.expect("caption table"), &batch.caption, b, Some(PAD))?,
                FusionPart::Categorical => {
                    embed_flat(g, self.tables.categorical.expect("categorical table"), &batch.slots, b, Some(PAD))?
                }
                FusionPart::Temporal => {
                    let d = embed_flat(g, self.tables.day.expect("day table"), &batch.day, b, None)?;
                    let w = embed_flat(g, self.tables.week.expect("week table"), &batch.week, b, None)?;
                    let m = embed_flat(g, self.tables.month.expect("month table"), &batch.month, b, None)?;
                    let s = embed_flat(g, self.tables.season.expect("season table"), &batch.season, b, None)?;
                    g.concat(&[d, w, m, s], 1)?
                }
                FusionPart::Demographic => embed_flat(g, self.tables.group.expect("group table"), &batch.group, b, None)?,
            };
            pieces.push(node);
        }
        Ok(if pieces.len() == 1 { pieces[0] } else { g.concat(&pieces, 1)? })
    }

    /// Relu MLP over `input`; dropout between layers in training mode.
    pub fn mlp<T: Scalar>(&self, g: &mut Graph<T>, input: NodeId) -> Result<NodeId> {
        let width = g.value(input)?.shape()[1];
        if width != self.input_width() {
            return Err(Error::invalid(format!(
                "fusion input width {width} does not match configured {}",
                self.input_width()
            )));
        }
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            h = g.relu(h)?;
            if i + 1 < self.layers.len() {
                h = g.dropout(h, self.config.dropout)?;
            }
        }
        Ok(h)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, batch: &Batch<T>) -> Result<FusionNodes> {
        let input = self.encode(g, batch)?;
        let output = self.mlp(g, input)?;
        Ok(FusionNodes { input, output })
    }

    /// Inference-mode fused features, one per batch row.
    pub fn fused<T: Scalar>(&self, store: &ParamStore<T>, batch: &Batch<T>) -> Result<Vec<FusedFeature<T>>> {
        let mut g = Graph::new(store, crate::tensor::Mode::Inference);
        let out = self.forward(&mut g, batch)?.output;
        let f = self.output_width();
        Ok(g.value(out)?
            .data()
            .chunks(f)
            .map(|row| FusedFeature {
                values: row.to_vec(),
                layout: self.layout.clone(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VisualFeature;
    use crate::series::{ExampleFeatures, QarWindow, TrainingExample};
    use crate::tensor::Mode;
    use chrono::NaiveDate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn dims() -> InputDims {
        InputDims {
            num_attributes: 5,
            t_max: 3,
            feature_dim: 4,
            num_groups: 2,
            vocab_size: 7,
            caption_len: CAPTION_LEN,
        }
    }

    fn config() -> FusionConfig {
        FusionConfig {
            d_c: 3,
            d_t: 2,
            d_g: 2,
            d_w: 2,
            mlp_widths: vec![6, 4],
            dropout: 0.0,
        }
    }

    fn example(date: NaiveDate, slots: Vec<usize>, caption: Vec<usize>) -> TrainingExample {
        let d = dims();
        let mut caption = caption;
        caption.resize(d.caption_len, 0);
        TrainingExample {
            product_id: "p".into(),
            group_id: 1,
            target_week: date,
            features: ExampleFeatures {
                visual: VisualFeature::Vector(vec![1.0, 2.0, 0.0, 2.0]),
                caption,
                slots,
                date,
                group: 1,
            },
            window: QarWindow {
                n: 2,
                t_max: d.t_max,
                num_attributes: d.num_attributes,
                a: vec![0.0; 2 * d.t_max],
                x: vec![0.0; 2 * d.num_attributes],
                target_slots: vec![],
            },
            target: vec![0.5],
        }
    }

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn batch(examples: &[TrainingExample]) -> Batch<f64> {
        let refs: Vec<&TrainingExample> = examples.iter().collect();
        Batch::from_examples(&refs, &dims(), 2, 1).unwrap()
    }

    fn build(parts: FusionParts) -> (ParamStore<f64>, FusionMlp) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FusionMlp::new(&mut store, "fusion", &config(), parts, &dims(), &mut rng).unwrap();
        (store, f)
    }

    fn encoded(store: &ParamStore<f64>, f: &FusionMlp, b: &Batch<f64>) -> Vec<f64> {
        let mut g = Graph::new(store, Mode::Inference);
        let n = f.encode(&mut g, b).unwrap();
        g.value(n).unwrap().data().to_vec()
    }

    fn only(part: FusionPart) -> FusionParts {
        FusionParts {
            visual: part == FusionPart::Visual,
            caption: part == FusionPart::Caption,
            categorical: part == FusionPart::Categorical,
            temporal: part == FusionPart::Temporal,
            demographic: part == FusionPart::Demographic,
        }
    }

    #[test]
    fn categorical_lookup_and_padding() {
        let (store, f) = build(only(FusionPart::Categorical));
        let table = store.get(f.tables.categorical.unwrap()).data().to_vec();
        let row = |i: usize| table[i * 3..i * 3 + 3].to_vec();
        let all_pad = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![0, 0, 0], vec![])]));
        assert_eq!(all_pad, vec![0.0; 9]);
        let single = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![2, 0, 0], vec![])]));
        assert_eq!(single, [row(2), vec![0.0; 6]].concat());
        let two = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![1, 4, 0], vec![])]));
        let swapped = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![4, 1, 0], vec![])]));
        assert_eq!(two, [row(1), row(4), vec![0.0; 3]].concat());
        assert_ne!(two, swapped);
        let bad = batch(&[example(date(2021, 1, 4), vec![6, 0, 0], vec![])]);
        let mut g = Graph::new(&store, Mode::Inference);
        assert!(f.encode(&mut g, &bad).is_err());
    }

    #[test]
    fn temporal_lookup() {
        let (store, f) = build(only(FusionPart::Temporal));
        let leap = encoded(&store, &f, &batch(&[example(date(2020, 2, 29), vec![0; 3], vec![])]));
        let day = store.get(f.tables.day.unwrap()).data();
        assert_eq!(&leap[0..2], &day[59 * 2..60 * 2]);
        let winter = encoded(&store, &f, &batch(&[example(date(2021, 1, 15), vec![0; 3], vec![])]));
        let season = store.get(f.tables.season.unwrap()).data();
        assert_eq!(&winter[6..8], &season[0..2]);
        let mon = encoded(&store, &f, &batch(&[example(date(2021, 6, 7), vec![0; 3], vec![])]));
        let sun = encoded(&store, &f, &batch(&[example(date(2021, 6, 13), vec![0; 3], vec![])]));
        assert_eq!(&mon[2..4], &sun[2..4]);
        assert_ne!(&mon[0..2], &sun[0..2]);
    }

    #[test]
    fn caption_embeddings_are_positional() {
        let (store, f) = build(only(FusionPart::Caption));
        let empty = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![0; 3], vec![])]));
        assert!(empty.iter().all(|&v| v == 0.0));
        let twice = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![0; 3], vec![3, 3])]));
        assert_eq!(&twice[0..2], &twice[2..4]);
        let ab = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![0; 3], vec![1, 2])]));
        let ba = encoded(&store, &f, &batch(&[example(date(2021, 1, 4), vec![0; 3], vec![2, 1])]));
        assert_eq!(&ab[0..2], &ba[2..4]);
        assert_eq!(&ab[2..4], &ba[0..2]);
        let bad = batch(&[example(date(2021, 1, 4), vec![0; 3], vec![8])]);
        let mut g = Graph::new(&store, Mode::Inference);
        assert!(f.encode(&mut g, &bad).is_err());
    }

    #[test]
    fn widths_follow_enabled_parts() {
        let (_, v) = build(only(FusionPart::Visual));
        assert_eq!(v.input_width(), dims().feature_dim);
        let (store, all) = build(FusionParts::ALL);
        assert_eq!(all.input_width(), 4 + CAPTION_LEN * 2 + 3 * 3 + 4 * 2 + 2);
        let fused = all.fused(&store, &batch(&[example(date(2021, 1, 4), vec![1, 0, 0], vec![1])])).unwrap();
        assert_eq!(fused[0].values.len(), 4);
        let mut store = ParamStore::<f64>::new();
        let cfg = FusionConfig {
            mlp_widths: vec![2048, 1024, 512, 256],
            ..config()
        };
        let big = FusionMlp::new(&mut store, "f", &cfg, FusionParts::ALL, &dims(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(big.output_width(), 256);
        let no_groups = InputDims { num_groups: 0, ..dims() };
        let f = FusionMlp::new(&mut ParamStore::<f64>::new(), "f", &config(), FusionParts::ALL, &no_groups, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(f.tables.group.is_none());
    }

    #[test]
    fn zero_inputs_and_biases_give_zero_output() {
        let (mut store, f) = build(only(FusionPart::Visual));
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with(".b") {
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut e = example(date(2021, 1, 4), vec![0; 3], vec![]);
        e.features.visual = VisualFeature::Vector(vec![0.0; 4]);
        let out = f.fused(&store, &batch(&[e])).unwrap();
        assert_eq!(out[0].values, vec![0.0; 4]);
    }

    #[test]
    fn gradients_reach_tables_but_not_pad_rows() {
        let (store, f) = build(FusionParts::ALL);
        let b = batch(&[
            example(date(2021, 3, 8), vec![1, 3, 0], vec![2, 5]),
            example(date(2021, 9, 20), vec![2, 0, 0], vec![1]),
        ]);
        let mut g = Graph::new(&store, Mode::Train { seed: 1 });
        let out = f.forward(&mut g, &b).unwrap().output;
        let loss = g.sum(out).unwrap();
        let grads = g.backward(loss).unwrap();
        let t = &f.tables;
        for id in [t.categorical, t.day, t.week, t.month, t.season, t.group, t.word].into_iter().flatten() {
            let grad = grads.get(id).expect("table receives gradient");
            assert!(grad.iter().any(|&v| v != 0.0), "{}", store.name(id));
        }
        for (id, dim) in [(t.categorical.unwrap(), 3), (t.word.unwrap(), 2)] {
            assert!(grads.get(id).unwrap()[..dim].iter().all(|&v| v == 0.0));
            assert!(store.get(id).data()[..dim].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn inference_is_repeatable() {
        let (store, f) = build(FusionParts::ALL);
        let b = batch(&[example(date(2021, 3, 8), vec![1, 3, 0], vec![2, 5])]);
        assert_eq!(f.fused(&store, &b).unwrap(), f.fused(&store, &b).unwrap());
    }
}
