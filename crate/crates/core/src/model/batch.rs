//! Conversion of training examples into dense per-batch inputs.

use crate::data::calendar::{day_slot, month_slot, week_slot, Season};
use crate::data::VisualFeature;
use crate::error::{Error, Result};
use crate::series::TrainingExample;
use crate::tensor::Tensor;
use crate::Scalar;

use super::fusion::InputDims;

/// Global average pooling of a spatial map, then L2 normalization. Zero
/// vectors pass through unchanged.
pub fn encode_visual(raw: &VisualFeature) -> Vec<f64> {
    let pooled = match raw {
        VisualFeature::Vector(v) => v.clone(),
        VisualFeature::Spatial { height, width, channels, data } => {
            let cells = (height * width) as f64;
            let mut out = vec![0.0; *channels];
            for px in data.chunks(*channels) {
                out.iter_mut().zip(px).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= cells);
            out
        }
    };
    let norm = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        pooled.iter().map(|v| v / norm).collect()
    } else {
        pooled
    }
}

/// Row-major inputs for `size` examples.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub size: usize,
    /// `[size, V]`, already pooled and normalized.
    pub visual: Vec<T>,
    /// `[size, caption_len]`.
    pub caption: Vec<usize>,
    /// `[size, t_max]`.
    pub slots: Vec<usize>,
    pub day: Vec<usize>,
    pub week: Vec<usize>,
    pub month: Vec<usize>,
    pub season: Vec<usize>,
    pub group: Vec<usize>,
    /// `[size, n, t_max]`.
    pub a: Tensor<T>,
    /// `[size, n, C]`.
    pub x: Tensor<T>,
    /// `[size, k]`.
    pub target: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_examples(examples: &[&TrainingExample], dims: &InputDims, n: usize, k: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let size = examples.len();
        let mut b = Batch {
            size,
            visual: Vec::with_capacity(size * dims.feature_dim),
            caption: Vec::with_capacity(size * dims.caption_len),
            slots: Vec::with_capacity(size * dims.t_max),
            day: Vec::with_capacity(size),
            week: Vec::with_capacity(size),
            month: Vec::with_capacity(size),
            season: Vec::with_capacity(size),
            group: Vec::with_capacity(size),
            a: Tensor::zeros(&[1]),
            x: Tensor::zeros(&[1]),
            target: Vec::with_capacity(size * k),
        };
        let mut a = Vec::with_capacity(size * n * dims.t_max);
        let mut x = Vec::with_capacity(size * n * dims.num_attributes);
        for e in examples {
            let f = &e.features;
            let w = &e.window;
            let visual = encode_visual(&f.visual);
            let expect = |ok: bool, what: &str| {
                if ok {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "example {} / group {} / {}: {what} does not match the model",
                        e.product_id, e.group_id, e.target_week
                    )))
                }
            };
            expect(visual.len() == dims.feature_dim, "visual feature width")?;
            expect(f.caption.len() == dims.caption_len, "caption length")?;
            expect(f.slots.len() == dims.t_max, "categorical slot count")?;
            expect(w.n == n && w.t_max == dims.t_max && w.a.len() == n * dims.t_max, "target window shape")?;
            expect(w.num_attributes == dims.num_attributes && w.x.len() == n * dims.num_attributes, "exogenous window shape")?;
            expect(e.target.len() == k, "target horizon")?;
            expect(f.group < dims.group_slots(), "group id")?;
            b.visual.extend(visual.into_iter().map(T::of));
            b.caption.extend_from_slice(&f.caption);
            b.slots.extend_from_slice(&f.slots);
            b.day.push(day_slot(f.date));
            b.week.push(week_slot(f.date));
            b.month.push(month_slot(f.date));
            b.season.push(Season::of(f.date).slot());
            b.group.push(f.group);
            a.extend(w.a.iter().map(|&v| T::of(v)));
            x.extend(w.x.iter().map(|&v| T::of(v)));
            b.target.extend(e.target.iter().map(|&v| T::of(v)));
        }
        b.a = Tensor::new(vec![size, n, dims.t_max], a)?;
        b.x = Tensor::new(vec![size, n, dims.num_attributes], x)?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visual_encoding() {
        let map = VisualFeature::Spatial {
            height: 2,
            width: 2,
            channels: 1,
            data: vec![4.0; 4],
        };
        assert_eq!(encode_visual(&map), vec![1.0]);
        assert_eq!(encode_visual(&VisualFeature::Vector(vec![3.0, 4.0])), vec![0.6, 0.8]);
        assert_eq!(encode_visual(&VisualFeature::Vector(vec![0.0, 0.0])), vec![0.0, 0.0]);
        let two = VisualFeature::Spatial {
            height: 1,
            width: 2,
            channels: 2,
            data: vec![1.0, 0.0, 5.0, 0.0],
        };
        assert_eq!(encode_visual(&two), vec![1.0, 0.0]);
    }
}
