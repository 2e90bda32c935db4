//! Raw data model: interaction log, product catalog, dataset manifest.

pub mod calendar;
pub mod io;
pub mod popularity;
pub mod text;

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use popularity::{
    likability, popularity, reachability, LikeScale, PopularityError, PopularityIndex,
    PopularitySample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub product_id: String,
    pub group_id: usize,
    #[serde(rename = "date")]
    pub day: NaiveDate,
    pub polarity: Polarity,
}

/// Precomputed visual descriptor: a flat vector, or an `H x W x V`
/// feature map that gets average-pooled to `V` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VisualFeature {
    Vector(Vec<f64>),
    Spatial {
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    },
}

impl VisualFeature {
    pub fn channels(&self) -> usize {
        match self {
            VisualFeature::Vector(v) => v.len(),
            VisualFeature::Spatial { channels, .. } => *channels,
        }
    }

    pub fn raw(&self) -> &[f64] {
        match self {
            VisualFeature::Vector(v) => v,
            VisualFeature::Spatial { data, .. } => data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    /// Sorted, deduplicated attribute indices in `0..C`.
    pub attribute_ids: Vec<usize>,
    pub visual: VisualFeature,
    pub caption_tokens: Vec<usize>,
}

/// Dataset-level declarations shared by every artifact of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_attributes: usize,
    /// Zero when the dataset carries no demographic groups.
    pub num_groups: usize,
    pub feature_dim: usize,
    /// `[H, W]` when visual features are spatial maps.
    #[serde(default)]
    pub spatial: Option<[usize; 2]>,
    /// Vocabulary size `W`, excluding the padding id 0.
    pub vocab_size: usize,
    pub t_max: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

pub const DATASET_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != DATASET_VERSION {
            return Err(Error::invalid(format!(
                "dataset manifest version {} unsupported (expected {DATASET_VERSION})",
                self.version
            )));
        }
        if self.num_attributes == 0 || self.feature_dim == 0 || self.t_max == 0 {
            return Err(Error::invalid("attribute count, feature dimension and t_max must be positive"));
        }
        if self.end_date < self.start_date {
            return Err(Error::invalid("dataset end date precedes start date"));
        }
        Ok(())
    }

    /// Group count used for group-indexed tables; at least one.
    pub fn group_slots(&self) -> usize {
        self.num_groups.max(1)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<InteractionRecord>,
}

impl InteractionLog {
    pub fn new(records: Vec<InteractionRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.day < manifest.start_date || r.day > manifest.end_date {
                return Err(Error::invalid(format!(
                    "interaction {i}: date {} outside {}..={}",
                    r.day, manifest.start_date, manifest.end_date
                )));
            }
            if r.group_id >= manifest.group_slots() {
                return Err(Error::invalid(format!(
                    "interaction {i}: group {} >= {}",
                    r.group_id,
                    manifest.group_slots()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub manifest: DatasetManifest,
    products: Vec<ProductRecord>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(manifest: DatasetManifest, products: Vec<ProductRecord>) -> Result<Self> {
        manifest.validate()?;
        let mut index = HashMap::with_capacity(products.len());
        let expected_len = match manifest.spatial {
            Some([h, w]) => h * w * manifest.feature_dim,
            None => manifest.feature_dim,
        };
        for (i, p) in products.iter().enumerate() {
            if p.attribute_ids.is_empty() {
                return Err(Error::invalid(format!("product {}: no attributes", p.product_id)));
            }
            if p.attribute_ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "product {}: attributes must be sorted and unique",
                    p.product_id
                )));
            }
            if let Some(&a) = p.attribute_ids.iter().find(|&&a| a >= manifest.num_attributes) {
                return Err(Error::invalid(format!(
                    "product {}: attribute {a} >= {}",
                    p.product_id, manifest.num_attributes
                )));
            }
            if p.attribute_ids.len() > manifest.t_max {
                return Err(Error::invalid(format!(
                    "product {}: {} attributes exceed t_max {}",
                    p.product_id,
                    p.attribute_ids.len(),
                    manifest.t_max
                )));
            }
            if p.visual.raw().len() != expected_len || p.visual.channels() != manifest.feature_dim {
                return Err(Error::invalid(format!(
                    "product {}: visual feature length {} does not match manifest ({expected_len})",
                    p.product_id,
                    p.visual.raw().len()
                )));
            }
            if let Some(&t) = p.caption_tokens.iter().find(|&&t| t > manifest.vocab_size) {
                return Err(Error::invalid(format!(
                    "product {}: token {t} outside vocabulary of {}",
                    p.product_id, manifest.vocab_size
                )));
            }
            if index.insert(p.product_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate product {}", p.product_id)));
            }
        }
        Ok(Self {
            manifest,
            products,
            index,
        })
    }

    pub fn products(&self) -> &[ProductRecord] {
        &self.products
    }

    pub fn get(&self, product_id: &str) -> Option<&ProductRecord> {
        self.index.get(product_id).map(|&i| &self.products[i])
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn manifest(num_attributes: usize, num_groups: usize) -> DatasetManifest {
        DatasetManifest {
            version: DATASET_VERSION,
            num_attributes,
            num_groups,
            feature_dim: 2,
            spatial: None,
            vocab_size: 10,
            t_max: num_attributes.min(3),
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2021, 12, 31).unwrap(),
        }
    }

    pub fn product(id: &str, attrs: &[usize]) -> ProductRecord {
        ProductRecord {
            product_id: id.to_string(),
            attribute_ids: attrs.to_vec(),
            visual: VisualFeature::Vector(vec![1.0, 0.0]),
            caption_tokens: vec![1, 2],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn catalog_rejects_bad_products() {
        let m = manifest(4, 2);
        assert!(Catalog::new(m.clone(), vec![product("a", &[])]).is_err());
        assert!(Catalog::new(m.clone(), vec![product("a", &[4])]).is_err());
        assert!(Catalog::new(m.clone(), vec![product("a", &[2, 1])]).is_err());
        let mut p = product("a", &[1]);
        p.visual = VisualFeature::Vector(vec![1.0]);
        assert!(Catalog::new(m.clone(), vec![p]).is_err());
        assert!(Catalog::new(m.clone(), vec![product("a", &[1]), product("a", &[2])]).is_err());
        let ok = Catalog::new(m, vec![product("a", &[0, 3])]).unwrap();
        assert_eq!(ok.get("a").unwrap().attribute_ids, vec![0, 3]);
    }

    #[test]
    fn log_validation_checks_span_and_group() {
        let m = manifest(4, 2);
        let rec = |group_id, day| InteractionRecord {
            user_id: "u".into(),
            product_id: "p".into(),
            group_id,
            day,
            polarity: Polarity::Positive,
        };
        let inside = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap();
        assert!(InteractionLog::new(vec![rec(1, inside)]).validate(&m).is_ok());
        assert!(InteractionLog::new(vec![rec(2, inside)]).validate(&m).is_err());
        let outside = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
        assert!(InteractionLog::new(vec![rec(0, outside)]).validate(&m).is_err());
    }
}
