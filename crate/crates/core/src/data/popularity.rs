//! Popularity of a product for a demographic group on a day: likability
//! (positive share of that day's interactions) times reachability (the
//! fraction of the group's active users in the season who reacted
//! positively to each of the product's attributes, multiplied over the
//! attributes).

use std::collections::{HashMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::calendar::SeasonKey;
use super::{Catalog, InteractionLog, Polarity};
use crate::error::{Error as CrateError, Result};

/// A sample whose popularity is undefined. Callers skip such samples.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PopularityError {
    #[error("no interactions for group {group}, product {product} on {day}")]
    NoInteractions {
        group: usize,
        product: String,
        day: NaiveDate,
    },
    #[error("group {group} has no active users in {season:?}")]
    EmptySeason { group: usize, season: SeasonKey },
    #[error("product {0} is not in the catalog")]
    UnknownProduct(String),
}

/// One defined daily popularity value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularitySample {
    pub product_id: String,
    pub group_id: usize,
    pub day: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    positive: u64,
    negative: u64,
}

/// Counting index over an immutable log. Cheap lookups for every
/// (group, product, day) and (attributes, group, season) query.
#[derive(Debug)]
pub struct PopularityIndex<'a> {
    catalog: &'a Catalog,
    daily: HashMap<(usize, String, NaiveDate), Counts>,
    active: HashMap<(usize, SeasonKey), usize>,
    reached: HashMap<(usize, SeasonKey, usize), usize>,
}

impl<'a> PopularityIndex<'a> {
    pub fn build(log: &InteractionLog, catalog: &'a Catalog) -> Self {
        let mut daily: HashMap<(usize, String, NaiveDate), Counts> = HashMap::new();
        let mut active: HashMap<(usize, SeasonKey), HashSet<&str>> = HashMap::new();
        let mut reached: HashMap<(usize, SeasonKey, usize), HashSet<&str>> = HashMap::new();
        for r in &log.records {
            let counts = daily
                .entry((r.group_id, r.product_id.clone(), r.day))
                .or_default();
            let season = SeasonKey::of(r.day);
            active
                .entry((r.group_id, season))
                .or_default()
                .insert(&r.user_id);
            match r.polarity {
                Polarity::Positive => {
                    counts.positive += 1;
                    if let Some(p) = catalog.get(&r.product_id) {
                        for &a in &p.attribute_ids {
                            reached
                                .entry((r.group_id, season, a))
                                .or_default()
                                .insert(&r.user_id);
                        }
                    }
                }
                Polarity::Negative => counts.negative += 1,
            }
        }
        Self {
            catalog,
            daily,
            active: active.into_iter().map(|(k, v)| (k, v.len())).collect(),
            reached: reached.into_iter().map(|(k, v)| (k, v.len())).collect(),
        }
    }

    pub fn catalog(&self) -> &Catalog {
        self.catalog
    }

    pub fn likability(&self, group: usize, product: &str, day: NaiveDate) -> Result<f64, PopularityError> {
        let c = self
            .daily
            .get(&(group, product.to_string(), day))
            .filter(|c| c.positive + c.negative > 0)
            .ok_or_else(|| PopularityError::NoInteractions {
                group,
                product: product.to_string(),
                day,
            })?;
        Ok(c.positive as f64 / (c.positive + c.negative) as f64)
    }

    /// Product over `attributes`, in the given order, of reached / active users.
    pub fn reachability(
        &self,
        attributes: &[usize],
        group: usize,
        season: SeasonKey,
    ) -> Result<f64, PopularityError> {
        let active = match self.active.get(&(group, season)) {
            Some(&n) if n > 0 => n,
            _ => return Err(PopularityError::EmptySeason { group, season }),
        };
        let mut r = 1.0;
        for &a in attributes {
            let reached = self.reached.get(&(group, season, a)).copied().unwrap_or(0);
            r *= reached as f64 / active as f64;
        }
        Ok(r)
    }

    pub fn popularity(&self, product: &str, group: usize, day: NaiveDate) -> Result<f64, PopularityError> {
        let record = self
            .catalog
            .get(product)
            .ok_or_else(|| PopularityError::UnknownProduct(product.to_string()))?;
        let l = self.likability(group, product, day)?;
        let r = self.reachability(&record.attribute_ids, group, SeasonKey::of(day))?;
        Ok(l * r)
    }

    /// Every defined daily popularity value, sorted by (product, group, day),
    /// plus the number of (group, product, day) cells that were skipped.
    pub fn samples(&self) -> (Vec<PopularitySample>, usize) {
        let mut keys: Vec<_> = self.daily.keys().collect();
        keys.sort_by(|a, b| (&a.1, a.0, a.2).cmp(&(&b.1, b.0, b.2)));
        let mut out = Vec::with_capacity(keys.len());
        let mut skipped = 0;
        for (group, product, day) in keys {
            match self.popularity(product, *group, *day) {
                Ok(value) => out.push(PopularitySample {
                    product_id: product.clone(),
                    group_id: *group,
                    day: *day,
                    value,
                }),
                Err(_) => skipped += 1,
            }
        }
        (out, skipped)
    }
}

pub fn likability(log: &InteractionLog, catalog: &Catalog, group: usize, product: &str, day: NaiveDate) -> Result<f64, PopularityError> {
    PopularityIndex::build(log, catalog).likability(group, product, day)
}

pub fn reachability(
    log: &InteractionLog,
    catalog: &Catalog,
    attributes: &[usize],
    group: usize,
    season: SeasonKey,
) -> Result<f64, PopularityError> {
    PopularityIndex::build(log, catalog).reachability(attributes, group, season)
}

pub fn popularity(log: &InteractionLog, catalog: &Catalog, product: &str, group: usize, day: NaiveDate) -> Result<f64, PopularityError> {
    PopularityIndex::build(log, catalog).popularity(product, group, day)
}

/// Min-max scaling of `log(likes + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikeScale {
    pub min: f64,
    pub max: f64,
}

impl LikeScale {
    /// `min`/`max` are bounds of the transformed values.
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(CrateError::invalid(format!(
                "degenerate like scale: min {min}, max {max}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn fit(likes: impl IntoIterator<Item = u64>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for l in likes {
            let t = ((l + 1) as f64).ln();
            lo = lo.min(t);
            hi = hi.max(t);
        }
        Self::new(lo, hi)
    }

    /// Scaled value, clamped to `[0, 1]` for inputs outside the fitted range.
    pub fn normalize(&self, likes: u64) -> f64 {
        let t = ((likes + 1) as f64).ln();
        ((t - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}
