//! Established/new product partition used for cold-start evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TrainingExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult<E> {
    pub train: Vec<E>,
    pub validation: Vec<E>,
    pub test: Vec<E>,
}

/// Products with several records train; single-record products are
/// sorted by id, shuffled by `seed` and halved into validation and test.
/// With an odd count the extra product goes to test.
pub fn split_by_product<E>(items: Vec<E>, key: impl Fn(&E) -> &str, seed: u64) -> Result<SplitResult<E>> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for item in &items {
        *counts.entry(key(item).to_string()).or_default() += 1;
    }
    let mut singles: Vec<&String> = counts.iter().filter(|(_, &c)| c == 1).map(|(p, _)| p).collect();
    if singles.len() < 2 {
        return Err(Error::invalid(format!(
            "{} single-record products: validation and test need at least 2",
            singles.len()
        )));
    }
    singles.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = singles.len() / 2;
    let validation_ids: Vec<String> = singles[..half].iter().map(|s| s.to_string()).collect();
    let test_ids: Vec<String> = singles[half..].iter().map(|s| s.to_string()).collect();
    let mut validation: Vec<(usize, E)> = Vec::with_capacity(half);
    let mut test: Vec<(usize, E)> = Vec::with_capacity(test_ids.len());
    let mut train = Vec::new();
    for item in items {
        let id = key(&item);
        if let Some(pos) = validation_ids.iter().position(|v| v == id) {
            validation.push((pos, item));
        } else if let Some(pos) = test_ids.iter().position(|v| v == id) {
            test.push((pos, item));
        } else {
            train.push(item);
        }
    }
    validation.sort_by_key(|(p, _)| *p);
    test.sort_by_key(|(p, _)| *p);
    Ok(SplitResult {
        train,
        validation: validation.into_iter().map(|(_, e)| e).collect(),
        test: test.into_iter().map(|(_, e)| e).collect(),
    })
}

pub fn split_established_new(examples: Vec<TrainingExample>, seed: u64) -> Result<SplitResult<TrainingExample>> {
    split_by_product(examples, |e| e.product_id.as_str(), seed)
}
