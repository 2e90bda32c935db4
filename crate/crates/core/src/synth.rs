//! Seeded synthetic interaction logs with planted seasonal, trend and
//! cross-attribute structure.
//!
//! Latent affinity of group `g` for attribute `a` in week `w`:
//!
//! ```text
//! z = base_a + amplitude * sin(2 pi w / 52 + phase_ga) + trend_scale * u_ga(w) + noise * eps
//! ```
//!
//! `u` is unit-variance. Drivers follow a weakly autocorrelated AR(1)
//! process; each follower mixes its driver `lag` weeks earlier with its
//! own AR(1) term, `u_f(w) = c * u_d(w - lag) + sqrt(1 - c^2) * o_f(w)`;
//! the remaining attributes are plain AR(1). A user of group `g` reacts
//! positively to product `p` in week `w` with probability
//! `sigmoid(appeal_p + mean of z over the product's attributes)`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::io::{write_catalog, write_interactions, INTERACTIONS_FILE, VOCAB_FILE};
use crate::data::text::{Vocabulary, CAPTION_LEN};
use crate::data::{
    Catalog, DatasetManifest, InteractionLog, InteractionRecord, Polarity, ProductRecord, VisualFeature, DATASET_VERSION,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_groups: usize,
    pub num_attributes: usize,
    /// Attributes `0..num_drivers` drive the next `num_followers` ones.
    pub num_drivers: usize,
    pub num_followers: usize,
    /// Upper bound on attributes per product; becomes `t_max`.
    pub max_attributes_per_product: usize,
    /// Products active for `established_weeks` consecutive weeks in every group.
    pub num_established: usize,
    pub established_weeks: usize,
    /// Products active for `k` weeks in a single group.
    pub num_new: usize,
    pub users_per_group: usize,
    /// Mean interactions per user and day.
    pub interactions_per_user_day: f64,
    pub weeks: usize,
    /// Monday of the first week.
    pub start_date: NaiveDate,
    pub n: usize,
    pub k: usize,
    pub seasonal_amplitude: f64,
    pub coupling: f64,
    pub lag: usize,
    pub driver_autocorrelation: f64,
    pub trend_autocorrelation: f64,
    pub trend_scale: f64,
    pub noise: f64,
    pub appeal_scale: f64,
    pub feature_dim: usize,
    pub visual_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_groups: 2,
            num_attributes: 8,
            num_drivers: 2,
            num_followers: 6,
            max_attributes_per_product: 2,
            num_established: 1100,
            established_weeks: 4,
            num_new: 2000,
            users_per_group: 50,
            interactions_per_user_day: 20.0,
            weeks: 156,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 7).expect("valid date"),
            n: 12,
            k: 1,
            seasonal_amplitude: 0.5,
            coupling: 0.8,
            lag: 1,
            driver_autocorrelation: 0.3,
            trend_autocorrelation: 0.9,
            trend_scale: 1.2,
            noise: 0.1,
            appeal_scale: 0.8,
            feature_dim: 16,
            visual_noise: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_groups", self.num_groups),
            ("num_attributes", self.num_attributes),
            ("max_attributes_per_product", self.max_attributes_per_product),
            ("users_per_group", self.users_per_group),
            ("weeks", self.weeks),
            ("n", self.n),
            ("k", self.k),
            ("feature_dim", self.feature_dim),
            ("established_weeks", self.established_weeks),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.num_established + self.num_new == 0 {
            return Err(Error::invalid("at least one product is required"));
        }
        if self.weeks < self.n + self.k + 1 {
            return Err(Error::invalid(format!(
                "span of {} weeks is shorter than n + k + 1 = {}",
                self.weeks,
                self.n + self.k + 1
            )));
        }
        if self.established_weeks > self.weeks {
            return Err(Error::invalid("established_weeks exceeds the span"));
        }
        if self.num_drivers + self.num_followers > self.num_attributes || (self.num_followers > 0 && self.num_drivers == 0) {
            return Err(Error::invalid("drivers and followers must fit the attributes, and followers need a driver"));
        }
        if self.max_attributes_per_product > self.num_attributes {
            return Err(Error::invalid("max_attributes_per_product exceeds num_attributes"));
        }
        if self.start_date.weekday() != Weekday::Mon {
            return Err(Error::invalid(format!("start date {} is not a Monday", self.start_date)));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.coupling) || !unit(self.driver_autocorrelation.abs()) || !unit(self.trend_autocorrelation.abs()) {
            return Err(Error::invalid("coupling and autocorrelations must lie in [0, 1]"));
        }
        let scales = [
            self.seasonal_amplitude,
            self.trend_scale,
            self.noise,
            self.appeal_scale,
            self.visual_noise,
            self.interactions_per_user_day,
        ];
        if scales.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("scales and rates must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::weeks(self.weeks as i64) - Duration::days(1)
    }

    /// Driver of attribute `a`, if it is a follower.
    pub fn driver_of(&self, a: usize) -> Option<usize> {
        let first = self.num_drivers;
        (first..first + self.num_followers).contains(&a).then(|| (a - first) % self.num_drivers)
    }
}

/// Planted quantities, kept for oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub weeks: Vec<NaiveDate>,
    pub num_attributes: usize,
    /// `[group][week * C + attribute]`.
    pub affinity: Vec<Vec<f64>>,
    /// Appeal per catalog product, catalog order.
    pub appeal: Vec<f64>,
}

impl SynthTruth {
    pub fn affinity(&self, group: usize, week: usize, attribute: usize) -> f64 {
        self.affinity[group][week * self.num_attributes + attribute]
    }

    /// `(follower, driver)` series of one group, aligned by `lag`.
    pub fn lagged_pair(&self, group: usize, follower: usize, driver: usize, lag: usize) -> (Vec<f64>, Vec<f64>) {
        (lag..self.weeks.len())
            .map(|w| (self.affinity(group, w, follower), self.affinity(group, w - lag, driver)))
            .unzip()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["group", "attribute", "week", "affinity"])?;
        for (g, values) in self.affinity.iter().enumerate() {
            for (wk, monday) in self.weeks.iter().enumerate() {
                for a in 0..self.num_attributes {
                    w.write_record([g.to_string(), a.to_string(), monday.to_string(), values[wk * self.num_attributes + a].to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub catalog: Catalog,
    pub log: InteractionLog,
    pub vocabulary: Vocabulary,
    pub truth: SynthTruth,
    /// Active weeks per product (catalog order) and the groups it is shown to.
    pub schedule: Vec<(std::ops::Range<usize>, Vec<usize>)>,
}

pub const TRUTH_FILE: &str = "truth.csv";
pub const APPEAL_FILE: &str = "appeal.csv";
pub const SYNTH_CONFIG_FILE: &str = "synth.json";

const ATTRIBUTE_WORDS: [&str; 24] = [
    "floral", "denim", "striped", "leather", "knit", "silk", "plaid", "linen", "suede", "lace", "velvet", "cotton",
    "sequin", "mesh", "corduroy", "satin", "tweed", "fleece", "chiffon", "wool", "canvas", "jersey", "paisley", "polka",
];

fn attribute_word(a: usize) -> String {
    ATTRIBUTE_WORDS.get(a).map_or_else(|| format!("attr{a}"), |w| w.to_string())
}

fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// AR(1) series with unit stationary variance.
fn ar1(rng: &mut ChaCha8Rng, len: usize, rho: f64) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = std.sample(rng);
    (0..len)
        .map(|_| {
            let v = x;
            x = rho * x + innovation * std.sample(rng);
            v
        })
        .collect()
}

/// Affinity panels, one row-major `weeks x C` block per group.
fn latent_affinity(config: &SynthConfig, base: &[f64]) -> Vec<Vec<f64>> {
    let (c, weeks) = (config.num_attributes, config.weeks);
    let lag = config.lag;
    (0..config.num_groups)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 1000 + g as u64));
            // Extra warm-up weeks so lagged drivers exist from week 0.
            let len = weeks + lag;
            let mut u: Vec<Vec<f64>> = (0..c)
                .map(|a| {
                    let rho = if a < config.num_drivers { config.driver_autocorrelation } else { config.trend_autocorrelation };
                    ar1(&mut rng, len, rho)
                })
                .collect();
            for f in 0..c {
                if let Some(d) = config.driver_of(f) {
                    let own = (1.0 - config.coupling * config.coupling).sqrt();
                    let mixed: Vec<f64> = (0..len)
                        .map(|t| {
                            let lead = if t >= lag { u[d][t - lag] } else { 0.0 };
                            config.coupling * lead + own * u[f][t]
                        })
                        .collect();
                    u[f] = mixed;
                }
            }
            let phase: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let white = Normal::new(0.0, 1.0).expect("unit normal");
            let mut out = vec![0.0; weeks * c];
            for w in 0..weeks {
                for a in 0..c {
                    let season = config.seasonal_amplitude * (2.0 * PI * w as f64 / 52.0 + phase[a]).sin();
                    out[w * c + a] =
                        base[a] + season + config.trend_scale * u[a][w + lag] + config.noise * white.sample(&mut rng);
                }
            }
            out
        })
        .collect()
}

/// Generates a complete dataset. Identical configs give identical output.
pub fn simulate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let c = config.num_attributes;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 1));
    let base: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let affinity = latent_affinity(config, &base);

    let v = config.feature_dim;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let embedding: Vec<Vec<f64>> = (0..c).map(|_| (0..v).map(|_| std.sample(&mut rng) / (v as f64).sqrt()).collect()).collect();
    let appeal_dir: Vec<f64> = (0..v).map(|_| std.sample(&mut rng) / (v as f64).sqrt()).collect();
    let offset: Vec<f64> = (0..v).map(|_| std.sample(&mut rng) / (v as f64).sqrt()).collect();

    let total = config.num_established + config.num_new;
    let mut drafts = Vec::with_capacity(total);
    for i in 0..total {
        let established = i < config.num_established;
        let count = rng.gen_range(1..=config.max_attributes_per_product);
        let mut attrs: Vec<usize> = sample(&mut rng, c, count).into_vec();
        attrs.sort_unstable();
        let appeal = config.appeal_scale * std.sample(&mut rng);
        let visual: Vec<f64> = (0..v)
            .map(|j| {
                let attr: f64 = attrs.iter().map(|&a| embedding[a][j]).sum();
                2.0 * offset[j] + attr + appeal * appeal_dir[j] + config.visual_noise * std.sample(&mut rng) / (v as f64).sqrt()
            })
            .collect();
        let adjective = {
            let noisy = appeal + 0.5 * std.sample(&mut rng);
            if noisy > 0.5 {
                "stunning"
            } else if noisy < -0.5 {
                "plain"
            } else {
                "casual"
            }
        };
        let caption = format!(
            "A {adjective} {} piece.",
            attrs.iter().map(|&a| attribute_word(a)).collect::<Vec<_>>().join(" and ")
        );
        let (weeks, groups) = if established {
            let start = rng.gen_range(0..=config.weeks - config.established_weeks);
            (start..start + config.established_weeks, (0..config.num_groups).collect())
        } else {
            let start = rng.gen_range(config.n..=config.weeks - config.k);
            (start..start + config.k, vec![rng.gen_range(0..config.num_groups)])
        };
        drafts.push((format!("{}{i:05}", if established { "e" } else { "n" }), attrs, visual, caption, appeal, weeks, groups));
    }

    let words: BTreeSet<String> = drafts.iter().flat_map(|d| crate::data::text::tokenize(&d.3)).collect();
    let vocabulary = Vocabulary::from_words(words);
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        num_attributes: c,
        num_groups: config.num_groups,
        feature_dim: v,
        spatial: None,
        vocab_size: vocabulary.size(),
        t_max: config.max_attributes_per_product,
        start_date: config.start_date,
        end_date: config.end_date(),
    };
    let products: Vec<ProductRecord> = drafts
        .iter()
        .map(|d| ProductRecord {
            product_id: d.0.clone(),
            attribute_ids: d.1.clone(),
            visual: VisualFeature::Vector(d.2.clone()),
            caption_tokens: vocabulary.encode(&d.3, CAPTION_LEN).into_iter().filter(|&t| t != 0).collect(),
        })
        .collect();
    let catalog = Catalog::new(manifest, products)?;
    let schedule: Vec<_> = drafts.iter().map(|d| (d.5.clone(), d.6.clone())).collect();
    let appeal: Vec<f64> = drafts.iter().map(|d| d.4).collect();

    // Active products per (group, week).
    let mut active = vec![vec![Vec::new(); config.weeks]; config.num_groups];
    for (p, (weeks, groups)) in schedule.iter().enumerate() {
        for &g in groups {
            for w in weeks.clone() {
                active[g][w].push(p);
            }
        }
    }
    let per_group: Vec<Vec<InteractionRecord>> = (0..config.num_groups)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 2000 + g as u64));
            let users: Vec<String> = (0..config.users_per_group).map(|u| format!("g{g}u{u:04}")).collect();
            let per_day = (config.interactions_per_user_day > 0.0).then(|| Poisson::new(config.interactions_per_user_day).expect("positive rate"));
            let mut out = Vec::new();
            for w in 0..config.weeks {
                let products = &active[g][w];
                if products.is_empty() {
                    continue;
                }
                let prob: Vec<f64> = products
                    .iter()
                    .map(|&p| {
                        let attrs = &catalog.products()[p].attribute_ids;
                        let z: f64 = attrs.iter().map(|&a| affinity[g][w * c + a]).sum::<f64>() / attrs.len() as f64;
                        logistic(appeal[p] + z)
                    })
                    .collect();
                for d in 0..7 {
                    let day = config.start_date + Duration::days((w * 7 + d) as i64);
                    for user in &users {
                        let m = per_day.map_or(0, |dist| dist.sample(&mut rng) as usize);
                        for _ in 0..m {
                            let j = rng.gen_range(0..products.len());
                            let positive = rng.gen_bool(prob[j]);
                            out.push(InteractionRecord {
                                user_id: user.clone(),
                                product_id: catalog.products()[products[j]].product_id.clone(),
                                group_id: g,
                                day,
                                polarity: if positive { Polarity::Positive } else { Polarity::Negative },
                            });
                        }
                    }
                }
            }
            out
        })
        .collect();
    let log = InteractionLog::new(per_group.into_iter().flatten().collect());
    let truth = SynthTruth {
        weeks: (0..config.weeks).map(|w| config.start_date + Duration::weeks(w as i64)).collect(),
        num_attributes: c,
        affinity,
        appeal,
    };
    Ok(SynthDataset {
        config: config.clone(),
        catalog,
        log,
        vocabulary,
        truth,
        schedule,
    })
}

impl SynthDataset {
    /// Writes every dataset file plus `truth.csv`, `appeal.csv` and `synth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_interactions(&dir.join(INTERACTIONS_FILE), &self.log)?;
        write_catalog(dir, &self.catalog)?;
        self.vocabulary.write(&dir.join(VOCAB_FILE))?;
        self.truth.write_csv(&dir.join(TRUTH_FILE))?;
        let mut w = csv::Writer::from_path(dir.join(APPEAL_FILE))?;
        w.write_record(["product_id", "appeal"])?;
        for (p, a) in self.catalog.products().iter().zip(&self.truth.appeal) {
            w.write_record([p.product_id.clone(), a.to_string()])?;
        }
        w.flush()?;
        fs::write(dir.join(SYNTH_CONFIG_FILE), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }
}
