use chrono::{Datelike, NaiveDate};
use muqar::data::{
    Catalog, DatasetManifest, InteractionLog, InteractionRecord, Polarity, ProductRecord,
    VisualFeature, DATASET_VERSION,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NUM_ATTRIBUTES: usize = 6;
pub const NUM_GROUPS: usize = 3;

pub fn manifest() -> DatasetManifest {
    DatasetManifest {
        version: DATASET_VERSION,
        num_attributes: NUM_ATTRIBUTES,
        num_groups: NUM_GROUPS,
        feature_dim: 1,
        spatial: None,
        vocab_size: 1,
        t_max: NUM_ATTRIBUTES,
        start_date: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
        end_date: NaiveDate::from_ymd_opt(2021, 12, 31).unwrap(),
    }
}

/// Random catalog plus log. A narrow pool of days, users and products
/// forces collisions so every counting path is exercised. Some records
/// reference products missing from the catalog.
pub fn random_case(seed: u64, max_records: usize) -> (Catalog, InteractionLog) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_products = rng.gen_range(2..12);
    let products: Vec<ProductRecord> = (0..num_products)
        .map(|i| {
            let mut attrs: Vec<usize> = (0..NUM_ATTRIBUTES).filter(|_| rng.gen_bool(0.35)).collect();
            if attrs.is_empty() {
                attrs.push(rng.gen_range(0..NUM_ATTRIBUTES));
            }
            ProductRecord {
                product_id: format!("p{i}"),
                attribute_ids: attrs,
                visual: VisualFeature::Vector(vec![1.0]),
                caption_tokens: vec![],
            }
        })
        .collect();
    let catalog = Catalog::new(manifest(), products).unwrap();
    let start = manifest().start_date;
    let days: Vec<NaiveDate> = (0..rng.gen_range(1..40))
        .map(|_| start + chrono::Duration::days(rng.gen_range(0..1095)))
        .collect();
    let num_users = rng.gen_range(1..60);
    let n = rng.gen_range(1..=max_records);
    let records = (0..n)
        .map(|_| InteractionRecord {
            user_id: format!("u{}", rng.gen_range(0..num_users)),
            product_id: format!("p{}", rng.gen_range(0..num_products + 2)),
            group_id: rng.gen_range(0..NUM_GROUPS),
            day: days[rng.gen_range(0..days.len())],
            polarity: if rng.gen_bool(0.6) {
                Polarity::Positive
            } else {
                Polarity::Negative
            },
        })
        .collect();
    (catalog, InteractionLog::new(records))
}

/// (year, season) with December rolled into the next year's winter.
pub fn season_of(d: NaiveDate) -> (i32, u32) {
    let season = match d.month() {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    };
    let year = if d.month() == 12 { d.year() + 1 } else { d.year() };
    (year, season)
}

fn attributes_of<'a>(catalog: &'a Catalog, product: &str) -> Option<&'a [usize]> {
    catalog
        .products()
        .iter()
        .find(|p| p.product_id == product)
        .map(|p| p.attribute_ids.as_slice())
}

pub fn likability(log: &InteractionLog, group: usize, product: &str, day: NaiveDate) -> Option<f64> {
    let (mut pos, mut neg) = (0u64, 0u64);
    for r in &log.records {
        if r.group_id == group && r.product_id == product && r.day == day {
            match r.polarity {
                Polarity::Positive => pos += 1,
                Polarity::Negative => neg += 1,
            }
        }
    }
    (pos + neg > 0).then(|| pos as f64 / (pos + neg) as f64)
}

pub fn reachability(
    log: &InteractionLog,
    catalog: &Catalog,
    attrs: &[usize],
    group: usize,
    season: (i32, u32),
) -> Option<f64> {
    let mut active: Vec<&str> = Vec::new();
    for r in &log.records {
        if r.group_id == group && season_of(r.day) == season && !active.contains(&r.user_id.as_str()) {
            active.push(&r.user_id);
        }
    }
    if active.is_empty() {
        return None;
    }
    let mut value = 1.0;
    for &a in attrs {
        let mut reached: Vec<&str> = Vec::new();
        for r in &log.records {
            let touches = attributes_of(catalog, &r.product_id).map_or(false, |at| at.contains(&a));
            if r.group_id == group
                && season_of(r.day) == season
                && r.polarity == Polarity::Positive
                && touches
                && !reached.contains(&r.user_id.as_str())
            {
                reached.push(&r.user_id);
            }
        }
        value *= reached.len() as f64 / active.len() as f64;
    }
    Some(value)
}

pub fn popularity(log: &InteractionLog, catalog: &Catalog, product: &str, group: usize, day: NaiveDate) -> Option<f64> {
    let attrs = attributes_of(catalog, product)?;
    let l = likability(log, group, product, day)?;
    let r = reachability(log, catalog, attrs, group, season_of(day))?;
    Some(l * r)
}

/// Every distinct (group, product, day) cell of the log.
pub fn cells(log: &InteractionLog) -> Vec<(usize, String, NaiveDate)> {
    let mut out: Vec<(usize, String, NaiveDate)> = Vec::new();
    for r in &log.records {
        let key = (r.group_id, r.product_id.clone(), r.day);
        if !out.contains(&key) {
            out.push(key);
        }
    }
    out
}

/// Bit-exact comparison of the library against the oracle on every cell
/// and every (group, season, attribute prefix). Returns the number of
/// values compared.
pub fn compare(catalog: &Catalog, log: &InteractionLog) -> Result<usize, String> {
    use muqar::data::calendar::SeasonKey;
    use muqar::data::PopularityIndex;
    let index = PopularityIndex::build(log, catalog);
    let mut checked = 0;
    for (g, p, t) in cells(log) {
        let lib_l = index.likability(g, &p, t).ok();
        let lib_p = index.popularity(&p, g, t).ok();
        let (ora_l, ora_p) = (likability(log, g, &p, t), popularity(log, catalog, &p, g, t));
        if lib_l.map(f64::to_bits) != ora_l.map(f64::to_bits) {
            return Err(format!("likability {g} {p} {t}: {lib_l:?} vs {ora_l:?}"));
        }
        if lib_p.map(f64::to_bits) != ora_p.map(f64::to_bits) {
            return Err(format!("popularity {g} {p} {t}: {lib_p:?} vs {ora_p:?}"));
        }
        let attrs: Vec<usize> = (0..NUM_ATTRIBUTES).collect();
        for len in 0..=attrs.len() {
            let lib_r = index.reachability(&attrs[..len], g, SeasonKey::of(t)).ok();
            let ora_r = reachability(log, catalog, &attrs[..len], g, season_of(t));
            if lib_r.map(f64::to_bits) != ora_r.map(f64::to_bits) {
                return Err(format!("reachability {g} {t} {len}: {lib_r:?} vs {ora_r:?}"));
            }
        }
        checked += 3 + attrs.len();
    }
    Ok(checked)
}
