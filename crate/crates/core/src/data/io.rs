//! On-disk dataset layout.
//!
//! ```text
//! interactions.csv   user_id,product_id,group_id,date,polarity(+|-)
//! catalog.csv        product_id,attributes(;-separated),caption(space-separated ids)
//! features.bin       little-endian f64 visual features, catalog row order
//! dataset.json       DatasetManifest
//! vocab.txt          one token per line, line number = id, line 0 = <pad>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Catalog, DatasetManifest, InteractionLog, InteractionRecord, ProductRecord, VisualFeature};
use crate::error::{Error, Result};

pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const CATALOG_FILE: &str = "catalog.csv";
pub const FEATURES_FILE: &str = "features.bin";
pub const MANIFEST_FILE: &str = "dataset.json";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn write_interactions(path: &Path, log: &InteractionLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &log.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_interactions(path: &Path) -> Result<InteractionLog> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r
        .deserialize::<InteractionRecord>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(InteractionLog::new(records))
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogRow {
    product_id: String,
    attributes: String,
    caption: String,
}

fn join<T: ToString>(items: &[T], sep: &str) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

fn parse_list(field: &str, sep: char, what: &str, product: &str) -> Result<Vec<usize>> {
    field
        .split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::invalid(format!("product {product}: bad {what} `{s}`")))
        })
        .collect()
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    m.validate()?;
    Ok(m)
}

/// Writes `catalog.csv`, `features.bin` and `dataset.json` into `dir`.
pub fn write_catalog(dir: &Path, catalog: &Catalog) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(CATALOG_FILE))?;
    let mut features = Vec::new();
    for p in catalog.products() {
        w.serialize(CatalogRow {
            product_id: p.product_id.clone(),
            attributes: join(&p.attribute_ids, ";"),
            caption: join(&p.caption_tokens, " "),
        })?;
        for v in p.visual.raw() {
            features.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.flush()?;
    fs::write(dir.join(FEATURES_FILE), features)?;
    write_manifest(&dir.join(MANIFEST_FILE), &catalog.manifest)
}

pub fn read_catalog(dir: &Path) -> Result<Catalog> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let bytes = fs::read(dir.join(FEATURES_FILE))?;
    let row_len = match manifest.spatial {
        Some([h, w]) => h * w * manifest.feature_dim,
        None => manifest.feature_dim,
    };
    let mut r = csv::Reader::from_path(dir.join(CATALOG_FILE))?;
    let mut products = Vec::new();
    for (i, row) in r.deserialize::<CatalogRow>().enumerate() {
        let row = row?;
        let start = i * row_len * 8;
        let raw = bytes.get(start..start + row_len * 8).ok_or_else(|| {
            Error::invalid(format!("{FEATURES_FILE}: missing features for row {i}"))
        })?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let visual = match manifest.spatial {
            Some([height, width]) => VisualFeature::Spatial {
                height,
                width,
                channels: manifest.feature_dim,
                data: values,
            },
            None => VisualFeature::Vector(values),
        };
        products.push(ProductRecord {
            attribute_ids: parse_list(&row.attributes, ';', "attribute", &row.product_id)?,
            caption_tokens: parse_list(&row.caption, ' ', "token", &row.product_id)?,
            product_id: row.product_id,
            visual,
        });
    }
    if bytes.len() != products.len() * row_len * 8 {
        return Err(Error::invalid(format!(
            "{FEATURES_FILE}: {} bytes for {} products of {row_len} values",
            bytes.len(),
            products.len()
        )));
    }
    Catalog::new(manifest, products)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::{manifest, product};
    use crate::data::Polarity;
    use chrono::NaiveDate;

    #[test]
    fn catalog_and_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::new(manifest(4, 2), vec![product("a", &[0, 2]), product("b", &[3])]).unwrap();
        write_catalog(dir.path(), &cat).unwrap();
        assert_eq!(read_catalog(dir.path()).unwrap(), cat);

        let log = InteractionLog::new(vec![InteractionRecord {
            user_id: "u1".into(),
            product_id: "a".into(),
            group_id: 1,
            day: NaiveDate::from_ymd_opt(2020, 5, 1).unwrap(),
            polarity: Polarity::Negative,
        }]);
        let path = dir.path().join(INTERACTIONS_FILE);
        write_interactions(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "user_id,product_id,group_id,date,polarity\nu1,a,1,2020-05-01,-\n");
        assert_eq!(read_interactions(&path).unwrap(), log);
    }

    #[test]
    fn truncated_features_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::new(manifest(4, 2), vec![product("a", &[0])]).unwrap();
        write_catalog(dir.path(), &cat).unwrap();
        std::fs::write(dir.path().join(FEATURES_FILE), [0u8; 4]).unwrap();
        assert!(read_catalog(dir.path()).is_err());
    }
}
