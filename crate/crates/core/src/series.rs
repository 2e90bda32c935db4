//! Weekly attribute panels and the QAR input windows cut from them.
//!
//! A panel is a `weeks x C` matrix of mean attribute popularity. One panel
//! is built per demographic group over a shared week span; a dataset
//! without groups has exactly one.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::calendar::week_start;
use crate::data::text::{fit_length, CAPTION_LEN};
use crate::data::{Catalog, PopularitySample, VisualFeature};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePanel {
    weeks: Vec<NaiveDate>,
    num_attributes: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl AttributePanel {
    /// `values` and `observed` are row-major `weeks x num_attributes`.
    /// `first_week` must be a Monday.
    pub fn new(first_week: NaiveDate, num_attributes: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if week_start(first_week) != first_week {
            return Err(Error::invalid(format!("panel start {first_week} is not a Monday")));
        }
        if num_attributes == 0 || values.is_empty() || values.len() % num_attributes != 0 || observed.len() != values.len() {
            return Err(Error::invalid(format!(
                "panel of {} values / {} mask cells does not tile {num_attributes} attributes",
                values.len(),
                observed.len()
            )));
        }
        let rows = values.len() / num_attributes;
        let weeks = (0..rows).map(|w| first_week + Duration::weeks(w as i64)).collect();
        Ok(Self {
            weeks,
            num_attributes,
            values,
            observed,
        })
    }

    pub fn weeks(&self) -> &[NaiveDate] {
        &self.weeks
    }

    pub fn num_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn get(&self, week: usize, attribute: usize) -> f64 {
        self.values[week * self.num_attributes + attribute]
    }

    pub fn is_observed(&self, week: usize, attribute: usize) -> bool {
        self.observed[week * self.num_attributes + attribute]
    }

    pub fn set(&mut self, week: usize, attribute: usize, value: f64) {
        let i = week * self.num_attributes + attribute;
        self.values[i] = value;
        self.observed[i] = true;
    }

    /// Row of the week starting on `monday`, if inside the panel.
    pub fn week_index(&self, monday: NaiveDate) -> Option<usize> {
        let first = *self.weeks.first()?;
        let days = (monday - first).num_days();
        if days < 0 || days % 7 != 0 {
            return None;
        }
        let w = (days / 7) as usize;
        (w < self.weeks.len()).then_some(w)
    }

    pub fn column(&self, attribute: usize) -> Vec<f64> {
        (0..self.num_weeks()).map(|w| self.get(w, attribute)).collect()
    }

    pub fn write_csv(&self, values_path: &Path, mask_path: &Path) -> Result<()> {
        let header: Vec<String> = std::iter::once("week".to_string())
            .chain((0..self.num_attributes).map(|c| c.to_string()))
            .collect();
        let mut vw = csv::Writer::from_path(values_path)?;
        let mut mw = csv::Writer::from_path(mask_path)?;
        vw.write_record(&header)?;
        mw.write_record(&header)?;
        for (w, week) in self.weeks.iter().enumerate() {
            let row = &self.values[w * self.num_attributes..(w + 1) * self.num_attributes];
            let mask = &self.observed[w * self.num_attributes..(w + 1) * self.num_attributes];
            vw.write_record(std::iter::once(week.to_string()).chain(row.iter().map(|v| v.to_string())))?;
            mw.write_record(std::iter::once(week.to_string()).chain(mask.iter().map(|&m| u8::from(m).to_string())))?;
        }
        vw.flush()?;
        mw.flush()?;
        Ok(())
    }

    pub fn read_csv(values_path: &Path, mask_path: &Path) -> Result<Self> {
        let (weeks, values) = read_matrix(values_path, |s| s.parse::<f64>().ok())?;
        let (mask_weeks, observed) = read_matrix(mask_path, |s| match s {
            "0" => Some(false),
            "1" => Some(true),
            _ => None,
        })?;
        if weeks != mask_weeks || values.len() != observed.len() {
            return Err(Error::invalid("panel values and mask disagree on shape"));
        }
        let first = *weeks
            .first()
            .ok_or_else(|| Error::invalid(format!("{}: empty panel", values_path.display())))?;
        let num_attributes = values.len() / weeks.len();
        let panel = Self::new(first, num_attributes, values, observed)?;
        if panel.weeks != weeks {
            return Err(Error::invalid(format!("{}: weeks are not contiguous", values_path.display())));
        }
        Ok(panel)
    }
}

fn read_matrix<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<(Vec<NaiveDate>, Vec<T>)> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    let mut weeks = Vec::new();
    let mut cells = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::invalid(format!("{}: row {i} has {} fields", path.display(), rec.len())));
        }
        let week = rec[0]
            .parse::<NaiveDate>()
            .map_err(|e| Error::invalid(format!("{}: row {i}: {e}", path.display())))?;
        weeks.push(week);
        for field in rec.iter().skip(1) {
            cells.push(
                parse(field).ok_or_else(|| Error::invalid(format!("{}: row {i}: bad cell `{field}`", path.display())))?,
            );
        }
    }
    Ok((weeks, cells))
}

/// Mean of the samples per (ISO week, attribute). Weeks run contiguously
/// from the earliest to the latest sample; cells without samples are masked.
pub fn weekly_aggregate(samples: &[(NaiveDate, usize, f64)], num_attributes: usize) -> Result<AttributePanel> {
    let first = samples.iter().map(|s| s.0).min().ok_or_else(|| Error::invalid("no samples to aggregate"))?;
    let last = samples.iter().map(|s| s.0).max().expect("non-empty");
    weekly_aggregate_span(samples, num_attributes, week_start(first), week_start(last))
}

/// As [`weekly_aggregate`] over the fixed span `first_week..=last_week`.
/// Samples outside the span are ignored.
pub fn weekly_aggregate_span(
    samples: &[(NaiveDate, usize, f64)],
    num_attributes: usize,
    first_week: NaiveDate,
    last_week: NaiveDate,
) -> Result<AttributePanel> {
    let (first_week, last_week) = (week_start(first_week), week_start(last_week));
    if last_week < first_week {
        return Err(Error::invalid("panel span ends before it starts"));
    }
    let rows = ((last_week - first_week).num_days() / 7 + 1) as usize;
    let mut sums = vec![0.0; rows * num_attributes];
    let mut counts = vec![0usize; rows * num_attributes];
    for &(day, attribute, value) in samples {
        if attribute >= num_attributes {
            return Err(Error::invalid(format!("sample attribute {attribute} >= {num_attributes}")));
        }
        let monday = week_start(day);
        if monday < first_week || monday > last_week {
            continue;
        }
        let i = ((monday - first_week).num_days() / 7) as usize * num_attributes + attribute;
        sums[i] += value;
        counts[i] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let observed = counts.iter().map(|&c| c > 0).collect();
    AttributePanel::new(first_week, num_attributes, values, observed)
}

/// Fraction of masked cells.
pub fn sparsity(panel: &AttributePanel) -> f64 {
    let masked = panel.observed.iter().filter(|&&o| !o).count();
    masked as f64 / panel.observed.len() as f64
}

/// Linear fill of interior gaps, nearest-value hold at the edges.
pub fn interpolate(panel: &AttributePanel) -> Result<AttributePanel> {
    let mut out = panel.clone();
    let rows = panel.num_weeks();
    for c in 0..panel.num_attributes {
        let known: Vec<usize> = (0..rows).filter(|&w| panel.is_observed(w, c)).collect();
        let (&first, &last) = match (known.first(), known.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::invalid(format!("attribute {c} has no observed week to interpolate from"))),
        };
        for w in 0..first {
            out.set(w, c, panel.get(first, c));
        }
        for w in last + 1..rows {
            out.set(w, c, panel.get(last, c));
        }
        for pair in known.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let (vlo, vhi) = (panel.get(lo, c), panel.get(hi, c));
            for w in lo + 1..hi {
                let t = (w - lo) as f64 / (hi - lo) as f64;
                out.set(w, c, vlo + (vhi - vlo) * t);
            }
        }
    }
    Ok(out)
}

/// QAR inputs for one forecast: `a` is `n x t_max` (target channels in
/// ascending attribute order, zero-padded), `x` is `n x C` with the target
/// columns zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QarWindow {
    pub n: usize,
    pub t_max: usize,
    pub num_attributes: usize,
    pub a: Vec<f64>,
    pub x: Vec<f64>,
    pub target_slots: Vec<usize>,
}

/// Cuts the `n` weeks strictly before `end_week`.
pub fn build_window(
    panel: &AttributePanel,
    target_attrs: &[usize],
    end_week: NaiveDate,
    n: usize,
    t_max: usize,
) -> Result<QarWindow> {
    let mut targets = target_attrs.to_vec();
    targets.sort_unstable();
    targets.dedup();
    if targets.len() > t_max {
        return Err(Error::invalid(format!("{} target attributes exceed t_max {t_max}", targets.len())));
    }
    let c = panel.num_attributes;
    if let Some(&bad) = targets.iter().find(|&&a| a >= c) {
        return Err(Error::invalid(format!("target attribute {bad} >= {c}")));
    }
    if n == 0 {
        return Err(Error::invalid("window length n must be positive"));
    }
    let end = week_start(end_week);
    let first = panel.weeks[0];
    let history = (end - first).num_days() / 7;
    if history < n as i64 || end - Duration::weeks(1) > *panel.weeks.last().expect("non-empty") {
        return Err(Error::invalid(format!(
            "insufficient history: {n} weeks before {end} not inside panel {first}..={}",
            panel.weeks.last().expect("non-empty")
        )));
    }
    let start = history as usize - n;
    let mut a = vec![0.0; n * t_max];
    let mut x = vec![0.0; n * c];
    for r in 0..n {
        let w = start + r;
        for (ch, &attr) in targets.iter().enumerate() {
            a[r * t_max + ch] = panel.get(w, attr);
        }
        for attr in 0..c {
            x[r * c + attr] = panel.get(w, attr);
        }
        for &attr in &targets {
            x[r * c + attr] = 0.0;
        }
    }
    Ok(QarWindow {
        n,
        t_max,
        num_attributes: c,
        a,
        x,
        target_slots: targets,
    })
}

/// Static product and context features of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleFeatures {
    pub visual: VisualFeature,
    /// Exactly [`CAPTION_LEN`] token ids, 0-padded.
    pub caption: Vec<usize>,
    /// `t_max` categorical slots: attribute `a` occupies slot value `a + 1`, 0 is padding.
    pub slots: Vec<usize>,
    /// Date fed to the temporal embedding: Monday of the first target week.
    pub date: NaiveDate,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub product_id: String,
    pub group_id: usize,
    pub target_week: NaiveDate,
    pub features: ExampleFeatures,
    pub window: QarWindow,
    pub target: Vec<f64>,
}

/// Counts of candidate examples that were not emitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleStats {
    pub emitted: usize,
    pub missing_product: usize,
    pub insufficient_history: usize,
    pub incomplete_target: usize,
}

/// Slot vector for a product's attributes.
pub fn attribute_slots(attributes: &[usize], t_max: usize) -> Vec<usize> {
    let mut slots: Vec<usize> = attributes.iter().map(|a| a + 1).collect();
    slots.sort_unstable();
    slots.resize(t_max, 0);
    slots
}

/// Per-group `(date, attribute, value)` triples: each daily product
/// popularity value counts towards every attribute of the product.
pub fn attribute_samples(samples: &[PopularitySample], catalog: &Catalog) -> Vec<Vec<(NaiveDate, usize, f64)>> {
    let mut per_group = vec![Vec::new(); catalog.manifest.group_slots()];
    for s in samples {
        if let (Some(p), Some(bucket)) = (catalog.get(&s.product_id), per_group.get_mut(s.group_id)) {
            for &a in &p.attribute_ids {
                bucket.push((s.day, a, s.value));
            }
        }
    }
    per_group
}

/// One interpolated panel per group, all over the manifest's week span.
pub fn build_panels(samples: &[PopularitySample], catalog: &Catalog) -> Result<Vec<AttributePanel>> {
    let m = &catalog.manifest;
    attribute_samples(samples, catalog)
        .iter()
        .enumerate()
        .map(|(g, s)| {
            let raw = weekly_aggregate_span(s, m.num_attributes, m.start_date, m.end_date)?;
            interpolate(&raw).map_err(|e| Error::invalid(format!("group {g}: {e}")))
        })
        .collect()
}

/// One example per (product, group, week) whose popularity is defined in
/// each of the `k` weeks starting there. Targets are weekly means of daily
/// popularity; windows come from the group's panel.
pub fn make_examples(
    catalog: &Catalog,
    panels: &[AttributePanel],
    samples: &[PopularitySample],
    n: usize,
    k: usize,
) -> Result<(Vec<TrainingExample>, ExampleStats)> {
    if k == 0 {
        return Err(Error::invalid("horizon k must be at least 1"));
    }
    let t_max = catalog.manifest.t_max;
    let mut weekly: BTreeMap<(String, usize), BTreeMap<NaiveDate, (f64, usize)>> = BTreeMap::new();
    let mut missing: HashMap<&str, ()> = HashMap::new();
    for s in samples {
        if catalog.get(&s.product_id).is_none() {
            missing.insert(&s.product_id, ());
            continue;
        }
        let cell = weekly
            .entry((s.product_id.clone(), s.group_id))
            .or_default()
            .entry(week_start(s.day))
            .or_insert((0.0, 0));
        cell.0 += s.value;
        cell.1 += 1;
    }
    let mut stats = ExampleStats {
        missing_product: missing.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for ((product_id, group), weeks) in &weekly {
        let product = catalog.get(product_id).expect("filtered above");
        let panel = panels
            .get(*group)
            .ok_or_else(|| Error::invalid(format!("no panel for group {group}")))?;
        for &start in weeks.keys() {
            let target: Option<Vec<f64>> = (0..k)
                .map(|h| {
                    weeks
                        .get(&(start + Duration::weeks(h as i64)))
                        .map(|&(sum, count)| sum / count as f64)
                })
                .collect();
            let Some(target) = target else {
                stats.incomplete_target += 1;
                continue;
            };
            let window = match build_window(panel, &product.attribute_ids, start, n, t_max) {
                Ok(w) => w,
                Err(_) => {
                    stats.insufficient_history += 1;
                    continue;
                }
            };
            out.push(TrainingExample {
                product_id: product_id.clone(),
                group_id: *group,
                target_week: start,
                features: ExampleFeatures {
                    visual: product.visual.clone(),
                    caption: fit_length(&product.caption_tokens, CAPTION_LEN),
                    slots: attribute_slots(&product.attribute_ids, t_max),
                    date: start,
                    group: *group,
                },
                window,
                target,
            });
        }
    }
    stats.emitted = out.len();
    let skipped = stats.missing_product + stats.insufficient_history + stats.incomplete_target;
    if skipped > 0 {
        warn!(
            "skipped example candidates: {} unknown products, {} short histories, {} incomplete targets",
            stats.missing_product, stats.insufficient_history, stats.incomplete_target
        );
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::{manifest, product};

    fn monday(offset_weeks: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, 4).unwrap() + Duration::weeks(offset_weeks)
    }

    #[test]
    fn aggregation_means_and_masks() {
        let p = weekly_aggregate(&[(monday(0), 1, 0.4)], 2).unwrap();
        assert_eq!(p.get(0, 1), 0.4);
        assert!(!p.is_observed(0, 0));
        let p = weekly_aggregate(&[(monday(0), 0, 0.2), (monday(0) + Duration::days(3), 0, 0.6)], 1).unwrap();
        assert!((p.get(0, 0) - 0.4).abs() < 1e-15);
        let p = weekly_aggregate(&[(monday(0), 0, 0.1), (monday(2), 1, 0.3)], 2).unwrap();
        assert_eq!(p.num_weeks(), 3);
        assert!(!p.is_observed(1, 0) && !p.is_observed(1, 1));
        assert!(weekly_aggregate(&[], 2).is_err());
    }

    #[test]
    fn sparsity_counts_masked_cells() {
        let full = AttributePanel::new(monday(0), 3, vec![0.0; 30], vec![true; 30]).unwrap();
        assert_eq!(sparsity(&full), 0.0);
        let empty = AttributePanel::new(monday(0), 3, vec![0.0; 30], vec![false; 30]).unwrap();
        assert_eq!(sparsity(&empty), 1.0);
        let mut mask = vec![true; 30];
        mask[0] = false;
        mask[7] = false;
        mask[29] = false;
        let some = AttributePanel::new(monday(0), 3, vec![0.0; 30], mask).unwrap();
        assert!((sparsity(&some) - 0.1).abs() < 1e-15);
    }

    fn column(values: &[Option<f64>]) -> AttributePanel {
        AttributePanel::new(
            monday(0),
            1,
            values.iter().map(|v| v.unwrap_or(0.0)).collect(),
            values.iter().map(Option::is_some).collect(),
        )
        .unwrap()
    }

    #[test]
    fn interpolation_fills_and_holds() {
        let filled = |v: &[Option<f64>]| interpolate(&column(v)).unwrap().column(0);
        assert_eq!(filled(&[Some(1.0), None, Some(3.0)]), vec![1.0, 2.0, 3.0]);
        assert_eq!(filled(&[None, Some(5.0), Some(5.0)]), vec![5.0, 5.0, 5.0]);
        assert_eq!(filled(&[Some(0.0), None, None, Some(3.0)]), vec![0.0, 1.0, 2.0, 3.0]);
        let once = interpolate(&column(&[None, Some(2.0), None, None, Some(8.0), None])).unwrap();
        assert!(once.observed().iter().all(|&o| o));
        assert_eq!(interpolate(&once).unwrap(), once);
        let err = interpolate(&AttributePanel::new(monday(0), 2, vec![0.0; 4], vec![true, false, true, false]).unwrap());
        assert!(err.unwrap_err().to_string().contains("attribute 1"));
    }

    fn constant_columns(weeks: usize, c: usize) -> AttributePanel {
        let values = (0..weeks).flat_map(|_| (0..c).map(|j| (j + 1) as f64)).collect();
        AttributePanel::new(monday(0), c, values, vec![true; weeks * c]).unwrap()
    }

    #[test]
    fn window_slices_pads_and_zeroes() {
        let panel = constant_columns(20, 4);
        let w = build_window(&panel, &[3, 1], monday(15), 12, 3).unwrap();
        assert_eq!(w.target_slots, vec![1, 3]);
        for r in 0..12 {
            assert_eq!(&w.a[r * 3..r * 3 + 3], &[2.0, 4.0, 0.0]);
            assert_eq!(&w.x[r * 4..r * 4 + 4], &[1.0, 0.0, 3.0, 0.0]);
        }
        let exact = build_window(&panel, &[0, 2], monday(12), 12, 2).unwrap();
        assert!(exact.a.iter().all(|&v| v != 0.0));
        assert!(build_window(&panel, &[0], monday(11), 12, 2).is_err());
        assert!(build_window(&panel, &[0], monday(22), 12, 2).is_err());
    }

    #[test]
    fn window_rows_are_the_weeks_before_end() {
        let values: Vec<f64> = (0..10).map(|w| w as f64).collect();
        let panel = AttributePanel::new(monday(0), 1, values, vec![true; 10]).unwrap();
        let w = build_window(&panel, &[0], monday(7), 3, 1).unwrap();
        assert_eq!(w.a, vec![4.0, 5.0, 6.0]);
    }

    fn sample(product: &str, group: usize, day: NaiveDate, value: f64) -> PopularitySample {
        PopularitySample {
            product_id: product.into(),
            group_id: group,
            day,
            value,
        }
    }

    #[test]
    fn examples_enumerate_product_group_weeks() {
        let cat = Catalog::new(manifest(4, 1), vec![product("p", &[2])]).unwrap();
        let panels = vec![constant_columns(30, 4)];
        let one = [sample("p", 0, monday(20) + Duration::days(2), 0.3)];
        let (ex, stats) = make_examples(&cat, &panels, &one, 12, 1).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(stats.emitted, 1);
        assert_eq!(ex[0].target, vec![0.3]);
        assert_eq!(ex[0].window.a.len(), 12 * 3);
        assert_eq!(ex[0].features.slots, vec![3, 0, 0]);
        assert_eq!(ex[0].features.date, monday(20));
        assert_eq!(ex[0].features.caption.len(), CAPTION_LEN);

        let (ex, stats) = make_examples(&cat, &panels, &[sample("q", 0, monday(20), 0.3)], 12, 1).unwrap();
        assert!(ex.is_empty());
        assert_eq!(stats.missing_product, 1);

        let two = [sample("p", 0, monday(20), 0.2), sample("p", 0, monday(21), 0.4), sample("p", 0, monday(21), 0.6)];
        let (ex, stats) = make_examples(&cat, &panels, &two, 12, 2).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].target, vec![0.2, 0.5]);
        assert_eq!(stats.incomplete_target, 1);

        let early = [sample("p", 0, monday(3), 0.2)];
        assert_eq!(make_examples(&cat, &panels, &early, 12, 1).unwrap().1.insufficient_history, 1);
    }

    #[test]
    fn panel_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = weekly_aggregate(&[(monday(0), 0, 0.125), (monday(2), 1, 0.3)], 2).unwrap();
        let (v, m) = (dir.path().join("panel.csv"), dir.path().join("mask.csv"));
        p.write_csv(&v, &m).unwrap();
        assert_eq!(AttributePanel::read_csv(&v, &m).unwrap(), p);
        let head = std::fs::read_to_string(&v).unwrap();
        assert!(head.starts_with("week,0,1\n2021-01-04,0.125,0\n"));
    }
}
