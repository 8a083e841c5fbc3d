//! Dropping invalid attributes and records, and imputing the remaining gaps.
//!
//! Decisions are made in a fixed order:
//!
//! 1. attributes whose missing ratio over all records exceeds
//!    `max_missing_ratio_attribute` are dropped;
//! 2. records whose missing ratio over the kept attributes exceeds
//!    `max_missing_ratio_record` are dropped;
//! 3. kept attributes that are constant (or have no observed value) among the
//!    surviving records are dropped, and step 2 is re-evaluated against the
//!    smaller attribute set until nothing changes;
//! 4. remaining gaps are filled with the median (numeric) or mode
//!    (categorical) of the surviving records.
//!
//! Step 3 makes the result a fixed point, so cleaning a cleaned dataset
//! changes nothing.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, AttributeKind, AttributeSchema, Cell, Dataset, RawRecord};
use crate::error::{Error, Result};
use crate::numfmt;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Imputation {
    /// Median for numeric attributes, mode for categorical ones.
    #[default]
    MedianMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningPolicy {
    pub max_missing_ratio_attribute: f64,
    pub max_missing_ratio_record: f64,
    pub drop_constant_attributes: bool,
    pub imputation: Imputation,
}

impl Default for CleaningPolicy {
    fn default() -> Self {
        CleaningPolicy {
            max_missing_ratio_attribute: 0.6,
            max_missing_ratio_record: 0.5,
            drop_constant_attributes: true,
            imputation: Imputation::MedianMode,
        }
    }
}

impl CleaningPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            (
                "max_missing_ratio_attribute",
                self.max_missing_ratio_attribute,
            ),
            ("max_missing_ratio_record", self.max_missing_ratio_record),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Policy(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DropReason {
    MissingRatio(#[serde(with = "numfmt::text")] f64),
    Constant,
    NoObservedValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedAttribute {
    pub name: String,
    pub reason: DropReason,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CleaningReport {
    pub dropped_attributes: Vec<DroppedAttribute>,
    pub dropped_records: usize,
    pub record_drop_reasons: BTreeMap<String, usize>,
    /// Imputed cell count per surviving attribute, in output schema order.
    pub imputed_cells: Vec<(String, usize)>,
}

impl CleaningReport {
    pub fn is_empty(&self) -> bool {
        self.dropped_attributes.is_empty()
            && self.dropped_records == 0
            && self.imputed_cells.iter().all(|(_, n)| *n == 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FillValue {
    Number(#[serde(with = "numfmt::text")] f64),
    Category(String),
}

impl FillValue {
    fn to_cell(&self) -> Cell {
        match self {
            FillValue::Number(v) => Cell::Number(*v),
            FillValue::Category(s) => Cell::Text(s.clone()),
        }
    }
}

/// Drop decisions and fill values fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningModel {
    source_schema: AttributeSchema,
    kept: Vec<usize>,
    fills: Vec<FillValue>,
    dropped_attributes: Vec<DroppedAttribute>,
    #[serde(with = "numfmt::text")]
    max_missing_ratio_record: f64,
    output_schema: AttributeSchema,
}

impl CleaningModel {
    pub fn source_schema(&self) -> &AttributeSchema {
        &self.source_schema
    }

    pub fn output_schema(&self) -> &AttributeSchema {
        &self.output_schema
    }

    /// Indices (into the source schema) of the surviving attributes.
    pub fn kept_attributes(&self) -> &[usize] {
        &self.kept
    }

    pub fn fills(&self) -> &[FillValue] {
        &self.fills
    }

    pub fn dropped_attributes(&self) -> &[DroppedAttribute] {
        &self.dropped_attributes
    }

    /// Checks internal consistency; used when loading a persisted model.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SchemaMismatch(m));
        if self.kept.len() != self.fills.len() {
            return bad("cleaning model: kept/fill length mismatch".into());
        }
        if self.kept.len() + self.dropped_attributes.len() != self.source_schema.len() {
            return bad("cleaning model: kept + dropped != source attributes".into());
        }
        if self.kept.windows(2).any(|w| w[0] >= w[1]) {
            return bad("cleaning model: kept attributes not strictly increasing".into());
        }
        if self.source_schema.project(&self.kept)? != self.output_schema {
            return bad("cleaning model: output schema does not match kept attributes".into());
        }
        for (&i, fill) in self.kept.iter().zip(&self.fills) {
            let kind = self.source_schema.attributes()[i].kind;
            let ok = matches!(
                (kind, fill),
                (AttributeKind::Numeric, FillValue::Number(v)) if v.is_finite()
            ) || matches!(
                (kind, fill),
                (AttributeKind::Categorical, FillValue::Category(_))
            );
            if !ok {
                return bad(format!(
                    "cleaning model: fill value kind mismatch at attribute {i}"
                ));
            }
        }
        Ok(())
    }
}

fn missing_ratio(record: &RawRecord, attrs: &[usize]) -> f64 {
    if attrs.is_empty() {
        return 0.0;
    }
    let missing = attrs
        .iter()
        .filter(|&&a| record.values[a].is_missing())
        .count();
    missing as f64 / attrs.len() as f64
}

fn surviving_records(ds: &Dataset, kept: &[usize], max_ratio: f64) -> Vec<usize> {
    ds.records()
        .iter()
        .enumerate()
        .filter(|(_, r)| missing_ratio(r, kept) <= max_ratio)
        .map(|(i, _)| i)
        .collect()
}

/// Median of the observed values; mean of the two middle values for even counts.
fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Most frequent category; ties go to the lexicographically smallest.
fn mode<'a>(values: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (v, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v.to_string())
}

enum ColumnStatus {
    Ok,
    Constant,
    NoObserved,
}

fn column_status(ds: &Dataset, attr: usize, rows: &[usize]) -> ColumnStatus {
    let mut observed = rows
        .iter()
        .map(|&r| &ds.records()[r].values[attr])
        .filter(|c| !c.is_missing());
    let Some(first) = observed.next() else {
        return ColumnStatus::NoObserved;
    };
    if observed.all(|c| c == first) {
        ColumnStatus::Constant
    } else {
        ColumnStatus::Ok
    }
}

pub fn fit_cleaning(ds: &Dataset, policy: &CleaningPolicy) -> Result<CleaningModel> {
    policy.validate()?;
    if ds.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let schema = ds.schema();
    let n = ds.len() as f64;

    let mut dropped: Vec<Option<DropReason>> = (0..schema.len())
        .into_par_iter()
        .map(|a| {
            let ratio = ds.column(a).filter(|c| c.is_missing()).count() as f64 / n;
            (ratio > policy.max_missing_ratio_attribute).then_some(DropReason::MissingRatio(ratio))
        })
        .collect();

    let (kept, rows) = loop {
        let kept: Vec<usize> = (0..schema.len())
            .filter(|&a| dropped[a].is_none())
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyAfterCleaning("attribute"));
        }
        let rows = surviving_records(ds, &kept, policy.max_missing_ratio_record);
        if rows.is_empty() {
            return Err(Error::EmptyAfterCleaning("record"));
        }
        let statuses: Vec<(usize, ColumnStatus)> = kept
            .par_iter()
            .map(|&a| (a, column_status(ds, a, &rows)))
            .collect();
        let mut changed = false;
        for (a, status) in statuses {
            let reason = match status {
                ColumnStatus::NoObserved => DropReason::NoObservedValues,
                ColumnStatus::Constant if policy.drop_constant_attributes => DropReason::Constant,
                _ => continue,
            };
            dropped[a] = Some(reason);
            changed = true;
        }
        if !changed {
            break (kept, rows);
        }
    };

    let fills: Vec<FillValue> = kept
        .par_iter()
        .map(|&a| {
            let observed = rows
                .iter()
                .map(|&r| &ds.records()[r].values[a])
                .filter(|c| !c.is_missing());
            match schema.attributes()[a].kind {
                AttributeKind::Numeric => FillValue::Number(
                    median(observed.filter_map(Cell::as_number).collect()).expect("observed"),
                ),
                AttributeKind::Categorical => {
                    FillValue::Category(mode(observed.filter_map(Cell::as_text)).expect("observed"))
                }
            }
        })
        .collect();

    let dropped_attributes = dropped
        .into_iter()
        .enumerate()
        .filter_map(|(a, r)| {
            r.map(|reason| DroppedAttribute {
                name: schema.attributes()[a].name.clone(),
                reason,
            })
        })
        .collect();
    let output_schema = schema.project(&kept)?;
    Ok(CleaningModel {
        source_schema: schema.clone(),
        kept,
        fills,
        dropped_attributes,
        max_missing_ratio_record: policy.max_missing_ratio_record,
        output_schema,
    })
}

fn same_shape(a: &AttributeSchema, b: &AttributeSchema) -> bool {
    let key = |x: &Attribute| (x.name.clone(), x.kind);
    a.len() == b.len()
        && a.attributes()
            .iter()
            .map(key)
            .eq(b.attributes().iter().map(key))
        && a.class_labels() == b.class_labels()
}

struct Applied {
    dataset: Dataset,
    source_rows: Vec<usize>,
    imputed: Vec<usize>,
}

fn apply_inner(ds: &Dataset, m: &CleaningModel) -> Result<Applied> {
    if !same_shape(ds.schema(), &m.source_schema) {
        return Err(Error::SchemaMismatch(
            "dataset attributes differ from those the cleaning model was fitted on".into(),
        ));
    }
    let source_rows = surviving_records(ds, &m.kept, m.max_missing_ratio_record);
    let cleaned: Vec<(RawRecord, Vec<bool>)> = source_rows
        .par_iter()
        .map(|&r| {
            let rec = &ds.records()[r];
            let mut imputed = vec![false; m.kept.len()];
            let values = m
                .kept
                .iter()
                .zip(&m.fills)
                .enumerate()
                .map(|(k, (&a, fill))| match &rec.values[a] {
                    Cell::Missing => {
                        imputed[k] = true;
                        fill.to_cell()
                    }
                    c => c.clone(),
                })
                .collect();
            (
                RawRecord {
                    values,
                    label: rec.label,
                },
                imputed,
            )
        })
        .collect();
    let mut imputed = vec![0usize; m.kept.len()];
    let mut records = Vec::with_capacity(cleaned.len());
    for (rec, flags) in cleaned {
        for (n, f) in imputed.iter_mut().zip(flags) {
            *n += f as usize;
        }
        records.push(rec);
    }
    Ok(Applied {
        dataset: Dataset::new(m.output_schema.clone(), records)?,
        source_rows,
        imputed,
    })
}

/// Replays fitted drops and imputations.
pub fn apply_cleaning(ds: &Dataset, m: &CleaningModel) -> Result<Dataset> {
    Ok(apply_inner(ds, m)?.dataset)
}

/// Like [`apply_cleaning`], also returning the source row index of every surviving record.
pub fn apply_cleaning_indexed(ds: &Dataset, m: &CleaningModel) -> Result<(Dataset, Vec<usize>)> {
    let applied = apply_inner(ds, m)?;
    Ok((applied.dataset, applied.source_rows))
}

pub fn clean(ds: &Dataset, policy: &CleaningPolicy) -> Result<(Dataset, CleaningReport)> {
    let model = fit_cleaning(ds, policy)?;
    let applied = apply_inner(ds, &model)?;
    let dropped_records = ds.len() - applied.dataset.len();
    let mut record_drop_reasons = BTreeMap::new();
    if dropped_records > 0 {
        record_drop_reasons.insert("missing_ratio".to_string(), dropped_records);
    }
    let imputed_cells = model
        .output_schema
        .attributes()
        .iter()
        .map(|a| a.name.clone())
        .zip(applied.imputed)
        .collect();
    let report = CleaningReport {
        dropped_attributes: model.dropped_attributes.clone(),
        dropped_records,
        record_drop_reasons,
        imputed_cells,
    };
    Ok((applied.dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Attribute;

    fn schema(attrs: Vec<Attribute>) -> AttributeSchema {
        AttributeSchema::with_trailing_class(attrs, "class", vec!["p".into(), "q".into()]).unwrap()
    }

    fn num(v: f64) -> Cell {
        Cell::Number(v)
    }

    fn txt(s: &str) -> Cell {
        Cell::Text(s.into())
    }

    fn rec(values: Vec<Cell>) -> RawRecord {
        RawRecord {
            values,
            label: Some(0),
        }
    }

    fn ds(attrs: Vec<Attribute>, rows: Vec<Vec<Cell>>) -> Dataset {
        Dataset::new(schema(attrs), rows.into_iter().map(rec).collect()).unwrap()
    }

    #[test]
    fn complete_dataset_is_unchanged() {
        let d = ds(
            vec![Attribute::numeric("a"), Attribute::categorical("b")],
            vec![vec![num(1.0), txt("x")], vec![num(2.0), txt("y")]],
        );
        let (out, report) = clean(&d, &CleaningPolicy::default()).unwrap();
        assert_eq!(out.records(), d.records());
        assert!(report.is_empty());
    }

    #[test]
    fn fully_missing_attribute_is_dropped() {
        let d = ds(
            vec![Attribute::numeric("a"), Attribute::numeric("gone")],
            vec![
                vec![num(1.0), Cell::Missing],
                vec![num(2.0), Cell::Missing],
                vec![num(3.0), Cell::Missing],
            ],
        );
        let policy = CleaningPolicy {
            max_missing_ratio_attribute: 0.5,
            ..Default::default()
        };
        let (out, report) = clean(&d, &policy).unwrap();
        assert_eq!(out.schema().len(), 1);
        assert_eq!(report.dropped_attributes.len(), 1);
        assert_eq!(report.dropped_attributes[0].name, "gone");
        assert_eq!(
            report.dropped_attributes[0].reason,
            DropReason::MissingRatio(1.0)
        );
    }

    #[test]
    fn numeric_median_imputation() {
        let column = [Some(1.0), Some(4.0), None, Some(10.0)];
        // sort-and-pick over the observed values
        let mut observed: Vec<f64> = column.iter().flatten().copied().collect();
        observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = observed[observed.len() / 2];
        assert_eq!(expected, 4.0);

        let d = ds(
            vec![Attribute::numeric("a"), Attribute::numeric("b")],
            column
                .iter()
                .enumerate()
                .map(|(i, v)| vec![v.map_or(Cell::Missing, num), num(i as f64)])
                .collect(),
        );
        let (out, report) = clean(&d, &CleaningPolicy::default()).unwrap();
        assert_eq!(out.records()[2].values[0], num(expected));
        assert_eq!(
            report.imputed_cells,
            vec![("a".to_string(), 1), ("b".to_string(), 0)]
        );
    }

    #[test]
    fn even_median_and_mode_tie_break() {
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(
            mode(["b", "a", "b", "a", "c"].into_iter()),
            Some("a".into())
        );
        assert_eq!(mode(["z", "y", "z"].into_iter()), Some("z".into()));
    }

    #[test]
    fn constant_and_sparse_records_dropped() {
        let d = ds(
            vec![
                Attribute::numeric("a"),
                Attribute::numeric("k"),
                Attribute::numeric("c"),
            ],
            vec![
                vec![num(1.0), num(5.0), num(0.0)],
                vec![Cell::Missing, num(5.0), Cell::Missing],
                vec![num(3.0), num(5.0), num(2.0)],
            ],
        );
        let (out, report) = clean(&d, &CleaningPolicy::default()).unwrap();
        assert_eq!(report.dropped_attributes.len(), 1);
        assert_eq!(report.dropped_attributes[0].reason, DropReason::Constant);
        assert_eq!(report.dropped_records, 1);
        assert_eq!(out.len(), 2);
        assert_eq!(
            d.schema().len(),
            out.schema().len() + report.dropped_attributes.len()
        );
    }

    #[test]
    fn constancy_emerging_after_record_drops_is_resolved() {
        // Only the dropped record varies attribute "v".
        let d = ds(
            vec![
                Attribute::numeric("a"),
                Attribute::numeric("b"),
                Attribute::numeric("v"),
            ],
            vec![
                vec![Cell::Missing, Cell::Missing, num(9.0)],
                vec![num(1.0), num(4.0), num(2.0)],
                vec![num(2.0), num(3.0), num(2.0)],
            ],
        );
        let policy = CleaningPolicy::default();
        let (once, report) = clean(&d, &policy).unwrap();
        assert_eq!(report.dropped_attributes[0].name, "v");
        let (twice, report2) = clean(&once, &policy).unwrap();
        assert_eq!(once, twice);
        assert!(report2.is_empty());
    }

    #[test]
    fn train_statistics_are_used_on_test() {
        let attrs = vec![Attribute::numeric("a"), Attribute::categorical("b")];
        let train = ds(
            attrs.clone(),
            vec![
                vec![num(1.0), txt("x")],
                vec![num(2.0), txt("y")],
                vec![num(3.0), txt("y")],
            ],
        );
        let test = ds(
            attrs,
            vec![
                vec![num(100.0), txt("x")],
                vec![num(200.0), txt("x")],
                vec![Cell::Missing, Cell::Missing],
                vec![num(300.0), txt("x")],
            ],
        );
        let policy = CleaningPolicy {
            max_missing_ratio_record: 1.0,
            ..Default::default()
        };
        let model = fit_cleaning(&train, &policy).unwrap();
        let out = apply_cleaning(&test, &model).unwrap();
        // training median is 2 (test median would be 200); training mode is "y"
        assert_eq!(out.records()[2].values, vec![num(2.0), txt("y")]);
        assert_eq!(
            apply_cleaning(&train, &model).unwrap(),
            clean(&train, &policy).unwrap().0
        );
    }

    #[test]
    fn renamed_attributes_are_rejected() {
        let train = ds(
            vec![Attribute::numeric("a"), Attribute::numeric("b")],
            vec![vec![num(1.0), num(2.0)], vec![num(2.0), num(1.0)]],
        );
        let other = ds(
            vec![Attribute::numeric("a"), Attribute::numeric("renamed")],
            vec![vec![num(1.0), num(2.0)]],
        );
        let model = fit_cleaning(&train, &CleaningPolicy::default()).unwrap();
        assert!(matches!(
            apply_cleaning(&other, &model),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn everything_dropped_is_an_error() {
        let d = ds(
            vec![Attribute::numeric("k")],
            vec![vec![num(1.0)], vec![num(1.0)]],
        );
        assert!(matches!(
            clean(&d, &CleaningPolicy::default()),
            Err(Error::EmptyAfterCleaning("attribute"))
        ));
        let bad = CleaningPolicy {
            max_missing_ratio_record: 1.5,
            ..Default::default()
        };
        assert!(matches!(clean(&d, &bad), Err(Error::Policy(_))));
    }
}
