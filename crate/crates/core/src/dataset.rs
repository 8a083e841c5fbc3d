//! Schema-driven CSV ingestion.
//!
//! A schema config is line oriented. Every line but the last declares one
//! CSV column:
//!
//! ```text
//! <name>,<numeric|categorical>[,missing=<marker>]
//! ```
//!
//! and the final line names the label column and its labels:
//!
//! ```text
//! class,<name>,<label1>|<label2>|...
//! ```
//!
//! If the label column is also declared among the column lines, its position
//! in the row is taken from there; otherwise it is the last column. Blank
//! lines and lines starting with `#` are ignored.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MISSING_MARKER: &str = "?";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttributeKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    pub missing_marker: String,
}

impl Attribute {
    pub fn numeric(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Numeric,
            missing_marker: DEFAULT_MISSING_MARKER.to_string(),
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Categorical,
            missing_marker: DEFAULT_MISSING_MARKER.to_string(),
        }
    }
}

/// Declared feature attributes plus the label column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    class_attribute: String,
    /// Column index of the label within a labeled CSV row.
    class_position: usize,
    class_labels: Vec<String>,
}

impl AttributeSchema {
    pub fn new(
        attributes: Vec<Attribute>,
        class_attribute: impl Into<String>,
        class_position: usize,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        let schema = AttributeSchema {
            attributes,
            class_attribute: class_attribute.into(),
            class_position,
            class_labels,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Label column appended after the features.
    pub fn with_trailing_class(
        attributes: Vec<Attribute>,
        class_attribute: impl Into<String>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        let position = attributes.len();
        Self::new(attributes, class_attribute, position, class_labels)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Err(Error::Schema { line: 0, message });
        for (i, a) in self.attributes.iter().enumerate() {
            if a.name.is_empty() {
                return invalid(format!("attribute {i} has an empty name"));
            }
            if a.name == self.class_attribute {
                return invalid(format!("class attribute {:?} listed as a feature", a.name));
            }
            if self.attributes[..i].iter().any(|b| b.name == a.name) {
                return invalid(format!("duplicate attribute name {:?}", a.name));
            }
        }
        if self.class_position > self.attributes.len() {
            return invalid(format!(
                "class position {} out of range",
                self.class_position
            ));
        }
        if self.class_labels.is_empty() {
            return invalid("no class labels".into());
        }
        for (i, l) in self.class_labels.iter().enumerate() {
            if l.is_empty() {
                return invalid("empty class label".into());
            }
            if self.class_labels[..i].contains(l) {
                return invalid(format!("duplicate class label {l:?}"));
            }
        }
        if self.class_labels.len() > u8::MAX as usize {
            return invalid("more than 255 class labels".into());
        }
        Ok(())
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn class_attribute(&self) -> &str {
        &self.class_attribute
    }

    pub fn class_position(&self) -> usize {
        self.class_position
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Keeps only the listed feature attributes (in the given order).
    ///
    /// The label column of the projected schema is placed last.
    pub fn project(&self, keep: &[usize]) -> Result<Self> {
        let attributes = keep
            .iter()
            .map(|&i| {
                self.attributes.get(i).cloned().ok_or_else(|| {
                    Error::SchemaMismatch(format!("attribute index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_trailing_class(
            attributes,
            self.class_attribute.clone(),
            self.class_labels.clone(),
        )
    }
}

pub fn parse_schema(config_text: &str) -> Result<AttributeSchema> {
    let lines: Vec<(usize, &str)> = config_text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let Some((&(class_line_no, class_line), column_lines)) = lines.split_last() else {
        return Err(Error::Schema {
            line: 0,
            message: "empty schema".into(),
        });
    };
    let err = |line: usize, message: String| Error::Schema { line, message };

    let class_fields: Vec<&str> = class_line.split(',').map(str::trim).collect();
    if class_fields.len() != 3 || class_fields[0] != "class" {
        return Err(err(
            class_line_no,
            "final line must be `class,<name>,<label1>|<label2>|...`".into(),
        ));
    }
    let class_attribute = class_fields[1].to_string();
    if class_attribute.is_empty() {
        return Err(err(class_line_no, "empty class attribute name".into()));
    }
    let class_labels: Vec<String> = class_fields[2]
        .split('|')
        .map(|l| l.trim().to_string())
        .collect();
    for (i, l) in class_labels.iter().enumerate() {
        if l.is_empty() {
            return Err(err(class_line_no, "empty class label".into()));
        }
        if class_labels[..i].contains(l) {
            return Err(err(class_line_no, format!("duplicate class label {l:?}")));
        }
    }

    let mut attributes = Vec::new();
    let mut class_position = None;
    let mut seen: Vec<&str> = Vec::new();
    for (column, &(line_no, line)) in column_lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(err(
                line_no,
                "expected `<name>,<numeric|categorical>[,missing=<marker>]`".into(),
            ));
        }
        let name = fields[0];
        if name.is_empty() {
            return Err(err(line_no, "empty attribute name".into()));
        }
        if seen.contains(&name) {
            return Err(err(line_no, format!("duplicate attribute name {name:?}")));
        }
        seen.push(name);
        let kind = match fields[1] {
            "numeric" => AttributeKind::Numeric,
            "categorical" => AttributeKind::Categorical,
            other => return Err(err(line_no, format!("unknown attribute kind {other:?}"))),
        };
        let missing_marker = match fields.get(2) {
            None => DEFAULT_MISSING_MARKER.to_string(),
            Some(opt) => match opt.strip_prefix("missing=") {
                Some(m) if !m.is_empty() => m.to_string(),
                _ => return Err(err(line_no, format!("unknown option {opt:?}"))),
            },
        };
        if name == class_attribute {
            class_position = Some(column);
            continue;
        }
        attributes.push(Attribute {
            name: name.to_string(),
            kind,
            missing_marker,
        });
    }
    let class_position = class_position.unwrap_or(attributes.len());
    AttributeSchema::new(attributes, class_attribute, class_position, class_labels).map_err(|e| {
        match e {
            Error::Schema { message, .. } => err(class_line_no, message),
            other => other,
        }
    })
}

pub fn read_schema(path: &Path) -> Result<AttributeSchema> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema(&text)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub values: Vec<Cell>,
    pub label: Option<usize>,
}

/// Parsed rows together with their schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: AttributeSchema,
    records: Vec<RawRecord>,
    class_counts: Vec<usize>,
    parse_failures: Vec<usize>,
}

impl Dataset {
    /// Validates arity, cell kinds and label range of every record.
    pub fn new(schema: AttributeSchema, records: Vec<RawRecord>) -> Result<Self> {
        let arity = schema.len();
        let mut class_counts = vec![0; schema.class_labels().len()];
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != arity {
                return Err(Error::Arity {
                    row: i,
                    expected: arity,
                    found: r.values.len(),
                });
            }
            for (cell, attr) in r.values.iter().zip(schema.attributes()) {
                let ok = match (cell, attr.kind) {
                    (Cell::Missing, _) => true,
                    (Cell::Number(v), AttributeKind::Numeric) => v.is_finite(),
                    (Cell::Text(_), AttributeKind::Categorical) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::SchemaMismatch(format!(
                        "record {i}: invalid cell {cell:?} for attribute {:?}",
                        attr.name
                    )));
                }
            }
            if let Some(l) = r.label {
                match class_counts.get_mut(l) {
                    Some(c) => *c += 1,
                    None => {
                        return Err(Error::LabelRange {
                            label: l,
                            classes: schema.class_labels().len(),
                        })
                    }
                }
            }
        }
        let parse_failures = vec![0; arity];
        Ok(Dataset {
            schema,
            records,
            class_counts,
            parse_failures,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn records(&self) -> &[RawRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RawRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Labeled-record counts indexed like `schema().class_labels()`.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Numeric cells that failed to parse and were loaded as missing, per attribute.
    pub fn parse_failures(&self) -> &[usize] {
        &self.parse_failures
    }

    pub fn column(&self, attribute: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.records.iter().map(move |r| &r.values[attribute])
    }

    pub fn missing_cells(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.values.iter().filter(|c| c.is_missing()).count())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Skip the first row.
    pub has_header: bool,
}

fn parse_row(
    schema: &AttributeSchema,
    row_no: usize,
    row: &csv::StringRecord,
) -> Result<(RawRecord, Vec<bool>)> {
    let arity = schema.len();
    let labeled = match row.len() {
        n if n == arity + 1 => true,
        n if n == arity => false,
        n => {
            return Err(Error::Arity {
                row: row_no,
                expected: arity + 1,
                found: n,
            })
        }
    };
    let mut values = Vec::with_capacity(arity);
    let mut failures = vec![false; arity];
    let mut label = None;
    let mut attrs = schema.attributes().iter().enumerate();
    for (col, raw) in row.iter().enumerate() {
        let raw = raw.trim();
        if labeled && col == schema.class_position() {
            label = Some(schema.label_index(raw).ok_or_else(|| Error::Label {
                row: row_no,
                label: raw.to_string(),
            })?);
            continue;
        }
        let (i, attr) = attrs.next().expect("arity checked above");
        let cell = if raw == attr.missing_marker {
            Cell::Missing
        } else {
            match attr.kind {
                AttributeKind::Numeric => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Number(v),
                    _ => {
                        failures[i] = true;
                        Cell::Missing
                    }
                },
                AttributeKind::Categorical => Cell::Text(raw.to_string()),
            }
        };
        values.push(cell);
    }
    Ok((RawRecord { values, label }, failures))
}

/// Parses comma-separated rows against `schema`.
///
/// Rows carrying one more cell than the schema's feature count are labeled;
/// rows with exactly the feature count are loaded unlabeled.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &AttributeSchema,
    opts: LoadOptions,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, row));
    }
    let parsed: Vec<Result<(RawRecord, Vec<bool>)>> = rows
        .par_iter()
        .map(|(line, row)| parse_row(schema, *line, row))
        .collect();

    let mut records = Vec::with_capacity(parsed.len());
    let mut parse_failures = vec![0usize; schema.len()];
    for p in parsed {
        let (record, failures) = p?;
        for (count, failed) in parse_failures.iter_mut().zip(failures) {
            *count += failed as usize;
        }
        records.push(record);
    }
    let mut ds = Dataset::new(schema.clone(), records)?;
    ds.parse_failures = parse_failures;
    Ok(ds)
}

pub fn load_csv(path: &Path, schema: &AttributeSchema, opts: LoadOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema, opts)
}

/// Writes records back as CSV. Missing cells become the attribute's marker;
/// labels are written at the schema's class position.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let schema = ds.schema();
    for r in ds.records() {
        let mut row: Vec<String> = r
            .values
            .iter()
            .zip(schema.attributes())
            .map(|(c, a)| match c {
                Cell::Number(v) => v.to_string(),
                Cell::Text(s) => s.clone(),
                Cell::Missing => a.missing_marker.clone(),
            })
            .collect();
        if let Some(l) = r.label {
            row.insert(schema.class_position(), schema.class_labels()[l].clone());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Per-class record counts in declared label order.
pub fn class_histogram(ds: &Dataset) -> Result<Vec<(String, usize)>> {
    if let Some(i) = ds.records().iter().position(|r| r.label.is_none()) {
        return Err(Error::Unlabeled { record: i });
    }
    Ok(ds
        .schema()
        .class_labels()
        .iter()
        .cloned()
        .zip(ds.class_counts().iter().copied())
        .collect())
}
