//! Mapping attribute values onto 8-bit channel values.
//!
//! Numeric attributes become one channel holding the min-max normalized value
//! scaled to `[0, 255]`. Categorical attributes become a one-hot block of
//! `{0, 255}` channels, one per category seen during fitting.

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeKind, Cell, Dataset, RawRecord};
use crate::error::{Error, Result};
use crate::numfmt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttributeEncoding {
    Numeric {
        #[serde(with = "numfmt::text")]
        min: f64,
        #[serde(with = "numfmt::text")]
        max: f64,
    },
    /// Unseen categories encode to an all-zero block.
    Categorical { categories: Vec<String> },
}

impl AttributeEncoding {
    pub fn width(&self) -> usize {
        match self {
            AttributeEncoding::Numeric { .. } => 1,
            AttributeEncoding::Categorical { categories } => categories.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelRole {
    Scalar,
    OneHot(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub attribute: usize,
    pub role: ChannelRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    names: Vec<String>,
    encodings: Vec<AttributeEncoding>,
    /// Start offset of each attribute's block in the expanded channel list.
    offsets: Vec<usize>,
    channels: Vec<Channel>,
}

impl EncoderModel {
    pub fn new(names: Vec<String>, encodings: Vec<AttributeEncoding>) -> Result<Self> {
        if names.len() != encodings.len() {
            return Err(Error::LengthMismatch {
                expected: names.len(),
                found: encodings.len(),
            });
        }
        let mut offsets = Vec::with_capacity(names.len());
        let mut channels = Vec::new();
        for (a, enc) in encodings.iter().enumerate() {
            offsets.push(channels.len());
            match enc {
                AttributeEncoding::Numeric { min, max } => {
                    if !(min.is_finite() && max.is_finite() && min <= max) {
                        return Err(Error::format(
                            "encoder",
                            format!("attribute {:?} has bounds [{min}, {max}]", names[a]),
                        ));
                    }
                    channels.push(Channel {
                        attribute: a,
                        role: ChannelRole::Scalar,
                    });
                }
                AttributeEncoding::Categorical { categories } => {
                    if categories.is_empty() {
                        return Err(Error::format(
                            "encoder",
                            format!("attribute {:?} has no categories", names[a]),
                        ));
                    }
                    for (i, c) in categories.iter().enumerate() {
                        if categories[..i].contains(c) {
                            return Err(Error::format(
                                "encoder",
                                format!("attribute {:?} repeats category {c:?}", names[a]),
                            ));
                        }
                        channels.push(Channel {
                            attribute: a,
                            role: ChannelRole::OneHot(c.clone()),
                        });
                    }
                }
            }
        }
        Ok(EncoderModel {
            names,
            encodings,
            offsets,
            channels,
        })
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.names
    }

    pub fn encodings(&self) -> &[AttributeEncoding] {
        &self.encodings
    }

    pub fn num_attributes(&self) -> usize {
        self.names.len()
    }

    pub fn expanded_channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Expanded channel range of attribute `a`.
    pub fn block(&self, a: usize) -> std::ops::Range<usize> {
        self.offsets[a]..self.offsets[a] + self.encodings[a].width()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChannelVector(pub Vec<u8>);

impl ChannelVector {
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Fits bounds and category lists (first-appearance order) on cleaned data.
pub fn fit_encoder(ds: &Dataset) -> Result<EncoderModel> {
    if ds.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let schema = ds.schema();
    let mut encodings = Vec::with_capacity(schema.len());
    for (a, attr) in schema.attributes().iter().enumerate() {
        let missing = |record| Error::MissingValue {
            attribute: attr.name.clone(),
            record,
        };
        let enc = match attr.kind {
            AttributeKind::Numeric => {
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for (r, c) in ds.column(a).enumerate() {
                    let v = c.as_number().ok_or_else(|| missing(r))?;
                    min = min.min(v);
                    max = max.max(v);
                }
                AttributeEncoding::Numeric { min, max }
            }
            AttributeKind::Categorical => {
                let mut categories: Vec<String> = Vec::new();
                for (r, c) in ds.column(a).enumerate() {
                    let v = c.as_text().ok_or_else(|| missing(r))?;
                    if !categories.iter().any(|k| k == v) {
                        categories.push(v.to_string());
                    }
                }
                AttributeEncoding::Categorical { categories }
            }
        };
        encodings.push(enc);
    }
    let names = schema.attributes().iter().map(|a| a.name.clone()).collect();
    EncoderModel::new(names, encodings)
}

/// `round(255 · (v − min) / (max − min))`, clamped; half rounds away from zero.
pub fn encode_numeric(v: f64, min: f64, max: f64) -> u8 {
    if max <= min {
        return 0;
    }
    let scaled = 255.0 * (v - min) / (max - min);
    scaled.round().clamp(0.0, 255.0) as u8
}

pub fn encode_record(r: &RawRecord, m: &EncoderModel) -> Result<ChannelVector> {
    if r.values.len() != m.num_attributes() {
        return Err(Error::SchemaMismatch(format!(
            "record has {} values, encoder expects {}",
            r.values.len(),
            m.num_attributes()
        )));
    }
    let mut out = vec![0u8; m.num_channels()];
    for (a, (cell, enc)) in r.values.iter().zip(&m.encodings).enumerate() {
        let start = m.offsets[a];
        match (enc, cell) {
            (AttributeEncoding::Numeric { min, max }, Cell::Number(v)) => {
                out[start] = encode_numeric(*v, *min, *max);
            }
            (AttributeEncoding::Categorical { categories }, Cell::Text(s)) => {
                if let Some(k) = categories.iter().position(|c| c == s) {
                    out[start + k] = 255;
                }
            }
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "attribute {:?}: cell {cell:?} does not fit its encoding",
                    m.names[a]
                )))
            }
        }
    }
    Ok(ChannelVector(out))
}

/// Approximate inverse of [`encode_record`].
///
/// All-zero one-hot blocks decode to [`Cell::Missing`] (unknown category).
pub fn decode_channels(cv: &ChannelVector, m: &EncoderModel) -> Result<RawRecord> {
    if cv.len() != m.num_channels() {
        return Err(Error::SchemaMismatch(format!(
            "channel vector has {} values, encoder expects {}",
            cv.len(),
            m.num_channels()
        )));
    }
    let values = m
        .encodings
        .iter()
        .enumerate()
        .map(|(a, enc)| {
            let block = &cv.0[m.block(a)];
            match enc {
                AttributeEncoding::Numeric { min, max } => {
                    Cell::Number(min + (block[0] as f64 / 255.0) * (max - min))
                }
                AttributeEncoding::Categorical { categories } => {
                    let mut best = 0;
                    for (k, &v) in block.iter().enumerate() {
                        if v > block[best] {
                            best = k;
                        }
                    }
                    if block[best] == 0 {
                        Cell::Missing
                    } else {
                        Cell::Text(categories[best].clone())
                    }
                }
            }
        })
        .collect();
    Ok(RawRecord {
        values,
        label: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Attribute, AttributeSchema};

    fn dataset(attrs: Vec<Attribute>, rows: Vec<Vec<Cell>>) -> Dataset {
        let schema =
            AttributeSchema::with_trailing_class(attrs, "class", vec!["p".into()]).unwrap();
        Dataset::new(
            schema,
            rows.into_iter()
                .map(|values| RawRecord {
                    values,
                    label: Some(0),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fit_bounds_and_category_order() {
        let ds = dataset(
            vec![Attribute::numeric("n"), Attribute::categorical("c")],
            vec![
                vec![Cell::Number(2.0), Cell::Text("b".into())],
                vec![Cell::Number(8.0), Cell::Text("a".into())],
                vec![Cell::Number(5.0), Cell::Text("b".into())],
            ],
        );
        let m = fit_encoder(&ds).unwrap();
        assert_eq!(
            m.encodings()[0],
            AttributeEncoding::Numeric { min: 2.0, max: 8.0 }
        );
        assert_eq!(
            m.encodings()[1],
            AttributeEncoding::Categorical {
                categories: vec!["b".into(), "a".into()]
            }
        );
    }

    #[test]
    fn expanded_channel_count() {
        let m = EncoderModel::new(
            vec!["n".into(), "c".into()],
            vec![
                AttributeEncoding::Numeric { min: 0.0, max: 1.0 },
                AttributeEncoding::Categorical {
                    categories: vec!["x".into(), "y".into(), "z".into()],
                },
            ],
        )
        .unwrap();
        assert_eq!(m.num_channels(), 4);
        assert_eq!(m.block(1), 1..4);
        assert_eq!(
            m.expanded_channels()[2].role,
            ChannelRole::OneHot("y".into())
        );
    }

    #[test]
    fn numeric_endpoints_and_rounding() {
        assert_eq!(encode_numeric(2.0, 2.0, 8.0), 0);
        assert_eq!(encode_numeric(8.0, 2.0, 8.0), 255);
        assert_eq!(encode_numeric(50.0, 0.0, 100.0), 128);
        assert_eq!(encode_numeric(-10.0, 0.0, 100.0), 0);
        assert_eq!(encode_numeric(1e9, 0.0, 100.0), 255);
        assert_eq!(encode_numeric(3.0, 3.0, 3.0), 0);
    }

    #[test]
    fn one_hot_and_unknown() {
        let m = EncoderModel::new(
            vec!["c".into()],
            vec![AttributeEncoding::Categorical {
                categories: vec!["a".into(), "b".into(), "c".into()],
            }],
        )
        .unwrap();
        let r = RawRecord {
            values: vec![Cell::Text("b".into())],
            label: None,
        };
        let cv = encode_record(&r, &m).unwrap();
        assert_eq!(cv.0, vec![0, 255, 0]);
        assert_eq!(decode_channels(&cv, &m).unwrap().values, r.values);

        let unseen = RawRecord {
            values: vec![Cell::Text("zzz".into())],
            label: None,
        };
        let cv = encode_record(&unseen, &m).unwrap();
        assert_eq!(cv.0, vec![0, 0, 0]);
        assert_eq!(
            decode_channels(&cv, &m).unwrap().values,
            vec![Cell::Missing]
        );
    }

    #[test]
    fn mismatched_inputs() {
        let m = EncoderModel::new(
            vec!["n".into()],
            vec![AttributeEncoding::Numeric { min: 0.0, max: 1.0 }],
        )
        .unwrap();
        let wrong_kind = RawRecord {
            values: vec![Cell::Text("x".into())],
            label: None,
        };
        assert!(matches!(
            encode_record(&wrong_kind, &m),
            Err(Error::SchemaMismatch(_))
        ));
        assert!(matches!(
            decode_channels(&ChannelVector(vec![1, 2]), &m),
            Err(Error::SchemaMismatch(_))
        ));
    }
}
