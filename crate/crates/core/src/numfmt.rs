//! Decimal text helpers for persisted floating-point values.
//!
//! Persisted `f64` values are written with 17 significant digits so that
//! parsing the text back yields the identical bit pattern.

use serde::{Deserialize, Deserializer, Serializer};

/// Formats `v` with 17 significant digits in scientific notation.
pub fn f64_to_text(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn f64_from_text(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

/// Rounds half away from zero to two decimals and renders as a percentage.
pub fn percent(fraction: f64) -> String {
    let scaled = (fraction * 10_000.0).round() / 100.0;
    format!("{scaled:.2}%")
}

/// `#[serde(with = "numfmt::text")]` for single `f64` fields.
pub mod text {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&f64_to_text(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        f64_from_text(&s).ok_or_else(|| serde::de::Error::custom(format!("bad number {s:?}")))
    }
}

/// `#[serde(with = "numfmt::text_vec")]` for `Vec<f64>` fields.
pub mod text_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&f64_to_text(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| {
                f64_from_text(s)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad number {s:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip_bits() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 0.0] {
            assert_eq!(
                f64_from_text(&f64_to_text(v)).unwrap().to_bits(),
                v.to_bits()
            );
        }
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(1.0), "100.00%");
        assert_eq!(percent(0.9984), "99.84%");
        assert_eq!(percent(0.99999), "100.00%");
        assert_eq!(percent(0.0), "0.00%");
    }
}
