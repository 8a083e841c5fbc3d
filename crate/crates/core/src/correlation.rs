//! Pairwise association strengths on a common `[0, 1]` scale.
//!
//! The measure depends on the attribute kinds of the pair:
//! numeric–numeric uses `|Pearson r|`, categorical–categorical Cramér's V and
//! the mixed case the correlation ratio η. Degenerate pairs (zero variance,
//! a single category) have strength 0.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeKind, Cell, Dataset};
use crate::error::{Error, Result};
use crate::numfmt;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch {
            expected: a,
            found: b,
        });
    }
    if a < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: a,
        });
    }
    Ok(())
}

/// Exact test; a floating mean of equal values need not equal them.
fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Absolute Pearson correlation. Zero when either column is constant.
pub fn pearson_abs(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy.abs() / (sxx.sqrt() * syy.sqrt())).min(1.0))
}

/// Maps each distinct value to a dense index in sorted order.
fn factorize<S: AsRef<str>>(col: &[S]) -> (Vec<usize>, usize) {
    let mut levels: BTreeMap<&str, usize> = BTreeMap::new();
    for v in col {
        levels.entry(v.as_ref()).or_insert(0);
    }
    for (i, slot) in levels.values_mut().enumerate() {
        *slot = i;
    }
    let codes = col.iter().map(|v| levels[v.as_ref()]).collect();
    (codes, levels.len())
}

/// Cramér's V without bias correction.
pub fn cramers_v<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let (ra, r) = factorize(a);
    let (cb, c) = factorize(b);
    if r < 2 || c < 2 {
        return Ok(0.0);
    }
    let mut table = vec![0usize; r * c];
    for (&i, &j) in ra.iter().zip(&cb) {
        table[i * c + j] += 1;
    }
    let row_sums: Vec<usize> = (0..r)
        .map(|i| table[i * c..(i + 1) * c].iter().sum())
        .collect();
    let col_sums: Vec<usize> = (0..c)
        .map(|j| (0..r).map(|i| table[i * c + j]).sum())
        .collect();
    let n = a.len() as f64;
    let mut chi2 = 0.0;
    for i in 0..r {
        for j in 0..c {
            let expected = row_sums[i] as f64 * col_sums[j] as f64 / n;
            let d = table[i * c + j] as f64 - expected;
            chi2 += d * d / expected;
        }
    }
    let k = (r.min(c) - 1) as f64;
    Ok((chi2 / n / k).sqrt().min(1.0))
}

/// Correlation ratio η of a numeric column grouped by a categorical one.
pub fn correlation_ratio<S: AsRef<str>>(cat: &[S], num: &[f64]) -> Result<f64> {
    check_lengths(cat.len(), num.len())?;
    if is_constant(num) {
        return Ok(0.0);
    }
    let (codes, groups) = factorize(cat);
    let total_mean = mean(num);
    let mut sums = vec![0.0; groups];
    let mut counts = vec![0usize; groups];
    for (&g, &v) in codes.iter().zip(num) {
        sums[g] += v;
        counts[g] += 1;
    }
    let between: f64 = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| {
            let d = s / n as f64 - total_mean;
            n as f64 * d * d
        })
        .sum();
    let total: f64 = num
        .iter()
        .map(|v| (v - total_mean) * (v - total_mean))
        .sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok((between / total).sqrt().min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    attribute_names: Vec<String>,
    /// Row-major `n × n`.
    #[serde(with = "numfmt::text_vec")]
    values: Vec<f64>,
}

impl CorrelationMatrix {
    /// Builds a matrix from row-major values, checking the invariants.
    pub fn new(attribute_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let m = CorrelationMatrix {
            attribute_names,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.values.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                found: self.values.len(),
            });
        }
        for i in 0..n {
            if self.get(i, i) != 1.0 {
                return Err(Error::format(
                    "correlation matrix",
                    format!("diagonal {i} is not 1"),
                ));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if !(0.0..=1.0).contains(&v) || v != self.get(j, i) {
                    return Err(Error::format(
                        "correlation matrix",
                        format!("entry ({i}, {j}) = {v} is not a symmetric value in [0, 1]"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attribute_names.is_empty()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Header row and column of attribute names, 12 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.attribute_names.iter().cloned());
        w.write_record(&header)?;
        for (i, name) in self.attribute_names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend((0..self.len()).map(|j| format!("{:.11e}", self.get(i, j))));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<correlation csv>", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    /// Use at most this many records, drawn without replacement.
    pub max_records: Option<usize>,
    pub seed: u64,
}

enum Column<'a> {
    Numeric(Vec<f64>),
    Categorical(Vec<&'a str>),
}

fn pair_strength(a: &Column, b: &Column) -> Result<f64> {
    match (a, b) {
        (Column::Numeric(x), Column::Numeric(y)) => pearson_abs(x, y),
        (Column::Categorical(x), Column::Categorical(y)) => cramers_v(x, y),
        (Column::Categorical(c), Column::Numeric(v))
        | (Column::Numeric(v), Column::Categorical(c)) => correlation_ratio(c, v),
    }
}

pub fn correlation_matrix(ds: &Dataset) -> Result<CorrelationMatrix> {
    correlation_matrix_with(ds, &CorrelationOptions::default())
}

pub fn correlation_matrix_with(
    ds: &Dataset,
    opts: &CorrelationOptions,
) -> Result<CorrelationMatrix> {
    let rows: Vec<usize> = match opts.max_records {
        Some(cap) if cap < ds.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = rand::seq::index::sample(&mut rng, ds.len(), cap).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..ds.len()).collect(),
    };
    let schema = ds.schema();
    let columns = schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(a, attr)| {
            let cells = rows.iter().map(|&r| (r, &ds.records()[r].values[a]));
            let missing = |r| Error::MissingValue {
                attribute: attr.name.clone(),
                record: r,
            };
            Ok(match attr.kind {
                AttributeKind::Numeric => Column::Numeric(
                    cells
                        .map(|(r, c)| c.as_number().ok_or_else(|| missing(r)))
                        .collect::<Result<_>>()?,
                ),
                AttributeKind::Categorical => Column::Categorical(
                    cells
                        .map(|(r, c)| match c {
                            Cell::Text(s) => Ok(s.as_str()),
                            _ => Err(missing(r)),
                        })
                        .collect::<Result<_>>()?,
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = columns.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let strengths: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            pair_strength(&columns[i], &columns[j]).map_err(|e| Error::Pair {
                a: schema.attributes()[i].name.clone(),
                b: schema.attributes()[j].name.clone(),
                source: Box::new(e),
            })
        })
        .collect();

    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    for (&(i, j), s) in pairs.iter().zip(strengths) {
        let s = s?;
        values[i * n + j] = s;
        values[j * n + i] = s;
    }
    let names = schema.attributes().iter().map(|a| a.name.clone()).collect();
    CorrelationMatrix::new(names, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 5.0, 3.0];
        assert!(approx(pearson_abs(&x, &x).unwrap(), 1.0));
        assert!(approx(
            pearson_abs(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            1.0
        ));
        assert_eq!(
            pearson_abs(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        assert!(matches!(
            pearson_abs(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson_abs(&[1.0], &[1.0]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn pearson_matches_covariance_over_sigmas() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        // cov = 1.25 (n-1: 5/3), sx = sy = sqrt(5/3)
        let cov = (-1.5 * -1.5 + -0.5 * 0.5 + 0.5 * -0.5 + 1.5 * 1.5) / 3.0;
        let var = (2.25 + 0.25 + 0.25 + 2.25) / 3.0;
        assert!(approx(pearson_abs(&x, &y).unwrap(), cov / var));
        assert!(approx(cov / var, 0.8));
    }

    #[test]
    fn cramers_v_cases() {
        let a = ["a", "a", "b", "b", "c"];
        assert!(approx(cramers_v(&a, &a).unwrap(), 1.0));
        assert_eq!(
            cramers_v(&["a", "a", "b", "b"], &["x", "y", "x", "y"]).unwrap(),
            0.0
        );
        assert_eq!(cramers_v(&["a", "a"], &["x", "y"]).unwrap(), 0.0);
    }

    #[test]
    fn cramers_v_mixed_two_by_two() {
        // [[9,1],[1,9]]: every cell expects 5, chi2 = 4 * 16/5 = 12.8, V = sqrt(12.8/20)
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (r, c, n) in [
            ("r0", "c0", 9),
            ("r0", "c1", 1),
            ("r1", "c0", 1),
            ("r1", "c1", 9),
        ] {
            for _ in 0..n {
                a.push(r);
                b.push(c);
            }
        }
        assert!(approx(cramers_v(&a, &b).unwrap(), (12.8f64 / 20.0).sqrt()));
    }

    #[test]
    fn correlation_ratio_cases() {
        assert!(approx(
            correlation_ratio(&["a", "b", "a", "b"], &[1.0, 2.0, 1.0, 2.0]).unwrap(),
            1.0
        ));
        assert_eq!(
            correlation_ratio(&["a", "b", "c"], &[4.0, 4.0, 4.0]).unwrap(),
            0.0
        );
        // groups a:{1,2} mean 1.5, b:{3,6} mean 4.5; grand mean 3
        // between = 2*2.25 + 2*2.25 = 9; total = 4+1+0+9 = 14
        assert!(approx(
            correlation_ratio(&["a", "a", "b", "b"], &[1.0, 2.0, 3.0, 6.0]).unwrap(),
            (9.0f64 / 14.0).sqrt()
        ));
    }

    #[test]
    fn matrix_csv_has_header_and_twelve_digits() {
        let m = CorrelationMatrix::new(vec!["a".into(), "b".into()], vec![1.0, 0.25, 0.25, 1.0])
            .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            ",a,b\na,1.00000000000e0,2.50000000000e-1\nb,2.50000000000e-1,1.00000000000e0\n"
        );
    }

    #[test]
    fn rejects_asymmetric_matrix() {
        assert!(
            CorrelationMatrix::new(vec!["a".into(), "b".into()], vec![1.0, 0.2, 0.3, 1.0]).is_err()
        );
    }
}
