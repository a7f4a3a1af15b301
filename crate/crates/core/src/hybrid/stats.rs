//! Per-column statistics and predicate cardinality estimates.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::predicate::{Atom, CmpOp, Literal, Predicate};
use crate::storage::{AttributeTable, ColumnIndex};
use crate::{Error, Result};

pub const HISTOGRAM_BUCKETS: usize = 64;
pub const TOP_VALUES: usize = 64;
/// Floor for atoms that would otherwise estimate to zero rows, as a
/// fraction of the row count.
pub const ZERO_FLOOR_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub distinct: u64,
}

/// Equi-depth histogram over a numeric column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Histogram {
    pub integer: bool,
    pub buckets: Vec<Bucket>,
}

impl Histogram {
    /// Builds from `(value, frequency)` pairs in ascending value order.
    pub fn from_sorted(pairs: impl IntoIterator<Item = (f64, u64)>, integer: bool, buckets: usize) -> Self {
        let pairs: Vec<(f64, u64)> = pairs.into_iter().filter(|p| p.1 > 0).collect();
        let total: u64 = pairs.iter().map(|p| p.1).sum();
        let mut out = Vec::new();
        if total == 0 {
            return Histogram { integer, buckets: out };
        }
        let per = total as f64 / buckets.max(1) as f64;
        let mut acc = 0u64;
        let mut cur: Option<Bucket> = None;
        for (v, n) in pairs {
            let b = cur.get_or_insert(Bucket {
                lo: v,
                hi: v,
                count: 0,
                distinct: 0,
            });
            b.hi = v;
            b.count += n;
            b.distinct += 1;
            acc += n;
            if acc as f64 >= per * (out.len() + 1) as f64 {
                out.push(cur.take().unwrap());
            }
        }
        if let Some(b) = cur {
            out.push(b);
        }
        Histogram { integer, buckets: out }
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum()
    }

    /// Estimated rows equal to `x`.
    pub fn eq(&self, x: f64) -> f64 {
        if self.integer && x.fract() != 0.0 {
            return 0.0;
        }
        self.buckets
            .iter()
            .filter(|b| b.lo <= x && x <= b.hi)
            .map(|b| b.count as f64 / b.distinct.max(1) as f64)
            .sum()
    }

    /// Estimated rows strictly below `x`.
    pub fn lt(&self, x: f64) -> f64 {
        let x = if self.integer { x.ceil() } else { x };
        self.buckets
            .iter()
            .map(|b| {
                if x <= b.lo {
                    0.0
                } else if x > b.hi {
                    b.count as f64
                } else if self.integer {
                    b.count as f64 * (x - b.lo) / (b.hi - b.lo + 1.0)
                } else {
                    b.count as f64 * (x - b.lo) / (b.hi - b.lo)
                }
            })
            .sum()
    }
}

/// Most frequent values of a string column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub top: BTreeMap<String, u64>,
    pub remainder_rows: u64,
    pub remainder_distinct: u64,
}

impl FrequencyTable {
    pub fn total(&self) -> u64 {
        self.top.values().sum::<u64>() + self.remainder_rows
    }

    pub fn eq(&self, s: &str) -> f64 {
        match self.top.get(s) {
            Some(&n) => n as f64,
            None if self.remainder_distinct > 0 => self.remainder_rows as f64 / self.remainder_distinct as f64,
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnStat {
    Numeric(Histogram),
    Strings(FrequencyTable),
    /// Token to number of rows containing it, plus rows with the column set.
    Tokens { df: HashMap<String, u64>, rows: u64 },
}

impl ColumnStat {
    pub fn non_null(&self) -> u64 {
        match self {
            ColumnStat::Numeric(h) => h.total(),
            ColumnStat::Strings(f) => f.total(),
            ColumnStat::Tokens { rows, .. } => *rows,
        }
    }
}

/// Statistics for every schema column, built in one pass over the
/// attribute indexes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ColumnStats {
    /// |R|: number of assets holding vectors when the stats were built.
    pub rows: u64,
    pub columns: BTreeMap<String, ColumnStat>,
}

impl ColumnStats {
    pub fn build(table: &AttributeTable, schema: &crate::storage::Schema, rows: usize) -> Self {
        let mut columns = BTreeMap::new();
        for name in schema.columns.keys() {
            let Some(col) = table.column(name) else {
                continue;
            };
            let stat = match &col.index {
                ColumnIndex::Int(m) => ColumnStat::Numeric(Histogram::from_sorted(
                    m.iter().map(|(k, s)| (*k as f64, s.len() as u64)),
                    true,
                    HISTOGRAM_BUCKETS,
                )),
                ColumnIndex::Float(m) => ColumnStat::Numeric(Histogram::from_sorted(
                    m.iter().map(|(k, s)| (k.0, s.len() as u64)),
                    false,
                    HISTOGRAM_BUCKETS,
                )),
                ColumnIndex::Str(m) => {
                    let mut all: Vec<(&str, u64)> = m.iter().map(|(k, s)| (&**k, s.len() as u64)).collect();
                    all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                    let mut f = FrequencyTable::default();
                    for (i, (k, n)) in all.into_iter().enumerate() {
                        if i < TOP_VALUES {
                            f.top.insert(k.to_string(), n);
                        } else {
                            f.remainder_rows += n;
                            f.remainder_distinct += 1;
                        }
                    }
                    ColumnStat::Strings(f)
                }
                ColumnIndex::Tokens(m) => ColumnStat::Tokens {
                    df: m.iter().map(|(k, s)| (k.to_string(), s.len() as u64)).collect(),
                    rows: col.present.len() as u64,
                },
            };
            columns.insert(name.clone(), stat);
        }
        ColumnStats {
            rows: rows as u64,
            columns,
        }
    }

    fn floor(&self) -> f64 {
        (self.rows as f64 * ZERO_FLOOR_FRACTION).max(1.0)
    }

    /// Estimated qualifying rows for one atom, floored.
    pub fn atom_cardinality(&self, a: &Atom) -> Result<f64> {
        let stat = self
            .columns
            .get(&a.column)
            .ok_or_else(|| Error::UnknownColumn(a.column.clone()))?;
        let raw = match (stat, &a.value) {
            (ColumnStat::Numeric(h), lit) => {
                let x = match lit {
                    Literal::Int(i) => *i as f64,
                    Literal::Float(f) => *f,
                    Literal::Str(_) => return Err(Error::Type(format!("numeric column `{}`", a.column))),
                };
                let nn = h.total() as f64;
                match a.op {
                    CmpOp::Eq => h.eq(x),
                    CmpOp::Ne => nn - h.eq(x),
                    CmpOp::Lt => h.lt(x),
                    CmpOp::Le => h.lt(x) + h.eq(x),
                    CmpOp::Gt => nn - h.lt(x) - h.eq(x),
                    CmpOp::Ge => nn - h.lt(x),
                    CmpOp::Contains => 0.0,
                }
            }
            (ColumnStat::Strings(f), Literal::Str(s)) => match a.op {
                CmpOp::Eq => f.eq(s),
                CmpOp::Ne => f.total() as f64 - f.eq(s),
                _ => 0.0,
            },
            (ColumnStat::Tokens { df, .. }, Literal::Str(s)) => {
                df.get(&s.to_lowercase()).copied().unwrap_or(0) as f64
            }
            _ => 0.0,
        };
        let raw = raw.clamp(0.0, self.rows as f64);
        Ok(if raw <= 0.0 { self.floor() } else { raw })
    }

    /// Estimated qualifying rows for a predicate tree.
    pub fn cardinality(&self, p: &Predicate) -> Result<f64> {
        Ok(match p {
            Predicate::True => self.rows as f64,
            Predicate::Atom(a) => self.atom_cardinality(a)?,
            Predicate::And(c) => {
                let mut m = f64::INFINITY;
                for child in c {
                    m = m.min(self.cardinality(child)?);
                }
                if m.is_finite() {
                    m
                } else {
                    self.rows as f64
                }
            }
            Predicate::Or(c) => {
                let mut s = 0.0;
                for child in c {
                    s += self.cardinality(child)?;
                }
                s
            }
        })
    }

    /// Estimated selectivity in `[0, 1]`; 1.0 when there are no rows.
    pub fn selectivity(&self, p: &Predicate) -> Result<f64> {
        let card = self.cardinality(p)?;
        if self.rows == 0 {
            return Ok(1.0);
        }
        Ok((card.min(self.rows as f64) / self.rows as f64).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::storage::{tokenize, AttributeRecord, Schema, Value};
    use proptest::prelude::*;

    fn table(n: i64, schema: &Schema, f: impl Fn(i64) -> AttributeRecord) -> AttributeTable {
        let mut t = AttributeTable::new(schema);
        for i in 0..n {
            let a: Arc<str> = Arc::from(format!("a{i}"));
            t.put(&a, Arc::new(f(i)));
        }
        t
    }

    #[test]
    fn histogram_counts_cover_non_null_rows() {
        let s = Schema::parse("x:int").unwrap();
        let t = table(1000, &s, |i| {
            if i % 10 == 0 {
                AttributeRecord::new()
            } else {
                AttributeRecord::new().with("x", Value::Int(i % 37))
            }
        });
        let st = ColumnStats::build(&t, &s, 1000);
        assert_eq!(st.columns["x"].non_null(), 900);
        match &st.columns["x"] {
            ColumnStat::Numeric(h) => assert!(h.buckets.len() <= HISTOGRAM_BUCKETS),
            _ => unreachable!(),
        }
    }

    #[test]
    fn uniform_half_range() {
        let s = Schema::parse("x:int").unwrap();
        let t = table(1000, &s, |i| AttributeRecord::new().with("x", Value::Int(i)));
        let st = ColumnStats::build(&t, &s, 1000);
        let f = st.selectivity(&Predicate::parse("x < 500").unwrap()).unwrap();
        assert!((f - 0.5).abs() <= 1.0 / HISTOGRAM_BUCKETS as f64, "{f}");
        let q = st.selectivity(&Predicate::parse("x >= 250 AND x < 500").unwrap()).unwrap();
        assert!(q >= 0.24 && q <= 0.76, "{q}");
    }

    #[test]
    fn single_value_equality_is_one() {
        let s = Schema::parse("x:int,c:string").unwrap();
        let t = table(50, &s, |_| {
            AttributeRecord::new()
                .with("x", Value::Int(7))
                .with("c", Value::Str("k".into()))
        });
        let st = ColumnStats::build(&t, &s, 50);
        assert_eq!(st.selectivity(&Predicate::parse("x = 7").unwrap()).unwrap(), 1.0);
        assert_eq!(st.selectivity(&Predicate::parse("c = 'k'").unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn empty_table_falls_back_to_one() {
        let s = Schema::parse("x:int").unwrap();
        let st = ColumnStats::build(&AttributeTable::new(&s), &s, 0);
        assert_eq!(st.selectivity(&Predicate::parse("x = 1").unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn absent_token_gets_the_floor() {
        let s = Schema::parse("t:tokens").unwrap();
        let t = table(100, &s, |i| AttributeRecord::new().with("t", Value::Tokens(tokenize(&format!("k{}", i % 4)))));
        let st = ColumnStats::build(&t, &s, 100);
        let f = st.selectivity(&Predicate::contains("t", "missing")).unwrap();
        assert_eq!(f, 0.01);
        assert_eq!(st.selectivity(&Predicate::contains("t", "K1")).unwrap(), 0.25);
        assert!(matches!(
            st.selectivity(&Predicate::contains("nope", "x")),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn string_top_values_and_remainder() {
        let s = Schema::parse("c:string").unwrap();
        let t = table(1000, &s, |i| AttributeRecord::new().with("c", Value::Str(format!("v{}", i % 100))));
        let st = ColumnStats::build(&t, &s, 1000);
        for v in ["v3", "v99"] {
            let f = st.selectivity(&Predicate::parse(&format!("c = '{v}'")).unwrap()).unwrap();
            assert!((f - 0.01).abs() < 1e-9, "{v} {f}");
        }
    }

    proptest! {
        #[test]
        fn and_or_bounds(xs in proptest::collection::vec(0i64..50, 1..200), a in 0i64..50, b in 0i64..50) {
            let s = Schema::parse("x:int").unwrap();
            let n = xs.len() as i64;
            let t = table(n, &s, |i| AttributeRecord::new().with("x", Value::Int(xs[i as usize])));
            let st = ColumnStats::build(&t, &s, xs.len());
            let pa = Predicate::parse(&format!("x < {a}")).unwrap();
            let pb = Predicate::parse(&format!("x >= {b}")).unwrap();
            let fa = st.selectivity(&pa).unwrap();
            let fb = st.selectivity(&pb).unwrap();
            let and = st.selectivity(&pa.clone().and(pb.clone())).unwrap();
            let or = st.selectivity(&pa.or(pb)).unwrap();
            prop_assert!((0.0..=1.0).contains(&fa) && (0.0..=1.0).contains(&fb));
            prop_assert!(and <= fa.min(fb) + 1e-12);
            prop_assert!(or + 1e-12 >= fa.max(fb));
            prop_assert!((0.0..=1.0).contains(&and) && (0.0..=1.0).contains(&or));
        }
    }
}
