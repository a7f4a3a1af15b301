//! Attribute schema, typed values and the indexed attribute table.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    Float,
    String,
    /// Whitespace separated, case-folded token set.
    Tokens,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int | ColumnType::Float)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Int => "int",
            ColumnType::Float => "float",
            ColumnType::String => "string",
            ColumnType::Tokens => "tokens",
        })
    }
}

impl std::str::FromStr for ColumnType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "int" | "integer" => Ok(ColumnType::Int),
            "float" | "double" | "real" => Ok(ColumnType::Float),
            "string" | "str" | "text" => Ok(ColumnType::String),
            "tokens" | "token" | "tags" => Ok(ColumnType::Tokens),
            other => Err(Error::InvalidArgument(format!("unknown column type `{other}`"))),
        }
    }
}

/// Declared filterable attribute columns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnType>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, name: impl Into<String>, ty: ColumnType) -> Self {
        self.columns.insert(name.into(), ty);
        self
    }

    /// Parses `name:type,name:type`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut schema = Schema::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, ty) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("column `{part}` needs a `name:type` form")))?;
            let name = name.trim();
            if !is_ident(name) {
                return Err(Error::InvalidArgument(format!("invalid column name `{name}`")));
            }
            schema.columns.insert(name.to_string(), ty.parse()?);
        }
        Ok(schema)
    }

    pub fn column(&self, name: &str) -> Result<ColumnType> {
        self.columns
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Union of two schemas; a column declared with two types is an error.
    pub fn merged(&self, other: &Schema) -> Result<Schema> {
        let mut out = self.clone();
        for (name, &ty) in &other.columns {
            match out.columns.get(name) {
                Some(&existing) if existing != ty => {
                    return Err(Error::SchemaConflict {
                        column: name.clone(),
                        stored: existing.to_string(),
                        requested: ty.to_string(),
                    })
                }
                _ => {
                    out.columns.insert(name.clone(), ty);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "lowercase")]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Tokens(Vec<String>),
}

/// Splits on whitespace, lowercases, dedups and sorts.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut toks: Vec<String> = text.split_whitespace().map(|t| t.to_lowercase()).collect();
    toks.sort();
    toks.dedup();
    toks
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(i) => Some(i as f64),
            Value::Float(f) => Some(f),
            _ => None,
        }
    }

    /// Converts a JSON value into a column's type.
    pub fn from_json(column: &str, ty: ColumnType, v: &serde_json::Value) -> Result<Value> {
        let bad = || Error::Type(format!("column `{column}` of type {ty} cannot hold {v}"));
        match ty {
            ColumnType::Int => v.as_i64().map(Value::Int).ok_or_else(bad),
            ColumnType::Float => v
                .as_f64()
                .filter(|f| f.is_finite())
                .map(Value::Float)
                .ok_or_else(bad),
            ColumnType::String => v.as_str().map(|s| Value::Str(s.to_string())).ok_or_else(bad),
            ColumnType::Tokens => match v {
                serde_json::Value::String(s) => Ok(Value::Tokens(tokenize(s))),
                serde_json::Value::Array(items) => {
                    let mut joined = String::new();
                    for item in items {
                        joined.push_str(item.as_str().ok_or_else(bad)?);
                        joined.push(' ');
                    }
                    Ok(Value::Tokens(tokenize(&joined)))
                }
                _ => Err(bad()),
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Float(f) => serde_json::Value::from(*f),
            Value::Str(s) => serde_json::Value::from(s.clone()),
            Value::Tokens(t) => serde_json::Value::from(t.join(" ")),
        }
    }

    fn check(&self, column: &str, ty: ColumnType) -> Result<Value> {
        let ok = match (ty, self) {
            (ColumnType::Int, Value::Int(_)) => return Ok(self.clone()),
            (ColumnType::Float, Value::Float(f)) => f.is_finite(),
            (ColumnType::Float, Value::Int(i)) => return Ok(Value::Float(*i as f64)),
            (ColumnType::String, Value::Str(_)) => true,
            (ColumnType::Tokens, Value::Tokens(t)) => return Ok(Value::Tokens(tokenize(&t.join(" ")))),
            (ColumnType::Tokens, Value::Str(s)) => return Ok(Value::Tokens(tokenize(s))),
            _ => false,
        };
        if ok {
            Ok(self.clone())
        } else {
            Err(Error::Type(format!("column `{column}` of type {ty} cannot hold {self:?}")))
        }
    }
}

/// Attribute row for one asset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub values: BTreeMap<String, Value>,
}

impl AttributeRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, column: impl Into<String>, value: Value) -> Self {
        self.values.insert(column.into(), value);
        self
    }

    pub fn get(&self, column: &str) -> Option<&Value> {
        self.values.get(column)
    }

    /// Parses the `values` object of an attributes line.
    pub fn from_json(schema: &Schema, values: &serde_json::Map<String, serde_json::Value>) -> Result<Self> {
        let mut out = AttributeRecord::new();
        for (col, v) in values {
            if v.is_null() {
                continue;
            }
            let ty = schema.column(col)?;
            out.values.insert(col.clone(), Value::from_json(col, ty, v)?);
        }
        Ok(out)
    }

    /// Validates against the schema, normalising representation.
    pub fn validated(&self, schema: &Schema) -> Result<AttributeRecord> {
        let mut out = AttributeRecord::new();
        for (col, v) in &self.values {
            let ty = schema.column(col)?;
            out.values.insert(col.clone(), v.check(col, ty)?);
        }
        Ok(out)
    }
}

/// f64 with a total order, for index keys.
#[derive(Debug, Clone, Copy)]
pub(crate) struct F64Key(pub f64);

impl PartialEq for F64Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for F64Key {}
impl PartialOrd for F64Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for F64Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub(crate) type AssetSet = im::OrdSet<Arc<str>>;

#[derive(Clone, Debug)]
pub(crate) enum ColumnIndex {
    Int(im::OrdMap<i64, AssetSet>),
    Float(im::OrdMap<F64Key, AssetSet>),
    Str(im::HashMap<Arc<str>, AssetSet>),
    Tokens(im::HashMap<Arc<str>, AssetSet>),
}

#[derive(Clone, Debug)]
pub(crate) struct IndexedColumn {
    pub present: AssetSet,
    pub index: ColumnIndex,
}

fn set_insert<K: Ord + Clone>(map: &mut im::OrdMap<K, AssetSet>, key: K, asset: &Arc<str>) {
    map.entry(key).or_default().insert(asset.clone());
}

fn set_remove<K: Ord + Clone>(map: &mut im::OrdMap<K, AssetSet>, key: &K, asset: &Arc<str>) {
    let empty = match map.get_mut(key) {
        Some(set) => {
            set.remove(asset);
            set.is_empty()
        }
        None => false,
    };
    if empty {
        map.remove(key);
    }
}

fn hset_insert(map: &mut im::HashMap<Arc<str>, AssetSet>, key: &str, asset: &Arc<str>) {
    map.entry(Arc::from(key)).or_default().insert(asset.clone());
}

fn hset_remove(map: &mut im::HashMap<Arc<str>, AssetSet>, key: &str, asset: &Arc<str>) {
    let empty = match map.get_mut(key) {
        Some(set) => {
            set.remove(asset);
            set.is_empty()
        }
        None => false,
    };
    if empty {
        map.remove(key);
    }
}

impl IndexedColumn {
    fn new(ty: ColumnType) -> Self {
        let index = match ty {
            ColumnType::Int => ColumnIndex::Int(im::OrdMap::new()),
            ColumnType::Float => ColumnIndex::Float(im::OrdMap::new()),
            ColumnType::String => ColumnIndex::Str(im::HashMap::new()),
            ColumnType::Tokens => ColumnIndex::Tokens(im::HashMap::new()),
        };
        Self {
            present: AssetSet::new(),
            index,
        }
    }

    fn add(&mut self, asset: &Arc<str>, v: &Value) {
        self.present.insert(asset.clone());
        match (&mut self.index, v) {
            (ColumnIndex::Int(m), Value::Int(i)) => set_insert(m, *i, asset),
            (ColumnIndex::Float(m), v) => {
                if let Some(f) = v.as_f64() {
                    set_insert(m, F64Key(f), asset)
                }
            }
            (ColumnIndex::Str(m), Value::Str(s)) => hset_insert(m, s, asset),
            (ColumnIndex::Tokens(m), Value::Tokens(toks)) => {
                for t in toks {
                    hset_insert(m, t, asset);
                }
            }
            _ => {}
        }
    }

    fn remove(&mut self, asset: &Arc<str>, v: &Value) {
        self.present.remove(asset);
        match (&mut self.index, v) {
            (ColumnIndex::Int(m), Value::Int(i)) => set_remove(m, i, asset),
            (ColumnIndex::Float(m), v) => {
                if let Some(f) = v.as_f64() {
                    set_remove(m, &F64Key(f), asset)
                }
            }
            (ColumnIndex::Str(m), Value::Str(s)) => hset_remove(m, s, asset),
            (ColumnIndex::Tokens(m), Value::Tokens(toks)) => {
                for t in toks {
                    hset_remove(m, t, asset);
                }
            }
            _ => {}
        }
    }
}

/// Attribute rows plus per-column secondary indexes. Persistent data
/// structures make clones cheap, which is what snapshots rely on.
#[derive(Clone, Debug, Default)]
pub struct AttributeTable {
    pub(crate) rows: im::HashMap<Arc<str>, Arc<AttributeRecord>>,
    pub(crate) columns: BTreeMap<String, IndexedColumn>,
}

impl AttributeTable {
    pub(crate) fn new(schema: &Schema) -> Self {
        let mut t = AttributeTable::default();
        t.ensure_columns(schema);
        t
    }

    pub(crate) fn ensure_columns(&mut self, schema: &Schema) {
        for (name, &ty) in &schema.columns {
            self.columns
                .entry(name.clone())
                .or_insert_with(|| IndexedColumn::new(ty));
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, asset: &str) -> Option<&Arc<AttributeRecord>> {
        self.rows.get(asset)
    }

    pub(crate) fn put(&mut self, asset: &Arc<str>, record: Arc<AttributeRecord>) {
        self.remove(asset);
        for (col, v) in &record.values {
            if let Some(ic) = self.columns.get_mut(col) {
                ic.add(asset, v);
            }
        }
        self.rows.insert(asset.clone(), record);
    }

    pub(crate) fn remove(&mut self, asset: &str) -> bool {
        let Some((key, old)) = self.rows.remove_with_key(asset) else {
            return false;
        };
        for (col, v) in &old.values {
            if let Some(ic) = self.columns.get_mut(col) {
                ic.remove(&key, v);
            }
        }
        true
    }

    pub(crate) fn column(&self, name: &str) -> Option<&IndexedColumn> {
        self.columns.get(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_parse_and_merge() {
        let s = Schema::parse("price:int, tags:tokens,city:string").unwrap();
        assert_eq!(s.column("tags").unwrap(), ColumnType::Tokens);
        assert!(matches!(s.column("nope"), Err(Error::UnknownColumn(_))));
        let more = Schema::parse("rating:float").unwrap();
        assert_eq!(s.merged(&more).unwrap().columns.len(), 4);
        let clash = Schema::parse("price:float").unwrap();
        assert!(matches!(s.merged(&clash), Err(Error::SchemaConflict { .. })));
        assert!(Schema::parse("1bad:int").is_err());
    }

    #[test]
    fn json_coercion() {
        let s = Schema::parse("n:int,f:float,t:tokens,s:string").unwrap();
        let v: serde_json::Value =
            serde_json::json!({"n": 3, "f": 2, "t": "Cat  dog cat", "s": "x"});
        let rec = AttributeRecord::from_json(&s, v.as_object().unwrap()).unwrap();
        assert_eq!(rec.get("n"), Some(&Value::Int(3)));
        assert_eq!(rec.get("f"), Some(&Value::Float(2.0)));
        assert_eq!(rec.get("t"), Some(&Value::Tokens(vec!["cat".into(), "dog".into()])));
        let bad: serde_json::Value = serde_json::json!({"n": "three"});
        assert!(matches!(
            AttributeRecord::from_json(&s, bad.as_object().unwrap()),
            Err(Error::Type(_))
        ));
        let unknown: serde_json::Value = serde_json::json!({"zzz": 1});
        assert!(matches!(
            AttributeRecord::from_json(&s, unknown.as_object().unwrap()),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn table_indexes_follow_put_and_remove() {
        let s = Schema::parse("n:int,t:tokens").unwrap();
        let mut table = AttributeTable::new(&s);
        let a: Arc<str> = Arc::from("a");
        table.put(
            &a,
            Arc::new(
                AttributeRecord::new()
                    .with("n", Value::Int(5))
                    .with("t", Value::Tokens(tokenize("x y"))),
            ),
        );
        let snapshot = table.clone();
        table.put(&a, Arc::new(AttributeRecord::new().with("n", Value::Int(6))));
        match &table.column("n").unwrap().index {
            ColumnIndex::Int(m) => {
                assert!(m.get(&5).is_none());
                assert!(m.get(&6).unwrap().contains(&a));
            }
            _ => unreachable!(),
        }
        match &table.column("t").unwrap().index {
            ColumnIndex::Tokens(m) => assert!(m.is_empty()),
            _ => unreachable!(),
        }
        // the clone is unaffected
        match &snapshot.column("n").unwrap().index {
            ColumnIndex::Int(m) => assert!(m.get(&5).is_some()),
            _ => unreachable!(),
        }
        assert!(table.remove("a"));
        assert!(!table.remove("a"));
        assert!(table.column("n").unwrap().present.is_empty());
    }
}
