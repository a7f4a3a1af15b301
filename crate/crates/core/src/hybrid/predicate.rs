//! Attribute predicate AST, text parser and evaluation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::storage::{AttributeRecord, AttributeTable, ColumnIndex, ColumnType, F64Key, Schema, Value};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    Contains,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Contains => "CONTAINS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Literal {
    fn as_f64(&self) -> Option<f64> {
        match *self {
            Literal::Int(i) => Some(i as f64),
            Literal::Float(f) => Some(f),
            Literal::Str(_) => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => write!(f, "{x:?}"),
            Literal::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub column: String,
    pub op: CmpOp,
    pub value: Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    True,
    Atom(Atom),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join(f: &mut fmt::Formatter<'_>, parts: &[Predicate], sep: &str) -> fmt::Result {
            f.write_str("(")?;
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                write!(f, "{p}")?;
            }
            f.write_str(")")
        }
        match self {
            Predicate::True => f.write_str("TRUE"),
            Predicate::Atom(a) => write!(f, "{} {} {}", a.column, a.op, a.value),
            Predicate::And(p) => join(f, p, " AND "),
            Predicate::Or(p) => join(f, p, " OR "),
        }
    }
}

impl Predicate {
    pub fn atom(column: impl Into<String>, op: CmpOp, value: Literal) -> Self {
        Predicate::Atom(Atom {
            column: column.into(),
            op,
            value,
        })
    }

    pub fn contains(column: impl Into<String>, token: impl Into<String>) -> Self {
        Predicate::atom(column, CmpOp::Contains, Literal::Str(token.into()))
    }

    pub fn and(self, other: Predicate) -> Self {
        Predicate::And(vec![self, other])
    }

    pub fn or(self, other: Predicate) -> Self {
        Predicate::Or(vec![self, other])
    }

    pub fn parse(text: &str) -> Result<Predicate> {
        Parser::new(text).parse()
    }

    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        fn walk<'a>(p: &'a Predicate, out: &mut Vec<&'a Atom>) {
            match p {
                Predicate::True => {}
                Predicate::Atom(a) => out.push(a),
                Predicate::And(c) | Predicate::Or(c) => c.iter().for_each(|p| walk(p, out)),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Checks columns and literal types against the schema.
    pub fn check(&self, schema: &Schema) -> Result<()> {
        for a in self.atoms() {
            let ty = schema.column(&a.column)?;
            let bad = |why: &str| Err(Error::Type(format!("{} {} {}: {why}", a.column, a.op, a.value)));
            match (ty, a.op) {
                (ColumnType::Tokens, CmpOp::Contains) => {
                    if !matches!(a.value, Literal::Str(_)) {
                        return bad("CONTAINS takes a string token");
                    }
                }
                (ColumnType::Tokens, _) => return bad("token columns only support CONTAINS"),
                (_, CmpOp::Contains) => return bad("CONTAINS applies only to token columns"),
                (ColumnType::String, CmpOp::Eq | CmpOp::Ne) => {
                    if !matches!(a.value, Literal::Str(_)) {
                        return bad("string column compared with a number");
                    }
                }
                (ColumnType::String, _) => return bad("string columns only support = and !="),
                (ColumnType::Int | ColumnType::Float, _) => {
                    if a.value.as_f64().is_none() {
                        return bad("numeric column compared with a string");
                    }
                }
            }
        }
        Ok(())
    }

    /// Missing attributes make an atom false.
    pub fn matches(&self, record: Option<&AttributeRecord>) -> bool {
        match self {
            Predicate::True => true,
            Predicate::Atom(a) => record.and_then(|r| r.get(&a.column)).is_some_and(|v| atom_matches(a, v)),
            Predicate::And(c) => c.iter().all(|p| p.matches(record)),
            Predicate::Or(c) => c.iter().any(|p| p.matches(record)),
        }
    }

    /// Assets satisfying the predicate according to the column indexes, or
    /// `None` for "every asset".
    pub(crate) fn candidates(&self, table: &AttributeTable) -> Option<im::OrdSet<Arc<str>>> {
        match self {
            Predicate::True => None,
            Predicate::Atom(a) => Some(atom_candidates(a, table)),
            Predicate::And(children) => {
                let mut sets: Vec<im::OrdSet<Arc<str>>> = children.iter().filter_map(|c| c.candidates(table)).collect();
                if sets.is_empty() {
                    return None;
                }
                sets.sort_by_key(|s| s.len());
                let mut it = sets.into_iter();
                let first = it.next().unwrap();
                Some(it.fold(first, |acc, s| {
                    acc.into_iter().filter(|a| s.contains(a)).collect()
                }))
            }
            Predicate::Or(children) => {
                let mut acc = im::OrdSet::new();
                for c in children {
                    match c.candidates(table) {
                        None => return None,
                        Some(s) => acc = acc.union(s),
                    }
                }
                Some(acc)
            }
        }
    }
}

fn cmp_f64(op: CmpOp, v: f64, x: f64) -> bool {
    match op {
        CmpOp::Eq => v == x,
        CmpOp::Ne => v != x,
        CmpOp::Lt => v < x,
        CmpOp::Gt => v > x,
        CmpOp::Le => v <= x,
        CmpOp::Ge => v >= x,
        CmpOp::Contains => false,
    }
}

fn atom_matches(a: &Atom, v: &Value) -> bool {
    match (v, &a.value) {
        (Value::Int(i), Literal::Int(x)) => match a.op {
            CmpOp::Eq => i == x,
            CmpOp::Ne => i != x,
            CmpOp::Lt => i < x,
            CmpOp::Gt => i > x,
            CmpOp::Le => i <= x,
            CmpOp::Ge => i >= x,
            CmpOp::Contains => false,
        },
        (Value::Int(i), Literal::Float(x)) => cmp_f64(a.op, *i as f64, *x),
        (Value::Float(f), lit) => lit.as_f64().is_some_and(|x| cmp_f64(a.op, *f, x)),
        (Value::Str(s), Literal::Str(x)) => match a.op {
            CmpOp::Eq => s == x,
            CmpOp::Ne => s != x,
            _ => false,
        },
        (Value::Tokens(t), Literal::Str(x)) => {
            a.op == CmpOp::Contains
                && if x.bytes().all(|b| b.is_ascii() && !b.is_ascii_uppercase()) {
                    t.binary_search_by(|tok| tok.as_str().cmp(x)).is_ok()
                } else {
                    t.binary_search(&x.to_lowercase()).is_ok()
                }
        }
        _ => false,
    }
}

/// Integer bounds equivalent to comparing against `x`.
fn int_range(op: CmpOp, x: f64) -> Option<(std::ops::Bound<i64>, std::ops::Bound<i64>)> {
    use std::ops::Bound::*;
    let clamp = |f: f64| f.clamp(i64::MIN as f64, i64::MAX as f64) as i64;
    match op {
        CmpOp::Lt => Some((Unbounded, Excluded(clamp(x.ceil())))),
        CmpOp::Le => Some((Unbounded, Included(clamp(x.floor())))),
        CmpOp::Gt => Some((Excluded(clamp(x.floor())), Unbounded)),
        CmpOp::Ge => Some((Included(clamp(x.ceil())), Unbounded)),
        _ => None,
    }
}

fn union_all<'a>(sets: impl Iterator<Item = &'a im::OrdSet<Arc<str>>>) -> im::OrdSet<Arc<str>> {
    sets.flat_map(|s| s.iter().cloned()).collect()
}

fn atom_candidates(a: &Atom, table: &AttributeTable) -> im::OrdSet<Arc<str>> {
    use std::ops::Bound::*;
    let Some(col) = table.column(&a.column) else {
        return im::OrdSet::new();
    };
    let eq_set = |col_index: &ColumnIndex| -> im::OrdSet<Arc<str>> {
        match (col_index, &a.value) {
            (ColumnIndex::Int(m), lit) => {
                let x = lit.as_f64().unwrap_or(f64::NAN);
                if x.fract() == 0.0 && x.abs() < 9.2e18 {
                    m.get(&(x as i64)).cloned().unwrap_or_default()
                } else {
                    im::OrdSet::new()
                }
            }
            (ColumnIndex::Float(m), lit) => lit
                .as_f64()
                .and_then(|x| m.get(&F64Key(x)).cloned())
                .unwrap_or_default(),
            (ColumnIndex::Str(m), Literal::Str(s)) => m.get(s.as_str()).cloned().unwrap_or_default(),
            (ColumnIndex::Tokens(m), Literal::Str(s)) => m.get(s.to_lowercase().as_str()).cloned().unwrap_or_default(),
            _ => im::OrdSet::new(),
        }
    };
    match a.op {
        CmpOp::Eq | CmpOp::Contains => eq_set(&col.index),
        CmpOp::Ne => col.present.clone().relative_complement(eq_set(&col.index)),
        op => {
            let Some(x) = a.value.as_f64() else {
                return im::OrdSet::new();
            };
            match &col.index {
                ColumnIndex::Int(m) => {
                    let (lo, hi) = int_range(op, x).unwrap();
                    let empty = match (lo, hi) {
                        (Excluded(l), Unbounded) => l == i64::MAX,
                        (Unbounded, Excluded(h)) => h == i64::MIN,
                        _ => false,
                    };
                    if empty {
                        return im::OrdSet::new();
                    }
                    union_all(m.range((lo, hi)).map(|(_, s)| s))
                }
                ColumnIndex::Float(m) => {
                    let k = F64Key(x);
                    let bounds = match op {
                        CmpOp::Lt => (Unbounded, Excluded(k)),
                        CmpOp::Le => (Unbounded, Included(k)),
                        CmpOp::Gt => (Excluded(k), Unbounded),
                        _ => (Included(k), Unbounded),
                    };
                    union_all(m.range(bounds).map(|(_, s)| s))
                }
                _ => im::OrdSet::new(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

#[derive(Debug, PartialEq)]
enum Tok {
    LParen,
    RParen,
    Ident(String),
    Op(CmpOp),
    Lit(Literal),
    And,
    Or,
    Contains,
    True,
    End,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn err<T>(&self, at: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position: at,
            message: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    /// Next token and its start offset, without consuming it.
    fn peek(&mut self) -> Result<(Tok, usize, usize)> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::End, start, start));
        };
        let two = rest.get(..2).unwrap_or("");
        let tok = |t: Tok, len: usize| Ok((t, start, start + len));
        match c {
            '(' => tok(Tok::LParen, 1),
            ')' => tok(Tok::RParen, 1),
            '!' if two == "!=" => tok(Tok::Op(CmpOp::Ne), 2),
            '<' if two == "<>" => tok(Tok::Op(CmpOp::Ne), 2),
            '<' if two == "<=" => tok(Tok::Op(CmpOp::Le), 2),
            '>' if two == ">=" => tok(Tok::Op(CmpOp::Ge), 2),
            '=' if two == "==" => tok(Tok::Op(CmpOp::Eq), 2),
            '<' => tok(Tok::Op(CmpOp::Lt), 1),
            '>' => tok(Tok::Op(CmpOp::Gt), 1),
            '=' => tok(Tok::Op(CmpOp::Eq), 1),
            '≤' => tok(Tok::Op(CmpOp::Le), c.len_utf8()),
            '≥' => tok(Tok::Op(CmpOp::Ge), c.len_utf8()),
            '\'' | '"' => {
                let mut out = String::new();
                let mut it = rest.char_indices().skip(1).peekable();
                while let Some((i, ch)) = it.next() {
                    if ch == c {
                        if it.peek().map(|&(_, n)| n) == Some(c) {
                            out.push(c);
                            it.next();
                            continue;
                        }
                        return tok(Tok::Lit(Literal::Str(out)), i + 1);
                    }
                    if ch == '\\' {
                        if let Some((_, n)) = it.next() {
                            out.push(n);
                            continue;
                        }
                    }
                    out.push(ch);
                }
                self.err(start, "unterminated string literal")
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let len = rest
                    .char_indices()
                    .take_while(|&(i, ch)| {
                        ch.is_ascii_digit()
                            || ch == '.'
                            || ch == 'e'
                            || ch == 'E'
                            || ((ch == '-' || ch == '+')
                                && (i == 0 || matches!(rest.as_bytes()[i - 1], b'e' | b'E')))
                    })
                    .map(|(i, ch)| i + ch.len_utf8())
                    .last()
                    .unwrap_or(0);
                let text = &rest[..len];
                if let Ok(i) = text.parse::<i64>() {
                    return tok(Tok::Lit(Literal::Int(i)), len);
                }
                match text.parse::<f64>() {
                    Ok(f) if f.is_finite() => tok(Tok::Lit(Literal::Float(f)), len),
                    _ => self.err(start, format!("invalid number `{text}`")),
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let len = rest
                    .char_indices()
                    .take_while(|&(_, ch)| ch.is_alphanumeric() || ch == '_' || ch == '.')
                    .map(|(i, ch)| i + ch.len_utf8())
                    .last()
                    .unwrap_or(0);
                let word = &rest[..len];
                let t = match word.to_ascii_uppercase().as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "CONTAINS" => Tok::Contains,
                    "TRUE" => Tok::True,
                    _ => Tok::Ident(word.to_string()),
                };
                tok(t, len)
            }
            other => self.err(start, format!("unexpected character `{other}`")),
        }
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        let (t, start, end) = self.peek()?;
        self.pos = end;
        Ok((t, start))
    }

    fn parse(mut self) -> Result<Predicate> {
        let p = self.parse_or()?;
        let (t, at) = self.next()?;
        if t != Tok::End {
            return self.err(at, "expected end of expression");
        }
        Ok(p)
    }

    fn parse_or(&mut self) -> Result<Predicate> {
        let mut parts = vec![self.parse_and()?];
        while self.peek()?.0 == Tok::Or {
            self.next()?;
            parts.push(self.parse_and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::Or(parts) })
    }

    fn parse_and(&mut self) -> Result<Predicate> {
        let mut parts = vec![self.parse_primary()?];
        while self.peek()?.0 == Tok::And {
            self.next()?;
            parts.push(self.parse_primary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::And(parts) })
    }

    fn parse_primary(&mut self) -> Result<Predicate> {
        let (t, at) = self.next()?;
        match t {
            Tok::LParen => {
                let inner = self.parse_or()?;
                let (t, at) = self.next()?;
                if t != Tok::RParen {
                    return self.err(at, "expected `)`");
                }
                Ok(inner)
            }
            Tok::True => Ok(Predicate::True),
            Tok::Ident(column) => {
                let (t, at) = self.next()?;
                let op = match t {
                    Tok::Op(op) => op,
                    Tok::Contains => CmpOp::Contains,
                    _ => return self.err(at, "expected a comparison operator or CONTAINS"),
                };
                let (t, at) = self.next()?;
                match t {
                    Tok::Lit(value) => {
                        if op == CmpOp::Contains && !matches!(value, Literal::Str(_)) {
                            return self.err(at, "CONTAINS expects a quoted token");
                        }
                        Ok(Predicate::Atom(Atom { column, op, value }))
                    }
                    _ => self.err(at, "expected a literal"),
                }
            }
            Tok::End => self.err(at, "unexpected end of expression"),
            _ => self.err(at, "expected a column name, `(` or TRUE"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::tokenize;

    #[test]
    fn precedence_and_parentheses() {
        let p = Predicate::parse("a = 1 OR b < 2.5 AND c CONTAINS 'x'").unwrap();
        match p {
            Predicate::Or(parts) => {
                assert_eq!(parts.len(), 2);
                assert!(matches!(parts[1], Predicate::And(_)));
            }
            other => panic!("{other:?}"),
        }
        let p = Predicate::parse("(a = 1 OR b < 2) AND c CONTAINS \"x\"").unwrap();
        assert!(matches!(p, Predicate::And(_)));
        assert_eq!(Predicate::parse("  TRUE ").unwrap(), Predicate::True);
    }

    #[test]
    fn literals() {
        let p = Predicate::parse("x >= -3 and y != 'it''s' or z <= 1e-3").unwrap();
        let atoms = p.atoms();
        assert_eq!(atoms[0].value, Literal::Int(-3));
        assert_eq!(atoms[1].value, Literal::Str("it's".into()));
        assert_eq!(atoms[2].value, Literal::Float(1e-3));
    }

    #[test]
    fn errors_report_position() {
        match Predicate::parse("a = 1 AND") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 9),
            other => panic!("{other:?}"),
        }
        match Predicate::parse("a = 'open") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
        match Predicate::parse("(a = 1") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Predicate::parse("a # 1"), Err(Error::Parse { position: 2, .. })));
    }

    #[test]
    fn type_checks() {
        let s = Schema::parse("n:int,tags:tokens,city:string").unwrap();
        assert!(Predicate::parse("n < 3.5").unwrap().check(&s).is_ok());
        assert!(Predicate::parse("tags CONTAINS 'a'").unwrap().check(&s).is_ok());
        assert!(matches!(Predicate::parse("n CONTAINS 'a'").unwrap().check(&s), Err(Error::Type(_))));
        assert!(matches!(Predicate::parse("n = 'a'").unwrap().check(&s), Err(Error::Type(_))));
        assert!(matches!(Predicate::parse("city < 'a'").unwrap().check(&s), Err(Error::Type(_))));
        assert!(matches!(Predicate::parse("nope = 1").unwrap().check(&s), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn evaluation_and_null_semantics() {
        let rec = AttributeRecord::new()
            .with("n", Value::Int(5))
            .with("tags", Value::Tokens(tokenize("Cat dog")));
        let yes = ["n = 5", "n > 4.5", "n != 6", "tags CONTAINS 'CAT'", "n < 0 OR tags CONTAINS 'dog'"];
        for text in yes {
            assert!(Predicate::parse(text).unwrap().matches(Some(&rec)), "{text}");
        }
        let no = ["n = 5.5", "n < 5", "city != 'x'", "tags CONTAINS 'bird'", "n = 5 AND city = 'x'"];
        for text in no {
            assert!(!Predicate::parse(text).unwrap().matches(Some(&rec)), "{text}");
        }
        assert!(!Predicate::parse("n = 5").unwrap().matches(None));
        assert!(Predicate::True.matches(None));
    }

    #[test]
    fn display_reparses() {
        let p = Predicate::parse("a = 1 OR (b < 2.5 AND c CONTAINS 'it''s')").unwrap();
        assert_eq!(Predicate::parse(&p.to_string()).unwrap(), p);
    }
}
