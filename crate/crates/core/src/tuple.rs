//! Timestamped tuples, validation, projection and the latest-value merge.

use std::collections::HashMap;

use thiserror::Error;

use crate::sql::{ColumnRef, InsertStatement, Literal, Projection};
use crate::types::{ColumnType, TableDef, Value, TIMESTAMP_COLUMN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TupleError {
    #[error("tuple is for table {found}, expected {expected}")]
    WrongTable { expected: String, found: String },
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column {0} given twice")]
    DuplicateColumn(String),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("column {column}: expected {expected}, found {found}")]
    TypeMismatch { column: String, expected: ColumnType, found: String },
    #[error("column {column}: {len} characters exceed STRING({max})")]
    StringTooLong { column: String, max: u32, len: usize },
    #[error("column {0}: non-finite REAL")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch mixes tables {0} and {1}")]
    MixedBatch(String, String),
}

/// An unvalidated tuple as submitted by a publisher. The timestamp may be
/// given either in `timestamp` or as an `RgmaTimestamp` field.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTuple {
    pub table: String,
    pub fields: Vec<(String, Value)>,
    pub timestamp: Option<i64>,
}

impl RawTuple {
    pub fn new(table: impl Into<String>) -> Self {
        RawTuple { table: table.into(), fields: Vec::new(), timestamp: None }
    }

    pub fn field(mut self, column: impl Into<String>, value: impl Into<Value>) -> Self {
        self.fields.push((column.into(), value.into()));
        self
    }

    pub fn at(mut self, timestamp: i64) -> Self {
        self.timestamp = Some(timestamp);
        self
    }

    /// Names the values of a validated tuple, keeping its timestamp.
    pub fn from_tuple(def: &TableDef, t: &Tuple) -> Self {
        RawTuple {
            table: t.table.clone(),
            fields: def.columns().iter().map(|c| c.name.clone()).zip(t.values.iter().cloned()).collect(),
            timestamp: Some(t.timestamp),
        }
    }
}

/// A validated measurement row: one type-correct value per declared column,
/// in declaration order, plus the timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tuple {
    table: String,
    values: Vec<Value>,
    timestamp: i64,
}

impl Tuple {
    /// Builds a tuple without checking it against a definition. Callers must
    /// supply exactly one correctly typed value per column.
    pub fn new_unchecked(table: impl Into<String>, values: Vec<Value>, timestamp: i64) -> Self {
        Tuple { table: table.into(), values, timestamp }
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    /// Value by column index; index `values().len()` is the timestamp.
    pub fn value(&self, idx: usize) -> Value {
        if idx == self.values.len() {
            Value::Int(self.timestamp)
        } else {
            self.values[idx].clone()
        }
    }

    pub fn get(&self, def: &TableDef, column: &str) -> Option<Value> {
        def.resolve(column).map(|i| self.value(i))
    }

    /// Re-checks a tuple built elsewhere (e.g. by user code) against `def`.
    pub fn check(&self, def: &TableDef) -> Result<(), TupleError> {
        if !def.is_named(&self.table) {
            return Err(TupleError::WrongTable { expected: def.name().to_owned(), found: self.table.clone() });
        }
        if self.values.len() != def.columns().len() {
            let missing = def.columns().get(self.values.len()).map_or("?", |c| c.name.as_str());
            return Err(TupleError::MissingColumn(missing.to_owned()));
        }
        for (col, v) in def.columns().iter().zip(&self.values) {
            check_value(&col.name, col.ty, v.clone())?;
        }
        Ok(())
    }
}

fn check_value(column: &str, ty: ColumnType, value: Value) -> Result<Value, TupleError> {
    let v = ty.coerce(value).map_err(|e| TupleError::TypeMismatch {
        column: column.to_owned(),
        expected: e.expected,
        found: e.found.to_string(),
    })?;
    match (&v, ty) {
        (Value::Real(r), _) if !r.is_finite() => Err(TupleError::NonFinite(column.to_owned())),
        (Value::Str(s), ColumnType::String(max)) => {
            let len = s.chars().count();
            if len > max as usize {
                Err(TupleError::StringTooLong { column: column.to_owned(), max, len })
            } else {
                Ok(v)
            }
        }
        _ => Ok(v),
    }
}

/// Checks a submitted tuple against its table and stamps `now_ms` when no
/// timestamp was supplied.
pub fn validate_tuple(def: &TableDef, raw: RawTuple, now_ms: i64) -> Result<Tuple, TupleError> {
    if !def.is_named(&raw.table) {
        return Err(TupleError::WrongTable { expected: def.name().to_owned(), found: raw.table });
    }
    let mut slots: Vec<Option<Value>> = vec![None; def.columns().len()];
    let mut timestamp = raw.timestamp;
    let mut explicit_ts = false;
    for (name, value) in raw.fields {
        let idx = def.resolve(&name).ok_or_else(|| TupleError::UnknownColumn(name.clone()))?;
        if idx == def.timestamp_index() {
            if explicit_ts {
                return Err(TupleError::DuplicateColumn(name));
            }
            explicit_ts = true;
            let Value::Int(ts) = value else {
                return Err(TupleError::TypeMismatch {
                    column: TIMESTAMP_COLUMN.to_owned(),
                    expected: ColumnType::Timestamp,
                    found: value.to_string(),
                });
            };
            timestamp = Some(ts);
            continue;
        }
        if slots[idx].is_some() {
            return Err(TupleError::DuplicateColumn(name));
        }
        let col = &def.columns()[idx];
        slots[idx] = Some(check_value(&col.name, col.ty, value)?);
    }
    let values = slots
        .into_iter()
        .zip(def.columns())
        .map(|(v, c)| v.ok_or_else(|| TupleError::MissingColumn(c.name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tuple { table: def.name().to_owned(), values, timestamp: timestamp.unwrap_or(now_ms) })
}

/// Expands an INSERT into raw tuples, one per VALUES group. `NOW()` literals
/// resolve to `now_ms`.
pub fn insert_to_raw(stmt: &InsertStatement, now_ms: i64) -> Vec<RawTuple> {
    stmt.rows
        .iter()
        .map(|row| {
            let fields = stmt
                .columns
                .iter()
                .zip(row)
                .map(|(c, lit)| {
                    let v = match lit {
                        Literal::Value(v) => v.clone(),
                        Literal::Now(off) => Value::Int(now_ms.saturating_add(*off)),
                    };
                    (c.clone(), v)
                })
                .collect();
            RawTuple { table: stmt.table.clone(), fields, timestamp: None }
        })
        .collect()
}

/// The values of a tuple's defining fields, in key declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DefiningKey(pub Vec<Value>);

impl DefiningKey {
    pub fn of(def: &TableDef, t: &Tuple) -> Self {
        DefiningKey(def.defining_indices().iter().map(|&i| t.values[i].clone()).collect())
    }
}

/// Tuples of one table in publication order.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleBatch {
    table: String,
    tuples: Vec<Tuple>,
}

impl TupleBatch {
    pub fn new(tuples: Vec<Tuple>) -> Result<Self, TupleError> {
        let table = tuples.first().ok_or(TupleError::EmptyBatch)?.table.clone();
        if let Some(other) = tuples.iter().find(|t| !t.table.eq_ignore_ascii_case(&table)) {
            return Err(TupleError::MixedBatch(table, other.table.clone()));
        }
        Ok(TupleBatch { table, tuples })
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn into_tuples(self) -> Vec<Tuple> {
        self.tuples
    }
}

/// Keeps one tuple per defining key: the one with the greatest timestamp,
/// and on equal timestamps the later one in input order. Survivors are
/// returned in order of their key's first appearance.
pub fn latest_merge(tuples: impl IntoIterator<Item = Tuple>, def: &TableDef) -> Vec<Tuple> {
    let mut index: HashMap<DefiningKey, usize> = HashMap::new();
    let mut out: Vec<Tuple> = Vec::new();
    for t in tuples {
        match index.entry(DefiningKey::of(def, &t)) {
            std::collections::hash_map::Entry::Occupied(slot) => {
                let cur = &mut out[*slot.get()];
                if t.timestamp >= cur.timestamp {
                    *cur = t;
                }
            }
            std::collections::hash_map::Entry::Vacant(slot) => {
                slot.insert(out.len());
                out.push(t);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown column {0}")]
pub struct UnknownColumn(pub String);

/// Values of `t` in projection order. STAR yields the declared columns
/// followed by the timestamp.
pub fn project(def: &TableDef, t: &Tuple, projection: &Projection) -> Result<Vec<Value>, UnknownColumn> {
    match projection {
        Projection::Star => Ok((0..=def.columns().len()).map(|i| t.value(i)).collect()),
        Projection::Columns(cols) => cols
            .iter()
            .map(|c: &ColumnRef| {
                let qualified_elsewhere = c.qualifier.as_ref().is_some_and(|q| !def.is_named(q));
                match def.resolve(&c.name) {
                    Some(i) if !qualified_elsewhere => Ok(t.value(i)),
                    _ => Err(UnknownColumn(c.to_string())),
                }
            })
            .collect(),
    }
}
