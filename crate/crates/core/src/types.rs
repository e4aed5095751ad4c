//! Column types, typed values and table definitions.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Name of the implicit timestamp column carried by every tuple.
pub const TIMESTAMP_COLUMN: &str = "RgmaTimestamp";

/// Declared type of a table column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Int,
    Real,
    /// Length-bounded text; the bound counts characters and is at least 1.
    String(u32),
    /// UTC milliseconds since the epoch.
    Timestamp,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int | ColumnType::Real | ColumnType::Timestamp)
    }

    /// Whether values of the two types can be compared with each other.
    pub fn comparable_with(self, other: ColumnType) -> bool {
        (self.is_numeric() && other.is_numeric())
            || (matches!(self, ColumnType::String(_)) && matches!(other, ColumnType::String(_)))
    }

    /// Converts a value into the representation stored for this type.
    ///
    /// Integers widen to REAL; nothing narrows. String length bounds are
    /// not checked here (see tuple validation).
    pub fn coerce(self, value: Value) -> Result<Value, TypeMismatch> {
        match (self, value) {
            (ColumnType::Int | ColumnType::Timestamp, Value::Int(i)) => Ok(Value::Int(i)),
            (ColumnType::Real, Value::Int(i)) => Ok(Value::Real(i as f64)),
            (ColumnType::Real, Value::Real(r)) => Ok(Value::Real(r)),
            (ColumnType::String(_), Value::Str(s)) => Ok(Value::Str(s)),
            (expected, found) => Err(TypeMismatch { expected, found }),
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Int => f.write_str("INT"),
            ColumnType::Real => f.write_str("REAL"),
            ColumnType::String(n) => write!(f, "STRING({n})"),
            ColumnType::Timestamp => f.write_str("TIMESTAMP"),
        }
    }
}

impl std::str::FromStr for ColumnType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "INT" => Ok(ColumnType::Int),
            "REAL" => Ok(ColumnType::Real),
            "TIMESTAMP" => Ok(ColumnType::Timestamp),
            _ => {
                let inner = upper
                    .strip_prefix("STRING(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .ok_or_else(|| format!("unknown type {s}"))?;
                match inner.trim().parse::<u32>() {
                    Ok(n) if n >= 1 => Ok(ColumnType::String(n)),
                    _ => Err(format!("invalid string bound in {s}")),
                }
            }
        }
    }
}

impl Serialize for ColumnType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("expected {expected}, found {found:?}")]
pub struct TypeMismatch {
    pub expected: ColumnType,
    pub found: Value,
}

/// A typed SQL value. There is no NULL.
#[derive(Debug, Clone)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    /// SQL comparison. Numeric values compare across INT/REAL; strings
    /// compare lexicographically; mixed kinds are incomparable.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Real(a), Value::Real(b)) => a.partial_cmp(b),
            (Value::Int(a), Value::Real(b)) => (*a as f64).partial_cmp(b),
            (Value::Real(a), Value::Int(b)) => a.partial_cmp(&(*b as f64)),
            (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    fn real_bits(r: f64) -> u64 {
        // -0.0 and 0.0 are the same key
        if r == 0.0 {
            0
        } else {
            r.to_bits()
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => Value::real_bits(*a) == Value::real_bits(*b),
            (Value::Str(a), Value::Str(b)) => a == b,
            _ => false,
        }
    }
}

// NaN never enters a validated tuple or a parsed literal.
impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Int(i) => {
                0u8.hash(state);
                i.hash(state);
            }
            Value::Real(r) => {
                1u8.hash(state);
                Value::real_bits(*r).hash(state);
            }
            Value::Str(s) => {
                2u8.hash(state);
                s.hash(state);
            }
        }
    }
}

/// Renders the value as an SQL literal.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Int(i) => serializer.serialize_i64(*i),
            Value::Real(r) => serializer.serialize_f64(*r),
            Value::Str(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::String(s) => Ok(Value::Str(s)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Int(i))
                } else {
                    n.as_f64()
                        .map(Value::Real)
                        .ok_or_else(|| serde::de::Error::custom("number out of range"))
                }
            }
            other => Err(serde::de::Error::custom(format!("not a value: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column { name: name.into(), ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("table name is empty")]
    EmptyName,
    #[error("table {0} has no columns")]
    NoColumns(String),
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error("column name {0} is reserved")]
    ReservedColumn(String),
    #[error("PRIMARY KEY references unknown column {0}")]
    UnknownKeyColumn(String),
    #[error("PRIMARY KEY lists {0} twice")]
    DuplicateKeyColumn(String),
    #[error("table {0} declares no defining fields")]
    NoDefiningFields(String),
}

/// A table declaration: ordered typed columns plus the defining fields that
/// identify what a tuple measures.
///
/// Column index `columns().len()` addresses the implicit timestamp column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TableDefRepr", into = "TableDefRepr")]
pub struct TableDef {
    name: String,
    columns: Vec<Column>,
    defining: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TableDefRepr {
    name: String,
    columns: Vec<Column>,
    defining_fields: Vec<String>,
}

impl TryFrom<TableDefRepr> for TableDef {
    type Error = SchemaError;

    fn try_from(repr: TableDefRepr) -> Result<Self, Self::Error> {
        TableDef::new(repr.name, repr.columns, repr.defining_fields)
    }
}

impl From<TableDef> for TableDefRepr {
    fn from(def: TableDef) -> Self {
        TableDefRepr {
            defining_fields: def.defining_fields().map(str::to_owned).collect(),
            name: def.name,
            columns: def.columns,
        }
    }
}

impl TableDef {
    pub fn new<S: AsRef<str>>(
        name: impl Into<String>,
        columns: Vec<Column>,
        defining: impl IntoIterator<Item = S>,
    ) -> Result<Self, SchemaError> {
        let name = name.into();
        if name.is_empty() {
            return Err(SchemaError::EmptyName);
        }
        if columns.is_empty() {
            return Err(SchemaError::NoColumns(name));
        }
        for (i, c) in columns.iter().enumerate() {
            if c.name.eq_ignore_ascii_case(TIMESTAMP_COLUMN) {
                return Err(SchemaError::ReservedColumn(c.name.clone()));
            }
            if columns[..i].iter().any(|p| p.name.eq_ignore_ascii_case(&c.name)) {
                return Err(SchemaError::DuplicateColumn(c.name.clone()));
            }
        }
        let mut key = Vec::new();
        for field in defining {
            let field = field.as_ref();
            let idx = columns
                .iter()
                .position(|c| c.name.eq_ignore_ascii_case(field))
                .ok_or_else(|| SchemaError::UnknownKeyColumn(field.to_owned()))?;
            if key.contains(&idx) {
                return Err(SchemaError::DuplicateKeyColumn(field.to_owned()));
            }
            key.push(idx);
        }
        if key.is_empty() {
            return Err(SchemaError::NoDefiningFields(name));
        }
        Ok(TableDef { name, columns, defining: key })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Indices of the defining fields in declaration order of the key clause.
    pub fn defining_indices(&self) -> &[usize] {
        &self.defining
    }

    pub fn defining_fields(&self) -> impl Iterator<Item = &str> {
        self.defining.iter().map(|&i| self.columns[i].name.as_str())
    }

    pub fn timestamp_index(&self) -> usize {
        self.columns.len()
    }

    /// Resolves a column name (case-insensitively), including the implicit
    /// timestamp column.
    pub fn resolve(&self, column: &str) -> Option<usize> {
        if column.eq_ignore_ascii_case(TIMESTAMP_COLUMN) {
            return Some(self.columns.len());
        }
        self.columns.iter().position(|c| c.name.eq_ignore_ascii_case(column))
    }

    pub fn type_at(&self, idx: usize) -> ColumnType {
        if idx == self.columns.len() {
            ColumnType::Timestamp
        } else {
            self.columns[idx].ty
        }
    }

    pub fn name_at(&self, idx: usize) -> &str {
        if idx == self.columns.len() {
            TIMESTAMP_COLUMN
        } else {
            &self.columns[idx].name
        }
    }

    pub fn is_named(&self, name: &str) -> bool {
        self.name.eq_ignore_ascii_case(name)
    }

    /// Equality up to the case of identifiers.
    pub fn same_definition(&self, other: &TableDef) -> bool {
        self.is_named(&other.name)
            && self.defining == other.defining
            && self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|(a, b)| a.ty == b.ty && a.name.eq_ignore_ascii_case(&b.name))
    }
}

/// Canonical CREATE TABLE text.
impl fmt::Display for TableDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CREATE TABLE {} (", self.name)?;
        for c in &self.columns {
            write!(f, "{} {}, ", c.name, c.ty)?;
        }
        let key: Vec<&str> = self.defining_fields().collect();
        write!(f, "PRIMARY KEY ({}))", key.join(", "))
    }
}
