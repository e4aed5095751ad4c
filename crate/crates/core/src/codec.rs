//! Canonical one-line tuple encoding used on the wire and in resilient logs.
//!
//! A tuple is a flat JSON object: `"table"` first, then the declared
//! columns in declaration order, then `RgmaTimestamp`. The output is
//! byte-stable for a given tuple; newlines inside strings are escaped so a
//! line never spans two lines.

use std::fmt::Write as _;

use thiserror::Error;

use crate::tuple::{RawTuple, Tuple, TupleError};
use crate::types::{ColumnType, TableDef, Value, TIMESTAMP_COLUMN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("malformed tuple line: {0}")]
    Malformed(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("missing field {0}")]
    MissingField(String),
    #[error("unexpected field {0}")]
    UnexpectedField(String),
    #[error(transparent)]
    Invalid(#[from] TupleError),
}

fn json_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization cannot fail"));
}

pub fn encode_tuple(def: &TableDef, t: &Tuple) -> String {
    let mut out = String::with_capacity(64);
    out.push_str("{\"table\":");
    json_str(&mut out, def.name());
    for (col, v) in def.columns().iter().zip(t.values()) {
        out.push(',');
        json_str(&mut out, &col.name);
        out.push(':');
        match v {
            Value::Int(i) => write!(out, "{i}").expect("write to string"),
            Value::Real(r) => out.push_str(&serde_json::to_string(r).expect("finite real")),
            Value::Str(s) => json_str(&mut out, s),
        }
    }
    write!(out, ",\"{TIMESTAMP_COLUMN}\":{}}}", t.timestamp()).expect("write to string");
    out
}

/// Reads the `"table"` field of a line without decoding the rest.
pub fn peek_table(line: &str) -> Result<String, CodecError> {
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(line).map_err(|e| CodecError::Malformed(e.to_string()))?;
    match obj.get("table") {
        Some(serde_json::Value::String(t)) => Ok(t.clone()),
        _ => Err(CodecError::MissingField("table".into())),
    }
}

pub fn decode_tuple(line: &str, def: &TableDef) -> Result<Tuple, CodecError> {
    decode_with(line, |name| def.is_named(name).then_some(def))
}

/// Decodes a line whose table is one of `defs`.
pub fn decode_any(line: &str, defs: &[TableDef]) -> Result<Tuple, CodecError> {
    decode_with(line, |name| defs.iter().find(|d| d.is_named(name)))
}

fn decode_with<'a>(line: &str, lookup: impl Fn(&str) -> Option<&'a TableDef>) -> Result<Tuple, CodecError> {
    let mut obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(line.trim_end()).map_err(|e| CodecError::Malformed(e.to_string()))?;
    let table = match obj.remove("table") {
        Some(serde_json::Value::String(t)) => t,
        Some(_) => return Err(CodecError::Malformed("table must be a string".into())),
        None => return Err(CodecError::MissingField("table".into())),
    };
    let def = lookup(&table).ok_or(CodecError::UnknownTable(table))?;
    let mut fields = Vec::with_capacity(def.columns().len());
    for col in def.columns() {
        let raw = obj.remove(&col.name).ok_or_else(|| CodecError::MissingField(col.name.clone()))?;
        fields.push((col.name.clone(), json_to_value(&col.name, col.ty, raw)?));
    }
    let ts = match obj.remove(TIMESTAMP_COLUMN) {
        Some(serde_json::Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| CodecError::Malformed(format!("{TIMESTAMP_COLUMN} must be an integer")))?,
        Some(_) => return Err(CodecError::Malformed(format!("{TIMESTAMP_COLUMN} must be an integer"))),
        None => return Err(CodecError::MissingField(TIMESTAMP_COLUMN.into())),
    };
    if let Some(extra) = obj.keys().next() {
        return Err(CodecError::UnexpectedField(extra.clone()));
    }
    let raw = RawTuple { table: def.name().to_owned(), fields, timestamp: Some(ts) };
    Ok(crate::tuple::validate_tuple(def, raw, ts)?)
}

fn json_to_value(column: &str, ty: ColumnType, raw: serde_json::Value) -> Result<Value, CodecError> {
    let mismatch = || CodecError::Malformed(format!("column {column}: expected {ty}"));
    match (ty, raw) {
        (ColumnType::String(_), serde_json::Value::String(s)) => Ok(Value::Str(s)),
        (ColumnType::Int | ColumnType::Timestamp, serde_json::Value::Number(n)) => {
            n.as_i64().map(Value::Int).ok_or_else(mismatch)
        }
        (ColumnType::Real, serde_json::Value::Number(n)) => n.as_f64().map(Value::Real).ok_or_else(mismatch),
        _ => Err(mismatch()),
    }
}
