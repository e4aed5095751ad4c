//! The SQL subset: CREATE TABLE, INSERT, SELECT and producer view
//! predicates.
//!
//! Keywords and identifiers are case-insensitive; string literals are
//! single-quoted with `''` as the escape for a quote. There are no NULLs.
//! Timestamps are written as integer epoch milliseconds, or as `NOW()`
//! optionally offset by a number of milliseconds.

mod ast;
mod bind;
mod consistency;
mod lexer;
mod parser;

use thiserror::Error;

use crate::types::{ColumnType, SchemaError};

pub use ast::{
    CmpOp, ColumnRef, Comparison, InsertStatement, Literal, Operand, Projection, SelectQuery, TableRef,
    ViewPredicate, WhereExpr,
};
pub use bind::{bind_select, bind_view, bind_where, BoundExpr, BoundOperand, BoundSelect, BoundView, ColumnAt};
pub use consistency::predicate_consistent;
pub use parser::{parse_create_table, parse_insert, parse_select, parse_view_predicate, parse_where};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SqlError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error("unknown type {0}")]
    UnknownType(String),
    #[error("missing PRIMARY KEY clause")]
    MissingPrimaryKey,
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("values group at {pos} has {found} values for {expected} columns")]
    Arity { pos: usize, expected: usize, found: usize },
    #[error("at most two tables may be joined")]
    TooManyTables,
    #[error("a two-table query needs an equality between columns of both tables")]
    JoinWithoutEquality,
    #[error("unknown table qualifier {0}")]
    UnknownQualifier(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),
    #[error("type mismatch for {column}: expected {expected}, found {found}")]
    TypeMismatch { column: String, expected: ColumnType, found: String },
    #[error("invalid view predicate: {0}")]
    NotAView(String),
}

impl SqlError {
    pub(crate) fn syntax(pos: usize, message: impl Into<String>) -> Self {
        SqlError::Syntax { pos, message: message.into() }
    }
}

macro_rules! text_serde {
    ($ty:ty, $parse:expr) => {
        impl serde::Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> serde::Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
                $parse(&text).map_err(serde::de::Error::custom)
            }
        }
    };
}

// On the wire, statements travel as their canonical SQL text.
text_serde!(SelectQuery, parse_select);
text_serde!(ViewPredicate, parse_view_predicate);
text_serde!(WhereExpr, parse_where);
