//! Relational grid monitoring engines.
//!
//! Producers publish timestamped tuples of SQL-declared tables, each
//! restricted to a view (`WHERE col = value AND ...`). A soft-state
//! [`registry`] records who publishes what; the [`mediator`] picks the
//! producers that can answer a History, Latest or Continuous query and
//! combines their answers. This crate holds the engines; the network
//! transport lives in `rgma-agents`.

pub mod archiver;
pub mod clock;
pub mod codec;
pub mod consumer;
pub mod mediator;
pub mod producer;
pub mod registry;
pub mod sql;
pub mod tuple;
pub mod types;

pub use clock::{Clock, ManualClock, SystemClock};
pub use mediator::{ProducerKind, QueryType};
pub use tuple::{latest_merge, validate_tuple, DefiningKey, RawTuple, Tuple, TupleBatch};
pub use types::{Column, ColumnType, TableDef, Value, TIMESTAMP_COLUMN};
