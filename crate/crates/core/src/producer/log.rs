//! Append-only log backing a resilient stream producer.
//!
//! One canonical tuple line per record. A batch is written with a single
//! `write_all` and synced before the insert is acknowledged, so after a
//! crash the log holds every acknowledged tuple plus at most one torn
//! trailing line, which recovery drops.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{decode_any, encode_tuple, CodecError};
use crate::tuple::Tuple;
use crate::types::TableDef;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("log {path} line {line}: {source}")]
    Corrupt { path: PathBuf, line: usize, source: CodecError },
}

#[derive(Debug)]
pub struct ResilientLog {
    path: PathBuf,
    file: File,
    bytes: u64,
    records: u64,
}

impl ResilientLog {
    /// Opens (creating if needed) the log and returns every recovered tuple
    /// in log order.
    pub fn open(path: &Path, defs: &[TableDef]) -> Result<(Self, Vec<Tuple>), LogError> {
        let io_err = |source| LogError::Io { path: path.to_owned(), source };
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io_err)?;
        let mut text = Vec::new();
        file.read_to_end(&mut text).map_err(io_err)?;

        let mut tuples = Vec::new();
        let mut good = 0usize;
        let mut pos = 0usize;
        let mut line_no = 0usize;
        while pos < text.len() {
            line_no += 1;
            let end = text[pos..].iter().position(|&b| b == b'\n').map(|i| pos + i);
            let (line, next) = match end {
                Some(e) => (&text[pos..e], e + 1),
                None => (&text[pos..], text.len()),
            };
            let decoded = std::str::from_utf8(line)
                .map_err(|e| CodecError::Malformed(e.to_string()))
                .and_then(|l| decode_any(l, defs));
            match decoded {
                Ok(t) if end.is_some() => {
                    tuples.push(t);
                    good = next;
                }
                // A complete-looking record with no newline was never
                // acknowledged; treat it like any torn tail.
                Ok(_) => break,
                Err(_) if next == text.len() => break,
                Err(source) => return Err(LogError::Corrupt { path: path.to_owned(), line: line_no, source }),
            }
            pos = next;
        }
        if good < text.len() {
            tracing::warn!(path = %path.display(), dropped = text.len() - good, "dropping torn log tail");
            file.set_len(good as u64).map_err(io_err)?;
            file.seek(SeekFrom::End(0)).map_err(io_err)?;
        }
        let records = tuples.len() as u64;
        Ok((ResilientLog { path: path.to_owned(), file, bytes: good as u64, records }, tuples))
    }

    /// Appends a batch and syncs it to disk.
    pub fn append(&mut self, defs: &[TableDef], tuples: &[Tuple]) -> Result<(), LogError> {
        let mut buf = String::new();
        for t in tuples {
            let def = defs.iter().find(|d| d.is_named(t.table())).expect("tuple validated against producer tables");
            buf.push_str(&encode_tuple(def, t));
            buf.push('\n');
        }
        let result = self.file.write_all(buf.as_bytes()).and_then(|_| self.file.sync_data());
        if let Err(source) = result {
            // Leave no partial batch behind for a later append to extend.
            let _ = self.file.set_len(self.bytes);
            return Err(LogError::Io { path: self.path.clone(), source });
        }
        self.bytes += buf.len() as u64;
        self.records += tuples.len() as u64;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn records(&self) -> u64 {
        self.records
    }
}
