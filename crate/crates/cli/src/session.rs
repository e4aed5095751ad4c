//! The CLI session file. A session holds at most one producer of each kind
//! and one archiver; commands that act on "the" producer find it here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rgma_core::ProducerKind;
use serde::{Deserialize, Serialize};

pub const SESSION_ENV: &str = "RGMA_SESSION";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionProducer {
    pub id: String,
    pub endpoint: String,
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionArchiver {
    pub id: String,
    /// Base URL of the agent hosting the archiver.
    pub agent: String,
    pub target: String,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    /// Keyed by kind name, e.g. `STREAM`.
    #[serde(default)]
    pub producers: BTreeMap<String, SessionProducer>,
    #[serde(default)]
    pub archiver: Option<SessionArchiver>,
}

/// `$RGMA_SESSION`, else `.rgma-session.json` in the home directory, else
/// in the working directory.
pub fn default_path() -> PathBuf {
    if let Some(p) = std::env::var_os(SESSION_ENV).filter(|p| !p.is_empty()) {
        return PathBuf::from(p);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_default();
    home.join(".rgma-session.json")
}

impl Session {
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).with_context(|| format!("corrupt session file {}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Session::default()),
            Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn add_producer(&mut self, kind: ProducerKind, p: SessionProducer) -> Result<()> {
        if let Some(old) = self.producers.get(kind.as_str()) {
            bail!("this session already has a {kind} producer ({}); close it first", old.id);
        }
        self.producers.insert(kind.as_str().to_owned(), p);
        Ok(())
    }

    /// The producer of `kind`, or the only producer when no kind is given.
    pub fn producer(&self, kind: Option<ProducerKind>) -> Result<(ProducerKind, &SessionProducer)> {
        let found = match kind {
            Some(k) => self.producers.get_key_value(k.as_str()),
            None if self.producers.len() > 1 => {
                let kinds: Vec<&str> = self.producers.keys().map(String::as_str).collect();
                bail!("several producers in this session ({}); pass --kind", kinds.join(", "));
            }
            None => self.producers.iter().next(),
        };
        match found {
            Some((k, p)) => Ok((k.parse().map_err(anyhow::Error::msg)?, p)),
            None => match kind {
                Some(k) => bail!("no {k} producer in this session"),
                None => bail!("no producer in this session; run `producer create` first"),
            },
        }
    }

    pub fn remove_producer(&mut self, kind: ProducerKind) -> Option<SessionProducer> {
        self.producers.remove(kind.as_str())
    }

    pub fn set_archiver(&mut self, a: SessionArchiver) -> Result<()> {
        if let Some(old) = &self.archiver {
            bail!("this session already runs archiver {}; stop it first", old.id);
        }
        self.archiver = Some(a);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: &str) -> SessionProducer {
        SessionProducer { id: id.into(), endpoint: format!("http://x/producer/{id}"), tables: vec!["T".into()] }
    }

    #[test]
    fn one_producer_per_kind() {
        let mut s = Session::default();
        s.add_producer(ProducerKind::Stream, p("a")).unwrap();
        assert!(s.add_producer(ProducerKind::Stream, p("b")).is_err());
        s.add_producer(ProducerKind::Latest, p("c")).unwrap();
        assert!(s.producer(None).is_err());
        assert_eq!(s.producer(Some(ProducerKind::Latest)).unwrap().1.id, "c");
        s.remove_producer(ProducerKind::Latest);
        assert_eq!(s.producer(None).unwrap(), (ProducerKind::Stream, &p("a")));
        assert!(s.producer(Some(ProducerKind::Database)).is_err());
    }

    #[test]
    fn one_archiver_and_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        assert_eq!(Session::load(&path).unwrap(), Session::default());
        let mut s = Session::default();
        s.add_producer(ProducerKind::Database, p("d")).unwrap();
        let a = SessionArchiver { id: "a-1".into(), agent: "http://x".into(), target: "d".into() };
        s.set_archiver(a.clone()).unwrap();
        assert!(s.set_archiver(a).is_err());
        s.save(&path).unwrap();
        assert_eq!(Session::load(&path).unwrap(), s);
    }
}
