//! Harness topology files: `[section]` headers followed by `key = value`
//! lines. Unknown sections or keys are errors so typos do not pass silently.
//!
//! ```text
//! [sites]
//! count = 50
//! periodMs = 500
//! durationSec = 60
//! cesPerSite = 3
//!
//! [archiver]
//! batchSize = 100
//! batchMs = 200
//!
//! [agents]
//! producerAgents = 2
//!
//! [sampling]
//! intervalMs = 250
//! ```

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub sites: usize,
    pub period_ms: u64,
    pub duration_sec: u64,
    pub ces_per_site: usize,
    /// Archiver batch size when vector inserts are on. Off means 1.
    pub batch_size: usize,
    pub batch_ms: u64,
    /// In-process agents hosting the site producers.
    pub producer_agents: usize,
    pub sample_ms: u64,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            sites: 50,
            period_ms: 500,
            duration_sec: 60,
            ces_per_site: 3,
            batch_size: 100,
            batch_ms: 200,
            producer_agents: 2,
            sample_ms: 250,
        }
    }
}

impl Topology {
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Topology::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_owned();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            t.set(&section, key.trim(), value.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| anyhow!("{key}: not a number: {value}"))
        }
        match (section, key) {
            ("sites", "count") => self.sites = num(key, value)?,
            ("sites", "periodMs") => self.period_ms = num(key, value)?,
            ("sites", "durationSec") => self.duration_sec = num(key, value)?,
            ("sites", "cesPerSite") => self.ces_per_site = num(key, value)?,
            ("archiver", "batchSize") => self.batch_size = num(key, value)?,
            ("archiver", "batchMs") => self.batch_ms = num(key, value)?,
            ("agents", "producerAgents") => self.producer_agents = num(key, value)?,
            ("sampling", "intervalMs") => self.sample_ms = num(key, value)?,
            ("", _) => bail!("{key} appears before any [section]"),
            _ => bail!("unknown key {key} in [{section}]"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sites.count", self.sites as u64),
            ("sites.periodMs", self.period_ms),
            ("sites.durationSec", self.duration_sec),
            ("archiver.batchSize", self.batch_size as u64),
            ("archiver.batchMs", self.batch_ms),
            ("agents.producerAgents", self.producer_agents as u64),
            ("sampling.intervalMs", self.sample_ms),
        ];
        for (name, v) in positive {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_keeps_defaults() {
        let t = Topology::parse("# small run\n[sites]\ncount = 4\nperiodMs=100\n\n[archiver]\nbatchSize = 1\n").unwrap();
        assert_eq!(t.sites, 4);
        assert_eq!(t.period_ms, 100);
        assert_eq!(t.batch_size, 1);
        assert_eq!(t.duration_sec, 60);
        assert_eq!(t.ces_per_site, 3);
    }

    #[test]
    fn rejects_unknown_keys_and_orphans() {
        assert!(Topology::parse("[sites]\ncounts = 4\n").is_err());
        assert!(Topology::parse("count = 4\n").is_err());
        assert!(Topology::parse("[sites]\ncount = many\n").is_err());
        assert!(Topology::parse("[sites]\ncount = 0\n").is_err());
        assert!(Topology::parse("[sites]\ncount\n").is_err());
    }
}
