//! Agent configuration: a `key = value` file, overridden by the
//! `RGMA_REGISTRY_URL` environment variable, overridden by explicit setters.

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

pub const REGISTRY_URL_ENV: &str = "RGMA_REGISTRY_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("bad value for {key}: {message}")]
    Value { key: String, message: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub listen_address: SocketAddr,
    /// Base URL this agent advertises in endpoints. Defaults to
    /// `http://<bound address>`.
    pub public_url: Option<String>,
    /// Registry to register with. Defaults to this agent when it hosts one.
    pub registry_url: Option<String>,
    pub host_registry: bool,
    pub heartbeat_fraction: f64,
    pub request_timeout_ms: u64,
    pub log_level: String,
    pub sweep_interval_ms: u64,
    pub notify_attempts: u32,
    pub notify_retry_ms: u64,
    /// Silence after which a push sink receives a `#` keep-alive line.
    pub push_idle_ms: u64,
    /// Consecutive failed pushes after which a subscription is dropped.
    pub push_max_failures: u32,
    pub push_batch: usize,
    pub backoff_cap_ms: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            listen_address: SocketAddr::from(([127, 0, 0, 1], 0)),
            public_url: None,
            registry_url: None,
            host_registry: false,
            heartbeat_fraction: 0.5,
            request_timeout_ms: 5000,
            log_level: "info".into(),
            sweep_interval_ms: 5000,
            notify_attempts: 3,
            notify_retry_ms: 1000,
            push_idle_ms: 15_000,
            push_max_failures: 3,
            push_batch: 1000,
            backoff_cap_ms: 30_000,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), message: e.to_string() })
}

impl AgentConfig {
    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = AgentConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: n + 1, message: "expected key = value".into() })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "listenAddress" => self.listen_address = parse(key, value)?,
            "publicUrl" => self.public_url = Some(value.trim_end_matches('/').into()),
            "registryUrl" => self.registry_url = Some(value.trim_end_matches('/').into()),
            "hostRegistry" => self.host_registry = parse(key, value)?,
            "heartbeatFraction" => self.heartbeat_fraction = parse(key, value)?,
            "requestTimeoutMs" => self.request_timeout_ms = parse(key, value)?,
            "logLevel" => self.log_level = value.into(),
            "sweepIntervalMs" => self.sweep_interval_ms = parse(key, value)?,
            "notifyAttempts" => self.notify_attempts = parse(key, value)?,
            "notifyRetryMs" => self.notify_retry_ms = parse(key, value)?,
            "pushIdleMs" => self.push_idle_ms = parse(key, value)?,
            "pushMaxFailures" => self.push_max_failures = parse(key, value)?,
            "pushBatch" => self.push_batch = parse(key, value)?,
            "backoffCapMs" => self.backoff_cap_ms = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies `RGMA_REGISTRY_URL` when set and non-empty.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(REGISTRY_URL_ENV) {
            if !url.trim().is_empty() {
                self.registry_url = Some(url.trim().trim_end_matches('/').into());
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| Err(ConfigError::Value { key: key.into(), message: message.into() });
        if !(self.heartbeat_fraction > 0.0 && self.heartbeat_fraction < 1.0) {
            return bad("heartbeatFraction", "must lie strictly between 0 and 1");
        }
        if self.request_timeout_ms == 0 {
            return bad("requestTimeoutMs", "must be positive");
        }
        if self.sweep_interval_ms == 0 {
            return bad("sweepIntervalMs", "must be positive");
        }
        if self.notify_attempts == 0 || self.push_max_failures == 0 || self.push_batch == 0 {
            return bad("notifyAttempts/pushMaxFailures/pushBatch", "must be positive");
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    /// Heartbeat period for a lease of `interval_sec`.
    pub fn heartbeat_period(&self, interval_sec: u32) -> Duration {
        Duration::from_secs_f64(f64::from(interval_sec) * self.heartbeat_fraction)
    }

    /// Delay before retry `attempt` (1-based) after a failed heartbeat.
    pub fn backoff(&self, period: Duration, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1).min(20));
        period.saturating_mul(factor).min(Duration::from_millis(self.backoff_cap_ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_values() {
        let cfg = AgentConfig::from_kv(
            "# agent\nlistenAddress = 0.0.0.0:8080\nregistryUrl = http://r:1/\n\nheartbeatFraction=0.25\nhostRegistry = true\n",
        )
        .unwrap();
        assert_eq!(cfg.listen_address, "0.0.0.0:8080".parse().unwrap());
        assert_eq!(cfg.registry_url.as_deref(), Some("http://r:1"));
        assert_eq!(cfg.heartbeat_fraction, 0.25);
        assert!(cfg.host_registry);
        assert_eq!(cfg.request_timeout_ms, 5000);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(AgentConfig::from_kv("nonsense"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(AgentConfig::from_kv("colour = red"), Err(ConfigError::UnknownKey(_))));
        for f in ["0", "1", "1.5", "-0.1"] {
            assert!(AgentConfig::from_kv(&format!("heartbeatFraction = {f}")).is_err(), "{f}");
        }
        assert!(AgentConfig::from_kv("requestTimeoutMs = soon").is_err());
    }

    #[test]
    fn backoff_doubles_up_to_the_cap() {
        let cfg = AgentConfig::default();
        let p = Duration::from_secs(1);
        let got: Vec<u64> = (1..=7).map(|k| cfg.backoff(p, k).as_secs()).collect();
        assert_eq!(got, [1, 2, 4, 8, 16, 30, 30]);
        assert_eq!(cfg.backoff(p, 1000), Duration::from_secs(30));
        assert_eq!(cfg.heartbeat_period(60), Duration::from_secs(30));
    }
}
