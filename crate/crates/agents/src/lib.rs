//! HTTP hosting for the registry, producers, consumers and archivers, plus
//! a typed client for all of their endpoints. See `PROTOCOL.md` for the
//! wire format.

mod agent;
mod archiver_host;
pub mod client;
pub mod config;
mod consumer_host;
pub mod error;
mod lease;
mod producer_host;
pub mod protocol;
mod push;
mod registry_host;

pub use agent::{router, Agent, AgentHandle};
pub use client::{AgentClient, ClientError, Http, RegistryClient};
pub use config::{AgentConfig, ConfigError, REGISTRY_URL_ENV};
pub use consumer_host::one_shot;
