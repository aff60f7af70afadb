//! Container engine abstraction: the actions the orchestrator emits, the
//! state it reads back, and log streaming.
//!
//! [`SimWorld`] is a deterministic in-memory engine covering every host in a
//! registry. [`RealEngine`] translates the same actions onto a container
//! engine's HTTP API and a secure-shell channel.

pub mod compose;
pub mod docker;
mod http;
pub mod real;
pub mod sim;
pub mod ssh;

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hosts::EngineEndpoint;
use crate::manifest::{is_identifier, ServiceRole};
use crate::netplan::{MacAddr, NetworkSpec};

pub use real::RealEngine;
pub use sim::{ActionRecord, Fault, SimWorld};

/// Milliseconds on the engine's clock.
pub type Timestamp = u64;

/// Name of the engine's built-in bridge network.
pub const BRIDGE_NETWORK: &str = "bridge";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", content = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContainerState {
    Creating,
    Starting,
    Running,
    Exited(i32),
    Missing,
}

impl fmt::Display for ContainerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerState::Creating => f.write_str("CREATING"),
            ContainerState::Starting => f.write_str("STARTING"),
            ContainerState::Running => f.write_str("RUNNING"),
            ContainerState::Exited(code) => write!(f, "EXITED({code})"),
            ContainerState::Missing => f.write_str("MISSING"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerStatus {
    pub service: String,
    pub container: String,
    pub stack: String,
    pub state: ContainerState,
    pub host: String,
    /// Absent for [`ContainerState::Missing`].
    pub since: Option<Timestamp>,
}

impl ContainerStatus {
    pub fn missing(service: &str, container: &str, stack: &str, host: &str) -> Self {
        Self {
            service: service.into(),
            container: container.into(),
            stack: stack.into(),
            state: ContainerState::Missing,
            host: host.into(),
            since: None,
        }
    }
}

/// A file delivered to a container or remote host, addressed relative to the
/// stack's config directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferFile {
    pub path: String,
    pub sha256: String,
    pub content: String,
}

impl TransferFile {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        let content = content.into();
        Self {
            path: path.into(),
            sha256: crate::hash::sha256_hex(content.as_bytes()),
            content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerDescriptor {
    pub name: String,
    pub stack: String,
    pub service: String,
    pub image: String,
    pub role: ServiceRole,
    pub command: Option<String>,
    /// Mounted read-only under [`compose::CONFIG_MOUNT`].
    pub files: Vec<TransferFile>,
    /// Persistent volume holding the subscriber database, if any.
    pub data_volume: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeFragment {
    pub id: String,
    pub document: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EngineAction {
    CreateNetwork {
        stack: String,
        network: NetworkSpec,
    },
    RemoveNetwork {
        network: String,
    },
    CreateContainer {
        container: ContainerDescriptor,
    },
    ConnectNetwork {
        container: String,
        network: String,
        ip: Option<Ipv4Addr>,
        mac: Option<MacAddr>,
    },
    DisconnectNetwork {
        container: String,
        network: String,
    },
    StartContainer {
        container: String,
    },
    StopContainer {
        container: String,
    },
    RemoveContainer {
        container: String,
    },
    Exec {
        container: String,
        command: Vec<String>,
    },
    TransferFiles {
        host: String,
        stack: String,
        files: Vec<TransferFile>,
    },
    RemoteComposeUp {
        host: String,
        stack: String,
        fragment: ComposeFragment,
    },
}

impl EngineAction {
    pub fn kind(&self) -> &'static str {
        match self {
            EngineAction::CreateNetwork { .. } => "CREATE_NETWORK",
            EngineAction::RemoveNetwork { .. } => "REMOVE_NETWORK",
            EngineAction::CreateContainer { .. } => "CREATE_CONTAINER",
            EngineAction::ConnectNetwork { .. } => "CONNECT_NETWORK",
            EngineAction::DisconnectNetwork { .. } => "DISCONNECT_NETWORK",
            EngineAction::StartContainer { .. } => "START_CONTAINER",
            EngineAction::StopContainer { .. } => "STOP_CONTAINER",
            EngineAction::RemoveContainer { .. } => "REMOVE_CONTAINER",
            EngineAction::Exec { .. } => "EXEC",
            EngineAction::TransferFiles { .. } => "TRANSFER_FILES",
            EngineAction::RemoteComposeUp { .. } => "REMOTE_COMPOSE_UP",
        }
    }

    /// The container this action targets, if any.
    pub fn container(&self) -> Option<&str> {
        match self {
            EngineAction::CreateContainer { container } => Some(&container.name),
            EngineAction::ConnectNetwork { container, .. }
            | EngineAction::DisconnectNetwork { container, .. }
            | EngineAction::StartContainer { container }
            | EngineAction::StopContainer { container }
            | EngineAction::RemoveContainer { container }
            | EngineAction::Exec { container, .. } => Some(container),
            _ => None,
        }
    }

    pub fn network(&self) -> Option<&str> {
        match self {
            EngineAction::CreateNetwork { network, .. } => Some(&network.name),
            EngineAction::RemoveNetwork { network }
            | EngineAction::ConnectNetwork { network, .. }
            | EngineAction::DisconnectNetwork { network, .. } => Some(network),
            _ => None,
        }
    }

    /// Every container, network and host reference is a valid identifier.
    pub fn references_valid(&self) -> bool {
        let ok = |s: &str| is_identifier(s);
        self.container().is_none_or(ok)
            && self.network().is_none_or(ok)
            && match self {
                EngineAction::TransferFiles { host, stack, .. }
                | EngineAction::RemoteComposeUp { host, stack, .. } => ok(host) && ok(stack),
                EngineAction::CreateNetwork { stack, .. } => ok(stack),
                EngineAction::CreateContainer { container } => ok(&container.stack) && ok(&container.service),
                _ => true,
            }
    }
}

impl fmt::Display for EngineAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineAction::ConnectNetwork {
                container,
                network,
                ip,
                ..
            } => match ip {
                Some(ip) => write!(f, "{} {container} -> {network} ({ip})", self.kind()),
                None => write!(f, "{} {container} -> {network}", self.kind()),
            },
            EngineAction::DisconnectNetwork { container, network } => {
                write!(f, "{} {container} -x {network}", self.kind())
            }
            EngineAction::TransferFiles { host, files, .. } => {
                write!(f, "{} {} file(s) -> {host}", self.kind(), files.len())
            }
            EngineAction::RemoteComposeUp { host, fragment, .. } => {
                write!(f, "{} {} on {host}", self.kind(), fragment.id)
            }
            EngineAction::Exec { container, command } => {
                write!(f, "{} {container}: {}", self.kind(), command.first().map_or("", String::as_str))
            }
            other => match other.container().or(other.network()) {
                Some(target) => write!(f, "{} {target}", other.kind()),
                None => f.write_str(other.kind()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EngineError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("transfer failed: {0}")]
    TransferFailed(String),
    #[error("exec failed: {0}")]
    ExecFailed(String),
    #[error("invalid action: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("engine error: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogChannel {
    Out,
    Err,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub ts: Timestamp,
    pub service: String,
    pub line: String,
    pub channel: LogChannel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogItem {
    Event(LogEvent),
    /// Events dropped because the consumer fell behind.
    Gap { dropped: u64 },
    /// The container exited or was removed; nothing follows.
    End,
}

pub type LogStream = Box<dyn Iterator<Item = LogItem> + Send>;

/// A network present on an engine, with the stack that created it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkState {
    pub name: String,
    pub stack: Option<String>,
}

/// Uniform command surface over simulated and real engines. Mutating calls
/// are serialized by the caller; reads may run concurrently.
pub trait ContainerEngine: Send + Sync {
    /// Applies one action. Returns the action's output (non-empty only for
    /// `Exec`).
    fn apply(&self, endpoint: &EngineEndpoint, action: &EngineAction) -> Result<String, EngineError>;

    /// Containers on the endpoint, optionally only those of `stack`.
    fn query(&self, endpoint: &EngineEndpoint, stack: Option<&str>) -> Result<Vec<ContainerStatus>, EngineError>;

    fn networks(&self, endpoint: &EngineEndpoint, stack: Option<&str>) -> Result<Vec<NetworkState>, EngineError>;

    fn logs(&self, endpoint: &EngineEndpoint, container: &str, follow: bool) -> Result<LogStream, EngineError>;

    fn now(&self) -> Timestamp;
}

pub fn apply_engine_action(
    engine: &dyn ContainerEngine,
    endpoint: &EngineEndpoint,
    action: &EngineAction,
) -> Result<String, EngineError> {
    engine.apply(endpoint, action)
}

pub fn query_container_states(
    engine: &dyn ContainerEngine,
    endpoint: &EngineEndpoint,
    stack: Option<&str>,
) -> Result<Vec<ContainerStatus>, EngineError> {
    engine.query(endpoint, stack)
}

pub fn stream_container_logs(
    engine: &dyn ContainerEngine,
    endpoint: &EngineEndpoint,
    container: &str,
    follow: bool,
) -> Result<LogStream, EngineError> {
    engine.logs(endpoint, container, follow)
}

/// Sends `files` (skipped when empty) and then brings up `fragment` on the
/// channel's host.
pub fn remote_transfer_and_up(
    engine: &dyn ContainerEngine,
    channel: &EngineEndpoint,
    stack: &str,
    files: Vec<TransferFile>,
    fragment: ComposeFragment,
) -> Result<(), EngineError> {
    if !files.is_empty() {
        engine.apply(
            channel,
            &EngineAction::TransferFiles {
                host: channel.host.clone(),
                stack: stack.into(),
                files,
            },
        )?;
    }
    engine.apply(
        channel,
        &EngineAction::RemoteComposeUp {
            host: channel.host.clone(),
            stack: stack.into(),
            fragment,
        },
    )?;
    Ok(())
}
