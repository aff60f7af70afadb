//! Deterministic in-memory engine for every host of a lab.
//!
//! State machine: `CreateContainer` puts a container in CREATING,
//! `StartContainer` moves it to STARTING and the next [`SimWorld::tick`]
//! to RUNNING. `StopContainer` yields EXITED(0). Each tick advances the clock
//! by [`TICK_MS`]. Every applied action, successful or not, is appended to
//! the action log.
//!
//! Containers whose descriptor names a data volume understand
//! `subscriber-db load|add|dump|clear` via `Exec`; the volume outlives the
//! container.

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use super::compose::{parse_fragment, CONFIG_MOUNT};
use super::{
    ContainerDescriptor, ContainerEngine, ContainerState, ContainerStatus, EngineAction, EngineError,
    LogChannel, LogEvent, LogItem, LogStream, NetworkState, Timestamp, TransferFile, BRIDGE_NETWORK,
};
use crate::hosts::{EndpointKind, EngineEndpoint, HostRegistry};
use crate::netplan::{MacAddr, NetworkSpec};
use crate::settings::is_contained_relative;

pub const TICK_MS: Timestamp = 1000;
pub const DEFAULT_FOLLOW_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub seq: u64,
    pub ts: Timestamp,
    pub host: String,
    pub action: EngineAction,
    pub error: Option<EngineError>,
}

/// Injected failures. `FailAction` fires once on the first matching action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Fault {
    FailAction {
        host: String,
        /// [`EngineAction::kind`] of the action to fail.
        op: String,
        container: Option<String>,
    },
    /// The next compose-up on `host` creates its containers, then fails
    /// before starting them.
    PartialComposeUp { host: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub ip: Option<Ipv4Addr>,
    pub mac: Option<MacAddr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimContainer {
    pub descriptor: ContainerDescriptor,
    pub state: ContainerState,
    pub since: Timestamp,
    pub attachments: BTreeMap<String, Attachment>,
    pub logs: Vec<LogEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNetwork {
    pub spec: NetworkSpec,
    pub stack: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostState {
    pub containers: BTreeMap<String, SimContainer>,
    pub networks: BTreeMap<String, SimNetwork>,
    /// Files received over the remote channel, keyed `<stack>/<path>`.
    pub files: BTreeMap<String, TransferFile>,
    pub volumes: BTreeMap<String, Vec<String>>,
    pub unreachable: bool,
}

struct Subscriber {
    host: String,
    container: String,
    tx: SyncSender<LogItem>,
    pending_gap: Arc<AtomicU64>,
}

#[derive(Default, Serialize, Deserialize)]
struct WorldState {
    clock: Timestamp,
    seq: u64,
    hosts: BTreeMap<String, HostState>,
    log: Vec<ActionRecord>,
    faults: Vec<Fault>,
    boot_logs: bool,
    #[serde(skip)]
    subscribers: Vec<Subscriber>,
    #[serde(skip)]
    follow_capacity: usize,
}

/// Shared simulated engine. Cheap to clone via `Arc`; all methods lock one
/// mutex briefly and never block on consumers.
pub struct SimWorld {
    state: Mutex<WorldState>,
}

impl std::fmt::Debug for SimWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.lock();
        f.debug_struct("SimWorld")
            .field("clock", &s.clock)
            .field("hosts", &s.hosts.keys().collect::<Vec<_>>())
            .field("actions", &s.log.len())
            .finish()
    }
}

impl SimWorld {
    pub fn new<I, S>(hosts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let state = WorldState {
            hosts: hosts.into_iter().map(|h| (h.into(), HostState::default())).collect(),
            boot_logs: true,
            follow_capacity: DEFAULT_FOLLOW_CAPACITY,
            ..WorldState::default()
        };
        Self {
            state: Mutex::new(state),
        }
    }

    /// One simulated host per registry entry.
    pub fn for_registry(registry: &HostRegistry) -> Self {
        Self::new(registry.host_names())
    }

    fn lock(&self) -> MutexGuard<'_, WorldState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Whether start-up and readiness lines are logged automatically.
    pub fn set_boot_logs(&self, enabled: bool) {
        self.lock().boot_logs = enabled;
    }

    pub fn set_follow_capacity(&self, capacity: usize) {
        self.lock().follow_capacity = capacity.max(1);
    }

    pub fn now(&self) -> Timestamp {
        self.lock().clock
    }

    /// Advances the clock one tick and promotes STARTING containers.
    pub fn tick(&self) {
        let mut s = self.lock();
        s.clock += TICK_MS;
        let now = s.clock;
        let boot = s.boot_logs;
        let mut ready = Vec::new();
        for (host, hs) in s.hosts.iter_mut() {
            if hs.unreachable {
                continue;
            }
            for (name, c) in hs.containers.iter_mut() {
                if c.state == ContainerState::Starting {
                    c.state = ContainerState::Running;
                    c.since = now;
                    if boot {
                        ready.push((host.clone(), name.clone(), format!("{} ready", c.descriptor.service)));
                    }
                }
            }
        }
        for (host, name, line) in ready {
            s.push_log(&host, &name, LogChannel::Out, line);
        }
    }

    pub fn tick_n(&self, n: usize) {
        for _ in 0..n {
            self.tick();
        }
    }

    pub fn hosts(&self) -> Vec<String> {
        self.lock().hosts.keys().cloned().collect()
    }

    pub fn host_state(&self, host: &str) -> Option<HostState> {
        self.lock().hosts.get(host).cloned()
    }

    pub fn set_reachable(&self, host: &str, reachable: bool) {
        if let Some(h) = self.lock().hosts.get_mut(host) {
            h.unreachable = !reachable;
        }
    }

    pub fn inject(&self, fault: Fault) {
        self.lock().faults.push(fault);
    }

    pub fn action_log(&self) -> Vec<ActionRecord> {
        self.lock().log.clone()
    }

    pub fn action_log_for(&self, host: &str) -> Vec<ActionRecord> {
        self.lock().log.iter().filter(|r| r.host == host).cloned().collect()
    }

    pub fn action_log_json(&self) -> String {
        serde_json::to_string_pretty(&self.lock().log).expect("action log serializes")
    }

    pub fn clear_action_log(&self) {
        self.lock().log.clear();
    }

    /// Terminates a container as if its process exited with `code`.
    pub fn exit_container(&self, host: &str, container: &str, code: i32) -> Result<(), EngineError> {
        let mut s = self.lock();
        let now = s.clock;
        let c = s.container_mut(host, container)?;
        c.state = ContainerState::Exited(code);
        c.since = now;
        s.end_subscribers(host, Some(container));
        Ok(())
    }

    /// Appends scripted log lines to a container, stamped with the current
    /// clock.
    pub fn script_logs<I, L>(&self, host: &str, container: &str, lines: I) -> Result<(), EngineError>
    where
        I: IntoIterator<Item = (LogChannel, L)>,
        L: Into<String>,
    {
        let mut s = self.lock();
        s.container_mut(host, container)?;
        for (channel, line) in lines {
            s.push_log(host, container, channel, line.into());
        }
        Ok(())
    }

    /// Canonical subscriber document stored in `volume` on `host`.
    pub fn subscriber_db(&self, host: &str, volume: &str) -> Option<String> {
        let s = self.lock();
        let lines = s.hosts.get(host)?.volumes.get(volume)?;
        Some(lines.iter().map(|l| format!("{l}\n")).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&*self.lock()).expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut state: WorldState = serde_json::from_str(text)?;
        state.follow_capacity = DEFAULT_FOLLOW_CAPACITY;
        Ok(Self {
            state: Mutex::new(state),
        })
    }

    fn host_of(endpoint: &EngineEndpoint) -> Result<&str, EngineError> {
        if endpoint.kind != EndpointKind::Simulated {
            return Err(EngineError::Unreachable(format!(
                "{} is not a simulated endpoint",
                endpoint.address
            )));
        }
        Ok(endpoint.location())
    }
}

fn take_fault(faults: &mut Vec<Fault>, host: &str, action: &EngineAction) -> bool {
    let pos = faults.iter().position(|f| match f {
        Fault::FailAction {
            host: h,
            op,
            container,
        } => {
            h == host
                && op == action.kind()
                && container.as_deref().is_none_or(|c| action.container() == Some(c))
        }
        Fault::PartialComposeUp { .. } => false,
    });
    pos.map(|i| faults.remove(i)).is_some()
}

fn take_partial(faults: &mut Vec<Fault>, host: &str) -> bool {
    let pos = faults
        .iter()
        .position(|f| matches!(f, Fault::PartialComposeUp { host: h } if h == host));
    pos.map(|i| faults.remove(i)).is_some()
}

impl WorldState {
    fn reachable_host(&mut self, host: &str) -> Result<&mut HostState, EngineError> {
        match self.hosts.get_mut(host) {
            Some(h) if !h.unreachable => Ok(h),
            Some(_) => Err(EngineError::Unreachable(format!("host {host} does not respond"))),
            None => Err(EngineError::Unreachable(format!("unknown host {host}"))),
        }
    }

    fn container_mut(&mut self, host: &str, name: &str) -> Result<&mut SimContainer, EngineError> {
        self.reachable_host(host)?
            .containers
            .get_mut(name)
            .ok_or_else(|| EngineError::NotFound(format!("container {name} on {host}")))
    }

    fn push_log(&mut self, host: &str, container: &str, channel: LogChannel, line: String) {
        let ts = self.clock;
        let Some(c) = self.hosts.get_mut(host).and_then(|h| h.containers.get_mut(container)) else {
            return;
        };
        let event = LogEvent {
            ts,
            service: c.descriptor.service.clone(),
            line,
            channel,
        };
        c.logs.push(event.clone());
        self.subscribers.retain(|sub| {
            if sub.host != host || sub.container != container {
                return true;
            }
            let pending = sub.pending_gap.load(Ordering::Relaxed);
            if pending > 0 {
                match sub.tx.try_send(LogItem::Gap { dropped: pending }) {
                    Ok(()) => sub.pending_gap.store(0, Ordering::Relaxed),
                    Err(TrySendError::Full(_)) => {
                        sub.pending_gap.fetch_add(1, Ordering::Relaxed);
                        return true;
                    }
                    Err(TrySendError::Disconnected(_)) => return false,
                }
            }
            match sub.tx.try_send(LogItem::Event(event.clone())) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    sub.pending_gap.fetch_add(1, Ordering::Relaxed);
                    true
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
    }

    /// Drops the senders of matching subscribers; their streams finish with
    /// any pending gap and an end marker.
    fn end_subscribers(&mut self, host: &str, container: Option<&str>) {
        self.subscribers
            .retain(|s| !(s.host == host && container.is_none_or(|c| s.container == c)));
    }

    fn record(&mut self, host: &str, action: &EngineAction, error: Option<EngineError>) {
        self.seq += 1;
        let record = ActionRecord {
            seq: self.seq,
            ts: self.clock,
            host: host.to_string(),
            action: action.clone(),
            error,
        };
        self.log.push(record);
    }

    fn apply(&mut self, host: &str, action: &EngineAction) -> Result<String, EngineError> {
        if !action.references_valid() {
            return Err(EngineError::Invalid(action.to_string()));
        }
        self.reachable_host(host)?;
        if take_fault(&mut self.faults, host, action) {
            return Err(EngineError::Backend(format!("injected failure of {action}")));
        }
        let now = self.clock;
        let boot = self.boot_logs;
        match action {
            EngineAction::CreateNetwork { stack, network } => {
                let h = self.reachable_host(host)?;
                if network.name == BRIDGE_NETWORK || h.networks.contains_key(&network.name) {
                    return Err(EngineError::Conflict(format!("network {} exists", network.name)));
                }
                if let Some(other) = h.networks.values().find(|n| n.spec.subnet.overlaps(&network.subnet)) {
                    return Err(EngineError::Conflict(format!(
                        "subnet {} overlaps network {}",
                        network.subnet, other.spec.name
                    )));
                }
                h.networks.insert(
                    network.name.clone(),
                    SimNetwork {
                        spec: network.clone(),
                        stack: stack.clone(),
                    },
                );
                Ok(String::new())
            }
            EngineAction::RemoveNetwork { network } => {
                let h = self.reachable_host(host)?;
                if !h.networks.contains_key(network) {
                    return Err(EngineError::NotFound(format!("network {network}")));
                }
                if let Some(user) = h.containers.values().find(|c| c.attachments.contains_key(network)) {
                    return Err(EngineError::Conflict(format!(
                        "network {network} still used by {}",
                        user.descriptor.name
                    )));
                }
                h.networks.remove(network);
                Ok(String::new())
            }
            EngineAction::CreateContainer { container } => {
                let h = self.reachable_host(host)?;
                if h.containers.contains_key(&container.name) {
                    return Err(EngineError::Conflict(format!("container {} exists", container.name)));
                }
                h.containers.insert(
                    container.name.clone(),
                    SimContainer {
                        descriptor: container.clone(),
                        state: ContainerState::Creating,
                        since: now,
                        attachments: BTreeMap::new(),
                        logs: Vec::new(),
                    },
                );
                Ok(String::new())
            }
            EngineAction::ConnectNetwork {
                container,
                network,
                ip,
                mac,
            } => {
                let h = self.reachable_host(host)?;
                if !h.containers.contains_key(container) {
                    return Err(EngineError::NotFound(format!("container {container} on {host}")));
                }
                if network == BRIDGE_NETWORK {
                    if ip.is_some() {
                        return Err(EngineError::Conflict("static addresses are not allowed on bridge".into()));
                    }
                } else {
                    let net = h
                        .networks
                        .get(network)
                        .ok_or_else(|| EngineError::NotFound(format!("network {network} on {host}")))?;
                    if let Some(ip) = ip {
                        if !net.spec.subnet.contains(*ip) {
                            return Err(EngineError::Conflict(format!("{ip} is outside {}", net.spec.subnet)));
                        }
                        if net.spec.gateway == Some(*ip) {
                            return Err(EngineError::Conflict(format!("{ip} is the gateway of {network}")));
                        }
                        let holder = h.containers.values().find(|c| {
                            c.attachments.get(network).is_some_and(|a| a.ip == Some(*ip))
                        });
                        if let Some(holder) = holder {
                            return Err(EngineError::Conflict(format!(
                                "{ip} on {network} is held by {}",
                                holder.descriptor.name
                            )));
                        }
                    }
                }
                let c = h.containers.get_mut(container).expect("checked above");
                if c.attachments.contains_key(network) {
                    return Err(EngineError::Conflict(format!("{container} is already on {network}")));
                }
                c.attachments.insert(network.clone(), Attachment { ip: *ip, mac: *mac });
                Ok(String::new())
            }
            EngineAction::DisconnectNetwork { container, network } => {
                let c = self.container_mut(host, container)?;
                c.attachments
                    .remove(network)
                    .map(|_| String::new())
                    .ok_or_else(|| EngineError::NotFound(format!("{container} is not on {network}")))
            }
            EngineAction::StartContainer { container } => {
                let c = self.container_mut(host, container)?;
                if matches!(c.state, ContainerState::Starting | ContainerState::Running) {
                    return Ok(String::new());
                }
                c.state = ContainerState::Starting;
                c.since = now;
                let line = format!("starting {}", c.descriptor.image);
                if boot {
                    self.push_log(host, container, LogChannel::Out, line);
                }
                Ok(String::new())
            }
            EngineAction::StopContainer { container } => {
                let c = self.container_mut(host, container)?;
                if matches!(c.state, ContainerState::Starting | ContainerState::Running) {
                    c.state = ContainerState::Exited(0);
                    c.since = now;
                    self.end_subscribers(host, Some(container));
                }
                Ok(String::new())
            }
            EngineAction::RemoveContainer { container } => {
                let h = self.reachable_host(host)?;
                match h.containers.get(container) {
                    None => return Err(EngineError::NotFound(format!("container {container} on {host}"))),
                    Some(c) if matches!(c.state, ContainerState::Starting | ContainerState::Running) => {
                        return Err(EngineError::Conflict(format!("container {container} is running")))
                    }
                    Some(_) => {}
                }
                h.containers.remove(container);
                self.end_subscribers(host, Some(container));
                Ok(String::new())
            }
            EngineAction::Exec { container, command } => self.exec(host, container, command),
            EngineAction::TransferFiles { stack, files, .. } => {
                for f in files {
                    if !is_contained_relative(std::path::Path::new(&f.path)) {
                        return Err(EngineError::TransferFailed(f.path.clone()));
                    }
                    if crate::hash::sha256_hex(f.content.as_bytes()) != f.sha256 {
                        return Err(EngineError::TransferFailed(format!("{}: checksum mismatch", f.path)));
                    }
                }
                let h = self.reachable_host(host)?;
                for f in files {
                    h.files.insert(format!("{stack}/{}", f.path), f.clone());
                }
                Ok(String::new())
            }
            EngineAction::RemoteComposeUp { stack, fragment, .. } => {
                let parsed = parse_fragment(&fragment.document)
                    .map_err(|e| EngineError::Invalid(format!("fragment {}: {e}", fragment.id)))?;
                if parsed.stack != *stack {
                    return Err(EngineError::Invalid(format!("fragment {} belongs to {}", fragment.id, parsed.stack)));
                }
                let partial = take_partial(&mut self.faults, host);
                let h = self.reachable_host(host)?;
                let mut descriptors = Vec::new();
                for svc in &parsed.services {
                    if h.containers.contains_key(&svc.container_name) {
                        return Err(EngineError::Conflict(format!("container {} exists", svc.container_name)));
                    }
                    let mut files = Vec::new();
                    for m in &svc.mounts {
                        let key = format!("{stack}/{}", m.source);
                        let file = h
                            .files
                            .get(&key)
                            .ok_or_else(|| EngineError::NotFound(format!("file {key} on {host}")))?;
                        let path = m
                            .target
                            .strip_prefix(CONFIG_MOUNT)
                            .map(|p| p.trim_start_matches('/'))
                            .unwrap_or(&m.target);
                        files.push(TransferFile::new(path, file.content.clone()));
                    }
                    descriptors.push(ContainerDescriptor {
                        name: svc.container_name.clone(),
                        stack: svc.stack.clone(),
                        service: svc.service.clone(),
                        image: svc.image.clone(),
                        role: svc.role,
                        command: svc.command.clone(),
                        files,
                        data_volume: None,
                    });
                }
                let names: Vec<(String, String)> =
                    descriptors.iter().map(|d| (d.name.clone(), d.image.clone())).collect();
                for d in descriptors {
                    let mut attachments = BTreeMap::new();
                    attachments.insert(BRIDGE_NETWORK.to_string(), Attachment { ip: None, mac: None });
                    h.containers.insert(
                        d.name.clone(),
                        SimContainer {
                            descriptor: d,
                            state: ContainerState::Creating,
                            since: now,
                            attachments,
                            logs: Vec::new(),
                        },
                    );
                }
                if partial {
                    return Err(EngineError::Backend(format!(
                        "compose up of {} failed after creating containers",
                        fragment.id
                    )));
                }
                for (name, _) in &names {
                    let c = h.containers.get_mut(name).expect("just created");
                    c.state = ContainerState::Starting;
                    c.since = now;
                }
                if boot {
                    for (name, image) in names {
                        self.push_log(host, &name, LogChannel::Out, format!("starting {image}"));
                    }
                }
                Ok(String::new())
            }
        }
    }

    fn exec(&mut self, host: &str, container: &str, command: &[String]) -> Result<String, EngineError> {
        let c = self.container_mut(host, container)?;
        if !matches!(c.state, ContainerState::Starting | ContainerState::Running) {
            return Err(EngineError::ExecFailed(format!("{container} is not running")));
        }
        let volume = c.descriptor.data_volume.clone();
        let args: Vec<&str> = command.iter().map(String::as_str).collect();
        let ["subscriber-db", sub, rest @ ..] = args.as_slice() else {
            return Ok(String::new());
        };
        let volume = volume.ok_or_else(|| EngineError::ExecFailed(format!("{container} has no subscriber database")))?;
        let h = self.reachable_host(host)?;
        let db = h.volumes.entry(volume).or_default();
        match (*sub, rest) {
            ("load", [doc]) => {
                *db = doc.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
                Ok(format!("loaded {} subscriber(s)\n", db.len()))
            }
            ("add", [line]) => {
                db.push((*line).to_string());
                Ok(String::new())
            }
            ("dump", []) => Ok(db.iter().map(|l| format!("{l}\n")).collect()),
            ("clear", []) => {
                db.clear();
                Ok(String::new())
            }
            _ => Err(EngineError::ExecFailed(format!("usage: subscriber-db load <doc> | add <line> | dump | clear (got {sub})"))),
        }
    }
}

struct FollowStream {
    backlog: VecDeque<LogItem>,
    rx: Option<Receiver<LogItem>>,
    pending_gap: Arc<AtomicU64>,
}

impl Iterator for FollowStream {
    type Item = LogItem;

    fn next(&mut self) -> Option<LogItem> {
        if let Some(item) = self.backlog.pop_front() {
            return Some(item);
        }
        let rx = self.rx.as_ref()?;
        match rx.recv() {
            Ok(item) => Some(item),
            Err(_) => {
                self.rx = None;
                let dropped = self.pending_gap.swap(0, Ordering::Relaxed);
                if dropped > 0 {
                    self.backlog.push_back(LogItem::End);
                    Some(LogItem::Gap { dropped })
                } else {
                    Some(LogItem::End)
                }
            }
        }
    }
}

impl ContainerEngine for SimWorld {
    fn apply(&self, endpoint: &EngineEndpoint, action: &EngineAction) -> Result<String, EngineError> {
        let host = Self::host_of(endpoint)?;
        let mut s = self.lock();
        let result = s.apply(host, action);
        s.record(host, action, result.as_ref().err().cloned());
        match &result {
            Ok(_) => tracing::trace!(host, %action, "applied"),
            Err(e) => tracing::debug!(host, %action, error = %e, "action failed"),
        }
        result
    }

    fn query(&self, endpoint: &EngineEndpoint, stack: Option<&str>) -> Result<Vec<ContainerStatus>, EngineError> {
        let host = Self::host_of(endpoint)?;
        let mut s = self.lock();
        let h = s.reachable_host(host)?;
        Ok(h.containers
            .values()
            .filter(|c| stack.is_none_or(|st| c.descriptor.stack == st))
            .map(|c| ContainerStatus {
                service: c.descriptor.service.clone(),
                container: c.descriptor.name.clone(),
                stack: c.descriptor.stack.clone(),
                state: c.state,
                host: host.to_string(),
                since: Some(c.since),
            })
            .collect())
    }

    fn networks(&self, endpoint: &EngineEndpoint, stack: Option<&str>) -> Result<Vec<NetworkState>, EngineError> {
        let host = Self::host_of(endpoint)?;
        let mut s = self.lock();
        let h = s.reachable_host(host)?;
        Ok(h.networks
            .values()
            .filter(|n| stack.is_none_or(|st| n.stack == st))
            .map(|n| NetworkState {
                name: n.spec.name.clone(),
                stack: Some(n.stack.clone()),
            })
            .collect())
    }

    fn logs(&self, endpoint: &EngineEndpoint, container: &str, follow: bool) -> Result<LogStream, EngineError> {
        let host = Self::host_of(endpoint)?;
        let mut s = self.lock();
        let capacity = s.follow_capacity;
        let c = s.container_mut(host, container)?;
        let backlog: VecDeque<LogItem> = c.logs.iter().cloned().map(LogItem::Event).collect();
        if !follow {
            return Ok(Box::new(backlog.into_iter()));
        }
        let pending_gap = Arc::new(AtomicU64::new(0));
        let alive = matches!(
            c.state,
            ContainerState::Creating | ContainerState::Starting | ContainerState::Running
        );
        let rx = if alive {
            let (tx, rx) = sync_channel(capacity);
            s.subscribers.push(Subscriber {
                host: host.to_string(),
                container: container.to_string(),
                tx,
                pending_gap: pending_gap.clone(),
            });
            Some(rx)
        } else {
            None
        };
        let mut stream = FollowStream {
            backlog,
            rx,
            pending_gap,
        };
        if stream.rx.is_none() {
            stream.backlog.push_back(LogItem::End);
        }
        Ok(Box::new(stream))
    }

    fn now(&self) -> Timestamp {
        SimWorld::now(self)
    }
}
