//! Stack health and merged log streams.
//!
//! | state                    | color  |
//! |--------------------------|--------|
//! | RUNNING                  | GREEN  |
//! | CREATING, STARTING       | YELLOW |
//! | EXITED(0), UTIL role     | GREEN  |
//! | EXITED(any), other roles | RED    |
//! | MISSING                  | RED    |
//!
//! The stack color is the worst service color, GRAY with no session.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ContainerEngine, ContainerState, ContainerStatus, EngineError, LogChannel, LogItem, Timestamp};
use crate::hosts::HostRegistry;
use crate::manifest::ServiceRole;
use crate::orchestrator::{PlannedService, SessionState, StackSession};

/// Ordered by dominance: a larger color wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HealthColor {
    Gray,
    Green,
    Yellow,
    Red,
}

impl HealthColor {
    pub fn as_str(self) -> &'static str {
        match self {
            HealthColor::Gray => "GRAY",
            HealthColor::Green => "GREEN",
            HealthColor::Yellow => "YELLOW",
            HealthColor::Red => "RED",
        }
    }
}

impl std::fmt::Display for HealthColor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_service(state: ContainerState, role: ServiceRole) -> HealthColor {
    match state {
        ContainerState::Running => HealthColor::Green,
        ContainerState::Creating | ContainerState::Starting => HealthColor::Yellow,
        ContainerState::Exited(0) if role == ServiceRole::Util => HealthColor::Green,
        ContainerState::Exited(_) | ContainerState::Missing => HealthColor::Red,
    }
}

pub fn aggregate_health(colors: &[HealthColor]) -> HealthColor {
    colors.iter().copied().max().unwrap_or(HealthColor::Gray)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceHealth {
    pub service: String,
    pub role: ServiceRole,
    pub status: ContainerStatus,
    pub color: HealthColor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthSnapshot {
    pub stack: Option<String>,
    pub session: Option<String>,
    pub session_state: Option<SessionState>,
    pub per_service: Vec<ServiceHealth>,
    pub aggregate: HealthColor,
    pub taken_at: Timestamp,
}

/// Queries every host that runs a service of the session's stack. Hosts
/// that cannot be queried leave their services MISSING.
pub fn poll_snapshot(session: Option<&StackSession>, engine: &dyn ContainerEngine, hosts: &HostRegistry) -> HealthSnapshot {
    let taken_at = engine.now();
    let Some(session) = session.filter(|s| s.state != SessionState::Stopped) else {
        return HealthSnapshot {
            stack: None,
            session: None,
            session_state: None,
            per_service: Vec::new(),
            aggregate: HealthColor::Gray,
            taken_at,
        };
    };
    let stack = session.stack.as_str();
    let mut by_host: HashMap<&str, Vec<ContainerStatus>> = HashMap::new();
    for svc in &session.plan.services {
        if by_host.contains_key(svc.host.as_str()) {
            continue;
        }
        let found = match hosts.engine(&svc.host).map(|ep| engine.query(ep, Some(stack))) {
            Some(Ok(list)) => list,
            Some(Err(e)) => {
                tracing::debug!(host = %svc.host, "status query failed: {e}");
                Vec::new()
            }
            None => Vec::new(),
        };
        by_host.insert(svc.host.as_str(), found);
    }
    let per_service: Vec<ServiceHealth> = session
        .plan
        .services
        .iter()
        .map(|svc| {
            let status = by_host[svc.host.as_str()]
                .iter()
                .find(|c| c.container == svc.container)
                .cloned()
                .unwrap_or_else(|| ContainerStatus::missing(&svc.name, &svc.container, stack, &svc.host));
            ServiceHealth {
                service: svc.name.clone(),
                role: svc.role,
                color: classify_service(status.state, svc.role),
                status,
            }
        })
        .collect();
    let colors: Vec<HealthColor> = per_service.iter().map(|s| s.color).collect();
    HealthSnapshot {
        stack: Some(stack.to_string()),
        session: Some(session.id.clone()),
        session_state: Some(session.state),
        aggregate: aggregate_health(&colors),
        per_service,
        taken_at,
    }
}

/// One element of a merged log stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MuxItem {
    Log {
        ts: Timestamp,
        service: String,
        line: String,
        channel: LogChannel,
        color: HealthColor,
    },
    Gap {
        service: String,
        dropped: u64,
    },
    /// The service's stream ended; other services may continue.
    End {
        service: String,
    },
}

impl MuxItem {
    pub fn service(&self) -> &str {
        match self {
            MuxItem::Log { service, .. } | MuxItem::Gap { service, .. } | MuxItem::End { service } => service,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("unknown service `{0}`")]
    NotFound(String),
    #[error("service `{service}`: {source}")]
    Engine {
        service: String,
        #[source]
        source: EngineError,
    },
}

pub type MuxStream = Box<dyn Iterator<Item = MuxItem> + Send>;

/// Current color of a service, used to tag log events.
pub type ColorFn = Arc<dyn Fn(&str) -> HealthColor + Send + Sync>;

/// Colors each service by querying its host on every call.
pub fn live_colors(session: &StackSession, engine: Arc<dyn ContainerEngine>, hosts: &HostRegistry) -> ColorFn {
    let services: HashMap<String, PlannedService> =
        session.plan.services.iter().map(|s| (s.name.clone(), s.clone())).collect();
    let stack = session.stack.clone();
    let hosts = hosts.clone();
    Arc::new(move |service: &str| {
        let Some(svc) = services.get(service) else {
            return HealthColor::Gray;
        };
        let state = hosts
            .engine(&svc.host)
            .and_then(|ep| engine.query(ep, Some(&stack)).ok())
            .and_then(|list| list.into_iter().find(|c| c.container == svc.container))
            .map_or(ContainerState::Missing, |c| c.state);
        classify_service(state, svc.role)
    })
}

/// Capacity of the merged follow channel.
const MUX_CAPACITY: usize = 256;

fn select<'a>(session: &'a StackSession, filter: &[String]) -> Result<Vec<&'a PlannedService>, MonitorError> {
    if filter.is_empty() {
        return Ok(session.plan.services.iter().collect());
    }
    filter
        .iter()
        .map(|name| session.plan.service(name).ok_or_else(|| MonitorError::NotFound(name.clone())))
        .collect()
}

fn to_mux(item: LogItem, service: &str, color: &ColorFn) -> MuxItem {
    match item {
        LogItem::Event(e) => MuxItem::Log {
            ts: e.ts,
            service: service.to_string(),
            line: e.line,
            channel: e.channel,
            color: color(service),
        },
        LogItem::Gap { dropped } => MuxItem::Gap {
            service: service.to_string(),
            dropped,
        },
        LogItem::End => MuxItem::End {
            service: service.to_string(),
        },
    }
}

/// Merges the logs of the selected services (all when `filter` is empty).
///
/// Without `follow` the result is a finite k-way merge by timestamp, ties
/// broken by service order; each service's own order is kept. With `follow`
/// each service is forwarded by its own thread as events arrive and ends
/// with an [`MuxItem::End`].
pub fn multiplex_logs(
    session: &StackSession,
    engine: Arc<dyn ContainerEngine>,
    hosts: &HostRegistry,
    filter: &[String],
    follow: bool,
    color: ColorFn,
) -> Result<MuxStream, MonitorError> {
    let services = select(session, filter)?;
    let mut streams = Vec::with_capacity(services.len());
    for svc in &services {
        let ep = hosts.engine(&svc.host).ok_or_else(|| MonitorError::Engine {
            service: svc.name.clone(),
            source: EngineError::Unreachable(format!("host {}", svc.host)),
        })?;
        let stream = engine
            .logs(ep, &svc.container, follow)
            .map_err(|source| MonitorError::Engine {
                service: svc.name.clone(),
                source,
            })?;
        streams.push((svc.name.clone(), stream));
    }

    if !follow {
        let mut lanes: Vec<(String, std::vec::IntoIter<MuxItem>)> = streams
            .into_iter()
            .map(|(name, s)| {
                let items: Vec<MuxItem> = s
                    .filter(|i| matches!(i, LogItem::Event(_)))
                    .map(|i| to_mux(i, &name, &color))
                    .collect();
                (name, items.into_iter())
            })
            .collect();
        let mut heap = BinaryHeap::new();
        let mut heads: Vec<Option<MuxItem>> = Vec::with_capacity(lanes.len());
        for (i, (_, it)) in lanes.iter_mut().enumerate() {
            let head = it.next();
            if let Some(MuxItem::Log { ts, .. }) = &head {
                heap.push(Reverse((*ts, i)));
            }
            heads.push(head);
        }
        let mut merged = Vec::new();
        while let Some(Reverse((_, i))) = heap.pop() {
            let item = heads[i].take().expect("heap entry has a head");
            merged.push(item);
            let next = lanes[i].1.next();
            if let Some(MuxItem::Log { ts, .. }) = &next {
                heap.push(Reverse((*ts, i)));
            }
            heads[i] = next;
        }
        return Ok(Box::new(merged.into_iter()));
    }

    let (tx, rx) = sync_channel(MUX_CAPACITY);
    for (name, stream) in streams {
        let tx = tx.clone();
        let color = color.clone();
        std::thread::spawn(move || {
            let mut ended = false;
            for item in stream {
                ended = matches!(item, LogItem::End);
                if tx.send(to_mux(item, &name, &color)).is_err() {
                    return;
                }
                if ended {
                    break;
                }
            }
            if !ended {
                let _ = tx.send(MuxItem::End { service: name });
            }
        });
    }
    Ok(Box::new(rx.into_iter()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_table() {
        use HealthColor::*;
        for role in [ServiceRole::CoreNf, ServiceRole::Ran, ServiceRole::Ims, ServiceRole::Db, ServiceRole::Util] {
            assert_eq!(classify_service(ContainerState::Running, role), Green);
            assert_eq!(classify_service(ContainerState::Starting, role), Yellow);
            assert_eq!(classify_service(ContainerState::Creating, role), Yellow);
            assert_eq!(classify_service(ContainerState::Exited(1), role), Red);
            assert_eq!(classify_service(ContainerState::Missing, role), Red);
        }
        assert_eq!(classify_service(ContainerState::Exited(0), ServiceRole::Util), Green);
        assert_eq!(classify_service(ContainerState::Exited(0), ServiceRole::CoreNf), Red);
    }

    #[test]
    fn aggregation() {
        use HealthColor::*;
        assert_eq!(aggregate_health(&[Green, Green]), Green);
        assert_eq!(aggregate_health(&[Green, Yellow, Red]), Red);
        assert_eq!(aggregate_health(&[]), Gray);
    }
}
