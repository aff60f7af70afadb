//! The controller and the RAN hosts it can delegate base stations to.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{is_identifier, CONTROLLER};
use crate::yaml::{self, MapReader, Node, SchemaError};
use crate::DocumentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EndpointKind {
    Simulated,
    Real,
}

/// Address of a container engine or remote channel.
///
/// Recognised schemes: `sim://<name>` (in-memory engine), `unix://<path>` and
/// `tcp://<host:port>` (engine HTTP API), `ssh://[user@]host[:port]` (remote
/// channel).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EngineEndpoint {
    pub host: String,
    pub address: String,
    pub kind: EndpointKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("endpoint `{address}`: {reason}")]
pub struct EndpointError {
    pub address: String,
    pub reason: &'static str,
}

impl EngineEndpoint {
    pub fn parse(host: &str, address: &str) -> Result<Self, EndpointError> {
        let err = |reason| EndpointError {
            address: address.to_string(),
            reason,
        };
        let (scheme, rest) = address.split_once("://").ok_or_else(|| err("missing scheme"))?;
        if rest.is_empty() {
            return Err(err("empty address"));
        }
        let kind = match scheme {
            "sim" => EndpointKind::Simulated,
            "unix" | "tcp" | "ssh" => EndpointKind::Real,
            _ => return Err(err("unsupported scheme (expected sim, unix, tcp or ssh)")),
        };
        Ok(Self {
            host: host.to_string(),
            address: address.to_string(),
            kind,
        })
    }

    pub fn simulated(host: &str) -> Self {
        Self {
            host: host.to_string(),
            address: format!("sim://{host}"),
            kind: EndpointKind::Simulated,
        }
    }

    pub fn scheme(&self) -> &str {
        self.address.split_once("://").map_or("", |(s, _)| s)
    }

    /// The part after `scheme://`.
    pub fn location(&self) -> &str {
        self.address.split_once("://").map_or("", |(_, l)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RanHost {
    pub name: String,
    pub engine: EngineEndpoint,
    pub channel: EngineEndpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostRegistry {
    pub controller: String,
    pub controller_engine: EngineEndpoint,
    pub ran_hosts: Vec<RanHost>,
}

/// A host name resolved against the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostRef<'a> {
    Controller,
    Ran(&'a RanHost),
}

impl HostRegistry {
    /// Resolves `name`; the literal `controller` always means the controller.
    pub fn resolve(&self, name: &str) -> Option<HostRef<'_>> {
        if self.is_controller(name) {
            return Some(HostRef::Controller);
        }
        self.ran_hosts.iter().find(|h| h.name == name).map(HostRef::Ran)
    }

    pub fn is_controller(&self, name: &str) -> bool {
        name == CONTROLLER || name == self.controller
    }

    /// Canonical host name for `name` (`controller` maps to the registry's
    /// controller name).
    pub fn canonical<'a>(&'a self, name: &'a str) -> Option<&'a str> {
        match self.resolve(name)? {
            HostRef::Controller => Some(&self.controller),
            HostRef::Ran(h) => Some(&h.name),
        }
    }

    pub fn host_names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.controller.as_str()).chain(self.ran_hosts.iter().map(|h| h.name.as_str()))
    }

    pub fn engine(&self, name: &str) -> Option<&EngineEndpoint> {
        match self.resolve(name)? {
            HostRef::Controller => Some(&self.controller_engine),
            HostRef::Ran(h) => Some(&h.engine),
        }
    }
}

/// Controller plus two simulated RAN hosts, `ran-1` and `ran-2`.
pub fn default_host_registry() -> HostRegistry {
    HostRegistry {
        controller: CONTROLLER.to_string(),
        controller_engine: EngineEndpoint::simulated(CONTROLLER),
        ran_hosts: ["ran-1", "ran-2"]
            .into_iter()
            .map(|name| RanHost {
                name: name.to_string(),
                engine: EngineEndpoint::simulated(name),
                channel: EngineEndpoint::simulated(name),
            })
            .collect(),
    }
}

fn endpoint(r: &mut MapReader<'_>, key: &str, host: &str) -> Result<EngineEndpoint, SchemaError> {
    let field = r.field(key);
    let address = r.string(key)?;
    EngineEndpoint::parse(host, &address).map_err(|e| SchemaError::new(field, e.to_string()))
}

pub fn parse_host_registry(text: &str) -> Result<HostRegistry, DocumentError> {
    let doc = yaml::parse(text)?;
    let mut top = MapReader::new(&doc, "")?;
    let controller = top.opt_string("controller")?.unwrap_or_else(|| CONTROLLER.into());
    if !is_identifier(&controller) {
        return Err(SchemaError::new("controller", "not a valid host name").into());
    }
    let controller_engine = match top.get("controller_engine") {
        None => EngineEndpoint::simulated(&controller),
        Some(_) => endpoint(&mut top, "controller_engine", &controller)?,
    };
    let mut ran_hosts: Vec<RanHost> = Vec::new();
    for (i, node) in top.opt_seq("ran_hosts")?.iter().enumerate() {
        let path = format!("ran_hosts[{i}]");
        let mut r = MapReader::new(node, &path)?;
        let name = r.string("name")?;
        if !is_identifier(&name) {
            return Err(SchemaError::new(r.field("name"), "not a valid host name").into());
        }
        if name == controller || name == CONTROLLER || ran_hosts.iter().any(|h| h.name == name) {
            return Err(SchemaError::new(r.field("name"), format!("duplicate host `{name}`")).into());
        }
        let engine = endpoint(&mut r, "engine", &name)?;
        let channel = endpoint(&mut r, "channel", &name)?;
        r.finish()?;
        ran_hosts.push(RanHost {
            name,
            engine,
            channel,
        });
    }
    top.finish()?;
    Ok(HostRegistry {
        controller,
        controller_engine,
        ran_hosts,
    })
}

pub fn serialize_host_registry(registry: &HostRegistry) -> String {
    let s = |v: &str| Node::scalar(v);
    let hosts = registry
        .ran_hosts
        .iter()
        .map(|h| {
            Node::Map(vec![
                ("name".into(), s(&h.name)),
                ("engine".into(), s(&h.engine.address)),
                ("channel".into(), s(&h.channel.address)),
            ])
        })
        .collect();
    yaml::emit(&Node::Map(vec![
        ("controller".into(), s(&registry.controller)),
        ("controller_engine".into(), s(&registry.controller_engine.address)),
        ("ran_hosts".into(), Node::Seq(hosts)),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_registry_round_trips() {
        let reg = default_host_registry();
        let parsed = parse_host_registry(&serialize_host_registry(&reg)).unwrap();
        assert_eq!(parsed, reg);
        assert_eq!(reg.resolve("controller"), Some(HostRef::Controller));
        assert!(matches!(reg.resolve("ran-1"), Some(HostRef::Ran(h)) if h.name == "ran-1"));
        assert_eq!(reg.resolve("ran-9"), None);
    }

    #[test]
    fn real_endpoints() {
        let text = "\
controller: cube-ctl
controller_engine: unix:///var/run/docker.sock
ran_hosts:
  - name: ran-1
    engine: tcp://10.0.0.11:2375
    channel: ssh://lab@10.0.0.11
";
        let reg = parse_host_registry(text).unwrap();
        assert_eq!(reg.controller_engine.kind, EndpointKind::Real);
        assert_eq!(reg.ran_hosts[0].channel.location(), "lab@10.0.0.11");
        assert!(reg.is_controller("controller"));
        assert!(reg.is_controller("cube-ctl"));
        assert_eq!(reg.canonical("controller"), Some("cube-ctl"));
    }

    #[test]
    fn rejects_duplicates_and_bad_schemes() {
        let dup = "ran_hosts:\n  - {name: a, engine: sim://a, channel: sim://a}\n  - {name: a, engine: sim://a, channel: sim://a}\n";
        assert!(parse_host_registry(dup).is_err());
        let bad = "ran_hosts:\n  - {name: a, engine: ftp://a, channel: sim://a}\n";
        assert!(matches!(
            parse_host_registry(bad),
            Err(DocumentError::Schema(e)) if e.field == "ran_hosts[0].engine"
        ));
    }
}
