//! Compose fragments handed to RAN hosts for remote start-up.
//!
//! A fragment is a compose-style document in the same YAML subset as stack
//! manifests:
//!
//! ```yaml
//! name: srsran-open5gs-5gsa
//! services:
//!   gnb:
//!     container_name: srsran-open5gs-5gsa-gnb
//!     image: cube/srsran:24.10.1
//!     command: gnb -c /etc/cube/gnb.yaml
//!     network_mode: bridge
//!     labels:
//!       cube.stack: srsran-open5gs-5gsa
//!       cube.service: gnb
//!       cube.role: RAN
//!     volumes:
//!       - ./gnb.yaml:/etc/cube/gnb.yaml:ro
//! ```
//!
//! Volume sources are relative to the stack's directory on the remote host,
//! where the transferred files land.

use crate::engine::{ComposeFragment, TransferFile, BRIDGE_NETWORK};
use crate::manifest::{ServiceRole, ServiceSpec};
use crate::settings::is_contained_relative;
use crate::yaml::{self, expect_str, MapReader, Node, SchemaError};
use crate::DocumentError;

/// Where rendered configs appear inside every container.
pub const CONFIG_MOUNT: &str = "/etc/cube";
/// Per-stack directory on remote hosts.
pub const REMOTE_ROOT: &str = "/opt/cube";

pub const LABEL_STACK: &str = "cube.stack";
pub const LABEL_SERVICE: &str = "cube.service";
pub const LABEL_ROLE: &str = "cube.role";

pub fn container_name(stack: &str, service: &str) -> String {
    format!("{stack}-{service}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mount {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentService {
    pub service: String,
    pub container_name: String,
    pub stack: String,
    pub image: String,
    pub role: ServiceRole,
    pub command: Option<String>,
    pub mounts: Vec<Mount>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub stack: String,
    pub services: Vec<FragmentService>,
}

/// Builds the fragment for one delegated service. Its id is
/// `<stack>-<service>-<first 8 hex digits of the document's SHA-256>`.
pub fn build_fragment(stack: &str, service: &ServiceSpec, files: &[TransferFile]) -> ComposeFragment {
    let s = |v: &str| Node::scalar(v);
    let mut body = vec![
        ("container_name".into(), s(&container_name(stack, &service.name))),
        ("image".into(), s(service.image.as_str())),
    ];
    if let Some(cmd) = &service.command_override {
        body.push(("command".into(), s(cmd.as_str())));
    }
    body.push(("network_mode".into(), s(BRIDGE_NETWORK)));
    body.push((
        "labels".into(),
        Node::Map(vec![
            (LABEL_STACK.into(), s(stack)),
            (LABEL_SERVICE.into(), s(service.name.as_str())),
            (LABEL_ROLE.into(), s(service.role.as_str())),
        ]),
    ));
    if !files.is_empty() {
        body.push((
            "volumes".into(),
            Node::Seq(
                files
                    .iter()
                    .map(|f| s(&format!("./{}:{CONFIG_MOUNT}/{}:ro", f.path, f.path)))
                    .collect(),
            ),
        ));
    }
    let document = yaml::emit(&Node::Map(vec![
        ("name".into(), s(stack)),
        (
            "services".into(),
            Node::Map(vec![(service.name.clone(), Node::Map(body))]),
        ),
    ]));
    let digest = crate::hash::sha256_hex(document.as_bytes());
    ComposeFragment {
        id: format!("{stack}-{}-{}", service.name, &digest[..8]),
        document,
    }
}

fn parse_mount(node: &Node, field: &str) -> Result<Mount, SchemaError> {
    let text = expect_str(node, field)?;
    let mut parts = text.split(':');
    let (Some(source), Some(target)) = (parts.next(), parts.next()) else {
        return Err(SchemaError::new(field, "expected source:target[:mode]"));
    };
    if !matches!(parts.next(), None | Some("ro" | "rw")) || parts.next().is_some() {
        return Err(SchemaError::new(field, "unsupported mount mode"));
    }
    let source = source.strip_prefix("./").unwrap_or(source);
    if !is_contained_relative(std::path::Path::new(source)) {
        return Err(SchemaError::new(field, "mount source must stay inside the stack directory"));
    }
    Ok(Mount {
        source: source.into(),
        target: target.into(),
    })
}

pub fn parse_fragment(document: &str) -> Result<Fragment, DocumentError> {
    let doc = yaml::parse(document)?;
    let mut top = MapReader::new(&doc, "")?;
    let stack = top.string("name")?;
    let services_node = top.required("services")?;
    top.finish()?;
    let Node::Map(entries) = services_node else {
        return Err(SchemaError::new("services", "expected a mapping").into());
    };
    let mut services = Vec::new();
    for (name, node) in entries {
        let path = format!("services.{name}");
        let mut r = MapReader::new(node, &path)?;
        let container_name = r.string("container_name")?;
        let image = r.string("image")?;
        let command = r.opt_string("command")?;
        if let Some(mode) = r.opt_string("network_mode")? {
            if mode != BRIDGE_NETWORK {
                return Err(SchemaError::new(r.field("network_mode"), "only bridge is supported").into());
            }
        }
        let labels_field = r.field("labels");
        let labels = r.required("labels")?;
        let mut mounts = Vec::new();
        for (i, m) in r.opt_seq("volumes")?.iter().enumerate() {
            mounts.push(parse_mount(m, &format!("{path}.volumes[{i}]"))?);
        }
        r.finish()?;
        let mut l = MapReader::new(labels, &labels_field)?;
        let label_stack = l.string(LABEL_STACK)?;
        let service = l.string(LABEL_SERVICE)?;
        let role_field = l.field(LABEL_ROLE);
        let role = l
            .string(LABEL_ROLE)?
            .parse()
            .map_err(|e: String| SchemaError::new(role_field, e))?;
        l.finish()?;
        if label_stack != stack {
            return Err(SchemaError::new(labels_field, "stack label differs from fragment name").into());
        }
        services.push(FragmentService {
            service,
            container_name,
            stack: label_stack,
            image,
            role,
            command,
            mounts,
        });
    }
    Ok(Fragment { stack, services })
}
