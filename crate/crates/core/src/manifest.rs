//! Stack manifests: the declarative composition of services, networks and
//! setting overrides that make up one lab scenario.

use std::fmt;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::settings::{is_valid_key, SettingsMap};
use crate::yaml::{self, expect_str, MapReader, Node, SchemaError, SyntaxError};

/// Host name that always designates the controller.
pub const CONTROLLER: &str = "controller";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generation {
    G2,
    G4,
    G5SA,
    EMULATED,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceRole {
    CoreNf,
    Ran,
    Ims,
    Db,
    Util,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($variant:path => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(format!(
                        concat!("unknown ", $what, " `{}` (expected one of: {})"),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}
pub(crate) use text_enum;

text_enum!(Generation, "generation", {
    Generation::G2 => "G2",
    Generation::G4 => "G4",
    Generation::G5SA => "G5SA",
    Generation::EMULATED => "EMULATED",
});

text_enum!(ServiceRole, "role", {
    ServiceRole::CoreNf => "CORE_NF",
    ServiceRole::Ran => "RAN",
    ServiceRole::Ims => "IMS",
    ServiceRole::Db => "DB",
    ServiceRole::Util => "UTIL",
});

/// Where an attachment's IPv4 address comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressSource {
    Static(Ipv4Addr),
    SettingKey(String),
    /// Left to the engine.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkAttachment {
    pub network: String,
    pub address: AddressSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub source: PathBuf,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub image: String,
    pub role: ServiceRole,
    pub attachments: Vec<NetworkAttachment>,
    pub config_templates: Vec<TemplateSpec>,
    pub target_host: String,
    pub depends_on: Vec<String>,
    pub command_override: Option<String>,
}

impl ServiceSpec {
    pub fn new(name: impl Into<String>, image: impl Into<String>, role: ServiceRole) -> Self {
        Self {
            name: name.into(),
            image: image.into(),
            role,
            attachments: Vec::new(),
            config_templates: Vec::new(),
            target_host: CONTROLLER.to_string(),
            depends_on: Vec::new(),
            command_override: None,
        }
    }

    pub fn attachment(&self, network: &str) -> Option<&NetworkAttachment> {
        self.attachments.iter().find(|a| a.network == network)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackManifest {
    pub name: String,
    pub description: String,
    pub generation: Generation,
    pub services: Vec<ServiceSpec>,
    pub networks: Vec<String>,
    pub overrides: SettingsMap,
}

impl StackManifest {
    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("schema error: {0}")]
    Schema(#[from] SchemaError),
    #[error("duplicate service `{0}`")]
    DuplicateService(String),
}

/// Container, network, host and stack names: `[A-Za-z0-9][A-Za-z0-9_.-]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphanumeric() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn identifier(node: &Node, field: &str) -> Result<String, SchemaError> {
    let s = expect_str(node, field)?;
    if is_identifier(s) {
        Ok(s.to_string())
    } else {
        Err(SchemaError::new(field, format!("`{s}` is not a valid identifier")))
    }
}

fn image_reference(s: &str, field: &str) -> Result<String, SchemaError> {
    let tag = s.rsplit('/').next().and_then(|last| last.split_once(':'));
    match tag {
        Some((name, tag))
            if !name.is_empty() && !tag.is_empty() && !s.chars().any(char::is_whitespace) =>
        {
            Ok(s.to_string())
        }
        _ => Err(SchemaError::new(
            field,
            format!("`{s}` is not an image reference of the form name:tag"),
        )),
    }
}

fn parse_enum<T: FromStr<Err = String>>(node: &Node, field: &str) -> Result<T, SchemaError> {
    expect_str(node, field)?
        .parse()
        .map_err(|e: String| SchemaError::new(field, e))
}

fn string_list(items: &[Node], field: &str) -> Result<Vec<String>, SchemaError> {
    items
        .iter()
        .enumerate()
        .map(|(i, n)| identifier(n, &format!("{field}[{i}]")))
        .collect()
}

/// Parses a manifest document. Unknown keys at any level are rejected.
pub fn parse_manifest(text: &str) -> Result<StackManifest, ManifestError> {
    let doc = yaml::parse(text)?;
    let mut top = MapReader::new(&doc, "")?;
    let name = identifier(top.required("name")?, "name")?;
    let description = top.opt_string("description")?.unwrap_or_default();
    let generation = parse_enum(top.required("generation")?, "generation")?;
    let networks = string_list(top.opt_seq("networks")?, "networks")?;
    let overrides = match top.get("overrides") {
        None => SettingsMap::new(),
        Some(node) => parse_overrides(node)?,
    };
    let mut services: Vec<ServiceSpec> = Vec::new();
    for (i, node) in top.opt_seq("services")?.iter().enumerate() {
        let service = parse_service(node, &format!("services[{i}]"))?;
        if services.iter().any(|s| s.name == service.name) {
            return Err(ManifestError::DuplicateService(service.name));
        }
        services.push(service);
    }
    top.finish()?;
    Ok(StackManifest {
        name,
        description,
        generation,
        services,
        networks,
        overrides,
    })
}

fn parse_overrides(node: &Node) -> Result<SettingsMap, SchemaError> {
    let Node::Map(entries) = node else {
        return Err(SchemaError::new("overrides", "expected a mapping"));
    };
    let mut map = SettingsMap::new();
    for (key, value) in entries {
        let field = format!("overrides.{key}");
        let value = match value {
            Node::Scalar(s) => s.clone(),
            Node::Null => String::new(),
            _ => return Err(SchemaError::new(field, "expected a scalar")),
        };
        map.insert(key.clone(), value)
            .map_err(|e| SchemaError::new(&field, e.to_string()))?;
    }
    Ok(map)
}

fn parse_service(node: &Node, path: &str) -> Result<ServiceSpec, SchemaError> {
    let mut r = MapReader::new(node, path)?;
    let name = identifier(r.required("name")?, &r.field("name"))?;
    let image_field = r.field("image");
    let image = image_reference(&r.string("image")?, &image_field)?;
    let role = parse_enum(r.required("role")?, &r.field("role"))?;
    let target_host = match r.get("target_host") {
        Some(n) => identifier(n, &r.field("target_host"))?,
        None => CONTROLLER.to_string(),
    };
    let depends_on = string_list(r.opt_seq("depends_on")?, &r.field("depends_on"))?;
    let command_override = r.opt_string("command")?;
    let mut attachments = Vec::new();
    for (i, node) in r.opt_seq("attachments")?.iter().enumerate() {
        attachments.push(parse_attachment(node, &format!("{path}.attachments[{i}]"))?);
    }
    let mut config_templates = Vec::new();
    for (i, node) in r.opt_seq("templates")?.iter().enumerate() {
        let field = format!("{path}.templates[{i}]");
        match node {
            Node::Seq(pair) if pair.len() == 2 => {
                let source = expect_str(&pair[0], &field)?;
                let target = expect_str(&pair[1], &field)?;
                if source.is_empty() || target.is_empty() {
                    return Err(SchemaError::new(field, "template paths must be non-empty"));
                }
                config_templates.push(TemplateSpec {
                    source: source.into(),
                    target: target.into(),
                });
            }
            _ => return Err(SchemaError::new(field, "expected a [source, target] pair")),
        }
    }
    r.finish()?;
    Ok(ServiceSpec {
        name,
        image,
        role,
        attachments,
        config_templates,
        target_host,
        depends_on,
        command_override,
    })
}

fn parse_attachment(node: &Node, path: &str) -> Result<NetworkAttachment, SchemaError> {
    let mut r = MapReader::new(node, path)?;
    let network = identifier(r.required("network")?, &r.field("network"))?;
    let static_ip = r.opt_string("static_ip")?;
    let ip_key = r.opt_string("ip_key")?;
    let address = match (static_ip, ip_key) {
        (Some(_), Some(_)) => {
            return Err(SchemaError::new(
                path,
                "static_ip and ip_key are mutually exclusive",
            ))
        }
        (Some(ip), None) => AddressSource::Static(ip.parse().map_err(|_| {
            SchemaError::new(r.field("static_ip"), format!("`{ip}` is not an IPv4 address"))
        })?),
        (None, Some(key)) => {
            if !is_valid_key(&key) {
                return Err(SchemaError::new(
                    r.field("ip_key"),
                    format!("`{key}` is not a valid settings key"),
                ));
            }
            AddressSource::SettingKey(key)
        }
        (None, None) => AddressSource::Dynamic,
    };
    r.finish()?;
    Ok(NetworkAttachment { network, address })
}

fn scalar(s: impl Into<String>) -> Node {
    Node::Scalar(s.into())
}

fn entry(key: &str, node: Node) -> (String, Node) {
    (key.to_string(), node)
}

pub(crate) fn service_to_node(service: &ServiceSpec) -> Node {
    let mut entries = vec![
        entry("name", scalar(&service.name)),
        entry("image", scalar(&service.image)),
        entry("role", scalar(service.role.as_str())),
    ];
    if service.target_host != CONTROLLER {
        entries.push(entry("target_host", scalar(&service.target_host)));
    }
    if let Some(command) = &service.command_override {
        entries.push(entry("command", scalar(command)));
    }
    if !service.depends_on.is_empty() {
        entries.push(entry(
            "depends_on",
            Node::Seq(service.depends_on.iter().map(scalar).collect()),
        ));
    }
    if !service.attachments.is_empty() {
        let items = service
            .attachments
            .iter()
            .map(|a| {
                let mut m = vec![entry("network", scalar(&a.network))];
                match &a.address {
                    AddressSource::Static(ip) => m.push(entry("static_ip", scalar(ip.to_string()))),
                    AddressSource::SettingKey(k) => m.push(entry("ip_key", scalar(k))),
                    AddressSource::Dynamic => {}
                }
                Node::Map(m)
            })
            .collect();
        entries.push(entry("attachments", Node::Seq(items)));
    }
    if !service.config_templates.is_empty() {
        let items = service
            .config_templates
            .iter()
            .map(|t| {
                Node::Seq(vec![
                    scalar(t.source.to_string_lossy()),
                    scalar(t.target.to_string_lossy()),
                ])
            })
            .collect();
        entries.push(entry("templates", Node::Seq(items)));
    }
    Node::Map(entries)
}

/// Serializes a manifest to the document form accepted by
/// [`parse_manifest`].
pub fn serialize_manifest(manifest: &StackManifest) -> String {
    let mut entries = vec![
        entry("name", scalar(&manifest.name)),
        entry("description", scalar(&manifest.description)),
        entry("generation", scalar(manifest.generation.as_str())),
        entry(
            "networks",
            Node::Seq(manifest.networks.iter().map(scalar).collect()),
        ),
    ];
    if !manifest.overrides.is_empty() {
        entries.push(entry(
            "overrides",
            Node::Map(
                manifest
                    .overrides
                    .iter()
                    .map(|(k, v)| entry(k, scalar(v)))
                    .collect(),
            ),
        ));
    }
    entries.push(entry(
        "services",
        Node::Seq(manifest.services.iter().map(service_to_node).collect()),
    ));
    yaml::emit(&Node::Map(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "\
name: tiny
generation: G5SA
services:
  - name: nrf
    image: cube/open5gs:2.7.2
    role: CORE_NF
";

    #[test]
    fn minimal_manifest() {
        let m = parse_manifest(MINIMAL).unwrap();
        assert_eq!(m.name, "tiny");
        assert_eq!(m.services.len(), 1);
        assert!(m.networks.is_empty());
        assert_eq!(m.services[0].target_host, CONTROLLER);
        assert_eq!(parse_manifest(&serialize_manifest(&m)).unwrap(), m);
    }

    #[test]
    fn duplicate_service() {
        let text = format!(
            "{MINIMAL}  - name: amf\n    image: a:1\n    role: CORE_NF\n  - name: amf\n    image: a:1\n    role: CORE_NF\n"
        );
        assert_eq!(
            parse_manifest(&text),
            Err(ManifestError::DuplicateService("amf".into()))
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_manifest(&format!("{MINIMAL}colour: blue\n")).unwrap_err();
        assert_eq!(
            err,
            ManifestError::Schema(SchemaError::new("colour", "unknown key"))
        );
        let err = parse_manifest(&format!("{MINIMAL}    restart: always\n")).unwrap_err();
        assert!(matches!(err, ManifestError::Schema(e) if e.field == "services[0].restart"));
    }

    #[test]
    fn syntax_error_carries_line() {
        let err = parse_manifest("name: x\ngeneration: G2\nservices:\n  - name: a\n   image: b\n")
            .unwrap_err();
        assert!(matches!(err, ManifestError::Syntax(SyntaxError { line: 5, .. })));
    }

    #[test]
    fn attachment_address_is_exclusive() {
        let text = format!(
            "{MINIMAL}    attachments:\n      - {{network: corenet, static_ip: 10.5.0.10, ip_key: NRF_IP}}\n"
        );
        let err = parse_manifest(&text).unwrap_err();
        assert!(matches!(err, ManifestError::Schema(e) if e.reason.contains("mutually exclusive")));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad_role = MINIMAL.replace("CORE_NF", "CORE");
        assert!(matches!(
            parse_manifest(&bad_role),
            Err(ManifestError::Schema(e)) if e.field == "services[0].role"
        ));
        let untagged = MINIMAL.replace("cube/open5gs:2.7.2", "cube/open5gs");
        assert!(matches!(
            parse_manifest(&untagged),
            Err(ManifestError::Schema(e)) if e.field == "services[0].image"
        ));
        let bad_override = format!("{MINIMAL}overrides:\n  lower: 1\n");
        assert!(matches!(
            parse_manifest(&bad_override),
            Err(ManifestError::Schema(e)) if e.field == "overrides.lower"
        ));
    }

    fn arb_ident() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9-]{0,8}"
    }

    fn arb_service() -> impl Strategy<Value = ServiceSpec> {
        (
            arb_ident(),
            "[a-z]{1,6}/[a-z0-9-]{1,8}:[0-9][0-9.]{0,5}",
            prop::sample::select(vec![
                ServiceRole::CoreNf,
                ServiceRole::Ran,
                ServiceRole::Ims,
                ServiceRole::Db,
                ServiceRole::Util,
            ]),
            prop::collection::vec(
                (
                    arb_ident(),
                    prop_oneof![
                        any::<[u8; 4]>().prop_map(|o| AddressSource::Static(Ipv4Addr::from(o))),
                        "[A-Z][A-Z0-9_]{0,8}".prop_map(AddressSource::SettingKey),
                        Just(AddressSource::Dynamic),
                    ],
                ),
                0..3,
            ),
            prop::collection::vec(("[a-z/._-]{1,12}", "[a-z/._-]{1,12}"), 0..3),
            prop_oneof![Just(CONTROLLER.to_string()), arb_ident()],
            prop::collection::vec(arb_ident(), 0..3),
            prop::option::of("[ -~]{1,20}"),
        )
            .prop_map(
                |(name, image, role, attachments, templates, target_host, depends_on, command)| {
                    ServiceSpec {
                        name,
                        image,
                        role,
                        attachments: attachments
                            .into_iter()
                            .map(|(network, address)| NetworkAttachment { network, address })
                            .collect(),
                        config_templates: templates
                            .into_iter()
                            .map(|(s, t)| TemplateSpec {
                                source: s.into(),
                                target: t.into(),
                            })
                            .collect(),
                        target_host,
                        depends_on,
                        command_override: command,
                    }
                },
            )
    }

    fn arb_manifest() -> impl Strategy<Value = StackManifest> {
        (
            arb_ident(),
            "[ -~]{0,30}",
            prop::sample::select(vec![
                Generation::G2,
                Generation::G4,
                Generation::G5SA,
                Generation::EMULATED,
            ]),
            prop::collection::vec(arb_service(), 0..5),
            prop::collection::vec(arb_ident(), 0..3),
            prop::collection::vec(("[A-Z][A-Z0-9_]{0,6}", "[ -~]{0,12}"), 0..4),
        )
            .prop_map(|(name, description, generation, services, networks, overrides)| {
                let mut seen = std::collections::HashSet::new();
                let services = services
                    .into_iter()
                    .filter(|s| seen.insert(s.name.clone()))
                    .collect();
                let mut map = SettingsMap::new();
                for (k, v) in overrides {
                    map.insert(k, v).unwrap();
                }
                StackManifest {
                    name,
                    description,
                    generation,
                    services,
                    networks,
                    overrides: map,
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(m in arb_manifest()) {
            let text = serialize_manifest(&m);
            let parsed = parse_manifest(&text)
                .map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(parsed, m);
        }
    }
}
