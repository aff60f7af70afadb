//! Lab networks and the static address plan.
//!
//! Three networks are modelled by default: `corenet` (macvlan over an 802.1q
//! trunk, shared across hosts), `extnet` (bridged to the WAN) and `rfnet`
//! (isolated SDR transport).

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{text_enum, AddressSource, StackManifest};
use crate::report::{Finding, FindingCode, ValidationReport};
use crate::settings::ResolvedSettings;
use crate::yaml::{self, expect_str, MapReader, Node, SchemaError};
use crate::DocumentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ipv4Cidr {
    network: Ipv4Addr,
    prefix: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid CIDR `{input}`: {reason}")]
pub struct CidrError {
    pub input: String,
    pub reason: &'static str,
}

impl Ipv4Cidr {
    /// Fails if `prefix > 32` or host bits are set.
    pub fn new(network: Ipv4Addr, prefix: u8) -> Result<Self, CidrError> {
        let err = |reason| CidrError {
            input: format!("{network}/{prefix}"),
            reason,
        };
        if prefix > 32 {
            return Err(err("prefix length exceeds 32"));
        }
        let cidr = Self { network, prefix };
        if u32::from(network) & !cidr.mask() != 0 {
            return Err(err("host bits are set"));
        }
        Ok(cidr)
    }

    pub fn network(&self) -> Ipv4Addr {
        self.network
    }

    pub fn prefix(&self) -> u8 {
        self.prefix
    }

    fn mask(&self) -> u32 {
        if self.prefix == 0 {
            0
        } else {
            u32::MAX << (32 - self.prefix)
        }
    }

    pub fn first(&self) -> u32 {
        u32::from(self.network)
    }

    pub fn last(&self) -> u32 {
        self.first() | !self.mask()
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & self.mask() == self.first()
    }

    pub fn overlaps(&self, other: &Ipv4Cidr) -> bool {
        self.first() <= other.last() && other.first() <= self.last()
    }
}

impl fmt::Display for Ipv4Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.prefix)
    }
}

impl FromStr for Ipv4Cidr {
    type Err = CidrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| CidrError {
            input: s.to_string(),
            reason,
        };
        let (addr, len) = s.split_once('/').ok_or_else(|| err("missing `/len`"))?;
        let addr: Ipv4Addr = addr.parse().map_err(|_| err("bad address"))?;
        if len.is_empty() || len.len() > 2 || !len.chars().all(|c| c.is_ascii_digit()) {
            return Err(err("bad prefix length"));
        }
        let prefix: u8 = len.parse().map_err(|_| err("bad prefix length"))?;
        Ipv4Cidr::new(addr, prefix).map_err(|e| CidrError {
            input: s.to_string(),
            reason: e.reason,
        })
    }
}

impl Serialize for Ipv4Cidr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv4Cidr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NetworkKind {
    MacvlanTrunk,
    BridgeWan,
    Isolated,
}

text_enum!(NetworkKind, "network kind", {
    NetworkKind::MacvlanTrunk => "MACVLAN_TRUNK",
    NetworkKind::BridgeWan => "BRIDGE_WAN",
    NetworkKind::Isolated => "ISOLATED",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub kind: NetworkKind,
    pub subnet: Ipv4Cidr,
    pub gateway: Option<Ipv4Addr>,
    pub vlan_id: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkCatalog {
    pub networks: Vec<NetworkSpec>,
}

impl NetworkCatalog {
    pub fn get(&self, name: &str) -> Option<&NetworkSpec> {
        self.networks.iter().find(|n| n.name == name)
    }
}

/// corenet 10.5.0.0/24 (vlan 5), extnet 10.6.0.0/24, rfnet 192.168.40.0/24.
pub fn default_network_catalog() -> NetworkCatalog {
    NetworkCatalog {
        networks: vec![
            NetworkSpec {
                name: "corenet".into(),
                kind: NetworkKind::MacvlanTrunk,
                subnet: "10.5.0.0/24".parse().expect("literal"),
                gateway: Some(Ipv4Addr::new(10, 5, 0, 1)),
                vlan_id: Some(5),
            },
            NetworkSpec {
                name: "extnet".into(),
                kind: NetworkKind::BridgeWan,
                subnet: "10.6.0.0/24".parse().expect("literal"),
                gateway: Some(Ipv4Addr::new(10, 6, 0, 1)),
                vlan_id: None,
            },
            NetworkSpec {
                name: "rfnet".into(),
                kind: NetworkKind::Isolated,
                subnet: "192.168.40.0/24".parse().expect("literal"),
                gateway: None,
                vlan_id: None,
            },
        ],
    }
}

pub fn parse_network_catalog(text: &str) -> Result<NetworkCatalog, DocumentError> {
    let doc = yaml::parse(text)?;
    let mut top = MapReader::new(&doc, "")?;
    let mut networks = Vec::new();
    for (i, node) in top.opt_seq("networks")?.iter().enumerate() {
        networks.push(network_from_node(node, &format!("networks[{i}]"))?);
    }
    top.finish()?;
    Ok(NetworkCatalog { networks })
}

pub(crate) fn network_from_node(node: &Node, path: &str) -> Result<NetworkSpec, SchemaError> {
    let mut r = MapReader::new(node, path)?;
    let name_field = r.field("name");
    let name = r.string("name")?;
    if !crate::manifest::is_identifier(&name) {
        return Err(SchemaError::new(name_field, "not a valid identifier"));
    }
    let kind_field = r.field("kind");
    let kind = r
        .string("kind")?
        .parse()
        .map_err(|e: String| SchemaError::new(&kind_field, e))?;
    let subnet_field = r.field("subnet");
    let subnet = r
        .string("subnet")?
        .parse()
        .map_err(|e: CidrError| SchemaError::new(&subnet_field, e.to_string()))?;
    let gateway = match r.get("gateway") {
        None => None,
        Some(n) => {
            let field = r.field("gateway");
            let s = expect_str(n, &field)?;
            Some(
                s.parse()
                    .map_err(|_| SchemaError::new(field, format!("`{s}` is not an IPv4 address")))?,
            )
        }
    };
    let vlan_id = match r.get("vlan_id") {
        None => None,
        Some(n) => {
            let field = r.field("vlan_id");
            let s = expect_str(n, &field)?;
            Some(
                s.parse::<u16>()
                    .map_err(|_| SchemaError::new(field, format!("`{s}` is not an integer")))?,
            )
        }
    };
    r.finish()?;
    Ok(NetworkSpec {
        name,
        kind,
        subnet,
        gateway,
        vlan_id,
    })
}

pub(crate) fn network_to_node(n: &NetworkSpec) -> Node {
    let mut m = vec![
        ("name".to_string(), Node::scalar(&n.name)),
        ("kind".to_string(), Node::scalar(n.kind.as_str())),
        ("subnet".to_string(), Node::scalar(n.subnet.to_string())),
    ];
    if let Some(gw) = n.gateway {
        m.push(("gateway".to_string(), Node::scalar(gw.to_string())));
    }
    if let Some(vlan) = n.vlan_id {
        m.push(("vlan_id".to_string(), Node::scalar(vlan.to_string())));
    }
    Node::Map(m)
}

pub fn serialize_network_catalog(catalog: &NetworkCatalog) -> String {
    yaml::emit(&Node::Map(vec![(
        "networks".to_string(),
        Node::Seq(catalog.networks.iter().map(network_to_node).collect()),
    )]))
}

pub fn validate_networks(catalog: &NetworkCatalog) -> ValidationReport {
    let mut report = ValidationReport::new();
    for (i, net) in catalog.networks.iter().enumerate() {
        if catalog.networks[..i].iter().any(|n| n.name == net.name) {
            report.push(Finding::error(
                FindingCode::DuplicateNetwork,
                &net.name,
                "network name declared more than once",
            ));
        }
        for other in &catalog.networks[..i] {
            if other.subnet.overlaps(&net.subnet) {
                report.push(Finding::error(
                    FindingCode::Overlap,
                    format!("{},{}", other.name, net.name),
                    format!("{} overlaps {}", other.subnet, net.subnet),
                ));
            }
        }
        if let Some(gw) = net.gateway {
            if !net.subnet.contains(gw) {
                report.push(Finding::error(
                    FindingCode::GatewayOutsideSubnet,
                    &net.name,
                    format!("gateway {gw} is outside {}", net.subnet),
                ));
            }
        }
        match (net.kind, net.vlan_id) {
            (NetworkKind::MacvlanTrunk, None) => report.push(Finding::error(
                FindingCode::VlanMisuse,
                &net.name,
                "macvlan trunk networks need a vlan_id",
            )),
            (NetworkKind::MacvlanTrunk, Some(v)) if !(1..=4094).contains(&v) => {
                report.push(Finding::error(
                    FindingCode::VlanMisuse,
                    &net.name,
                    format!("vlan_id {v} outside 1-4094"),
                ))
            }
            (kind, Some(v)) if kind != NetworkKind::MacvlanTrunk => report.push(Finding::error(
                FindingCode::VlanMisuse,
                &net.name,
                format!("vlan_id {v} is only valid on MACVLAN_TRUNK networks"),
            )),
            _ => {}
        }
    }
    report
}

/// Locally administered unicast MAC address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<_> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(format!("`{s}` is not a MAC address"));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(format!("`{s}` is not a MAC address"));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| format!("`{s}` is not a MAC address"))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// `02:` followed by the first five bytes of SHA-256(`service/network`).
pub fn derive_mac(service: &str, network: &str) -> MacAddr {
    let digest = crate::hash::sha256(format!("{service}/{network}").as_bytes());
    MacAddr([0x02, digest[0], digest[1], digest[2], digest[3], digest[4]])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub service: String,
    pub network: String,
    pub address: Ipv4Addr,
    pub mac: MacAddr,
}

impl Assignment {
    pub fn new(service: impl Into<String>, network: impl Into<String>, address: Ipv4Addr) -> Self {
        let service = service.into();
        let network = network.into();
        let mac = derive_mac(&service, &network);
        Self {
            service,
            network,
            address,
            mac,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressPlan {
    pub assignments: Vec<Assignment>,
}

impl AddressPlan {
    pub fn lookup(&self, service: &str, network: &str) -> Option<&Assignment> {
        self.assignments
            .iter()
            .find(|a| a.service == service && a.network == network)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("service `{service}`: address key `{key}` is not set")]
    UnresolvedAddressKey { service: String, key: String },
    #[error("service `{service}`: `{value}` is not an IPv4 address")]
    UnparsableAddress { service: String, value: String },
}

/// Collects the static address of every attachment that has one, in
/// manifest order. Dynamic attachments get no entry.
pub fn build_address_plan(
    manifest: &StackManifest,
    settings: &ResolvedSettings,
) -> Result<AddressPlan, AddressError> {
    let mut plan = AddressPlan::default();
    for service in &manifest.services {
        for attachment in &service.attachments {
            let address = match &attachment.address {
                AddressSource::Static(ip) => *ip,
                AddressSource::SettingKey(key) => {
                    let value =
                        settings
                            .get(key)
                            .ok_or_else(|| AddressError::UnresolvedAddressKey {
                                service: service.name.clone(),
                                key: key.clone(),
                            })?;
                    value
                        .parse()
                        .map_err(|_| AddressError::UnparsableAddress {
                            service: service.name.clone(),
                            value: value.to_string(),
                        })?
                }
                AddressSource::Dynamic => continue,
            };
            plan.assignments
                .push(Assignment::new(&service.name, &attachment.network, address));
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Conflict {
    /// Two assignments share `(network, address)`. `first` precedes `second`
    /// in plan order.
    Duplicate {
        network: String,
        address: Ipv4Addr,
        first: String,
        second: String,
    },
    OutOfSubnet {
        service: String,
        network: String,
        address: Ipv4Addr,
    },
    GatewayCollision {
        service: String,
        network: String,
        address: Ipv4Addr,
    },
    UnknownNetwork {
        service: String,
        network: String,
    },
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conflict::Duplicate {
                network,
                address,
                first,
                second,
            } => write!(f, "{first} and {second} both use {address} on {network}"),
            Conflict::OutOfSubnet {
                service,
                network,
                address,
            } => write!(f, "{service}: {address} is outside {network}"),
            Conflict::GatewayCollision {
                service,
                network,
                address,
            } => write!(f, "{service}: {address} is the gateway of {network}"),
            Conflict::UnknownNetwork { service, network } => {
                write!(f, "{service}: network {network} is not in the catalog")
            }
        }
    }
}

impl Conflict {
    pub fn to_finding(&self) -> Finding {
        let (code, subject) = match self {
            Conflict::Duplicate { first, second, .. } => {
                (FindingCode::DuplicateAddress, format!("{first},{second}"))
            }
            Conflict::OutOfSubnet { service, .. } => (FindingCode::OutOfSubnet, service.clone()),
            Conflict::GatewayCollision { service, .. } => {
                (FindingCode::GatewayCollision, service.clone())
            }
            Conflict::UnknownNetwork { service, .. } => {
                (FindingCode::UnknownNetwork, service.clone())
            }
        };
        Finding::error(code, subject, self.to_string())
    }
}

/// Every duplicate `(network, address)` pair, every out-of-subnet address and
/// every gateway collision. Empty means the plan can be applied.
pub fn check_address_plan(plan: &AddressPlan, catalog: &NetworkCatalog) -> Vec<Conflict> {
    let mut conflicts = Vec::new();
    let mut groups: HashMap<(&str, Ipv4Addr), Vec<&Assignment>> = HashMap::new();
    for a in &plan.assignments {
        match catalog.get(&a.network) {
            None => conflicts.push(Conflict::UnknownNetwork {
                service: a.service.clone(),
                network: a.network.clone(),
            }),
            Some(net) => {
                if !net.subnet.contains(a.address) {
                    conflicts.push(Conflict::OutOfSubnet {
                        service: a.service.clone(),
                        network: a.network.clone(),
                        address: a.address,
                    });
                } else if net.gateway == Some(a.address) {
                    conflicts.push(Conflict::GatewayCollision {
                        service: a.service.clone(),
                        network: a.network.clone(),
                        address: a.address,
                    });
                }
            }
        }
        groups.entry((&a.network, a.address)).or_default().push(a);
    }
    let mut dup_groups: Vec<_> = groups.into_values().filter(|g| g.len() > 1).collect();
    dup_groups.sort_by_key(|g| (g[0].network.clone(), g[0].address));
    for group in dup_groups {
        for (i, first) in group.iter().enumerate() {
            for second in &group[i + 1..] {
                conflicts.push(Conflict::Duplicate {
                    network: first.network.clone(),
                    address: first.address,
                    first: first.service.clone(),
                    second: second.service.clone(),
                });
            }
        }
    }
    conflicts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::settings::{resolve_settings, SettingsMap};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn net(name: &str, kind: NetworkKind, subnet: &str, vlan: Option<u16>) -> NetworkSpec {
        NetworkSpec {
            name: name.into(),
            kind,
            subnet: subnet.parse().unwrap(),
            gateway: None,
            vlan_id: vlan,
        }
    }

    #[test]
    fn cidr_parsing() {
        let c: Ipv4Cidr = "10.5.0.0/24".parse().unwrap();
        assert!(c.contains("10.5.0.200".parse().unwrap()));
        assert!(!c.contains("10.5.1.0".parse().unwrap()));
        assert!("10.5.0.1/24".parse::<Ipv4Cidr>().is_err());
        assert!("10.5.0.0/33".parse::<Ipv4Cidr>().is_err());
        assert!("10.5.0.0".parse::<Ipv4Cidr>().is_err());
        assert!("0.0.0.0/0".parse::<Ipv4Cidr>().unwrap().contains(Ipv4Addr::BROADCAST));
    }

    #[test]
    fn default_catalog_is_clean() {
        assert!(validate_networks(&default_network_catalog()).is_empty());
    }

    #[test]
    fn default_catalog_document_round_trips() {
        let catalog = default_network_catalog();
        let text = serialize_network_catalog(&catalog);
        assert_eq!(parse_network_catalog(&text).unwrap(), catalog);
    }

    #[test]
    fn overlapping_subnets() {
        let catalog = NetworkCatalog {
            networks: vec![
                net("a", NetworkKind::Isolated, "10.5.0.0/24", None),
                net("b", NetworkKind::Isolated, "10.5.0.0/24", None),
            ],
        };
        assert!(validate_networks(&catalog).has_code(FindingCode::Overlap));
    }

    #[test]
    fn vlan_on_bridge() {
        let catalog = NetworkCatalog {
            networks: vec![net("extnet", NetworkKind::BridgeWan, "10.6.0.0/24", Some(6))],
        };
        let report = validate_networks(&catalog);
        assert_eq!(report.len(), 1);
        assert!(report.has_code(FindingCode::VlanMisuse));
    }

    #[test]
    fn duplicate_names_and_bad_gateway() {
        let mut a = net("a", NetworkKind::Isolated, "10.1.0.0/24", None);
        a.gateway = Some("10.2.0.1".parse().unwrap());
        let b = net("a", NetworkKind::Isolated, "10.3.0.0/24", None);
        let report = validate_networks(&NetworkCatalog {
            networks: vec![a, b],
        });
        assert!(report.has_code(FindingCode::DuplicateNetwork));
        assert!(report.has_code(FindingCode::GatewayOutsideSubnet));
    }

    #[test]
    fn macs_are_stable_and_local() {
        let a = derive_mac("amf", "corenet");
        assert_eq!(a, derive_mac("amf", "corenet"));
        assert_ne!(a, derive_mac("smf", "corenet"));
        assert_eq!(a.0[0], 0x02);
        assert_eq!(a.to_string().parse::<MacAddr>().unwrap(), a);
    }

    fn manifest_with(attachments: &str) -> StackManifest {
        crate::manifest::parse_manifest(&format!(
            "name: t\ngeneration: G5SA\nnetworks: [corenet]\nservices:\n  - name: amf\n    image: a:1\n    role: CORE_NF\n    attachments:\n      - {attachments}\n"
        ))
        .unwrap()
    }

    #[test]
    fn plan_from_static_and_key() {
        let empty = resolve_settings(&SettingsMap::new(), &SettingsMap::new());
        let plan = build_address_plan(&manifest_with("{network: corenet, static_ip: 10.5.0.10}"), &empty)
            .unwrap();
        assert_eq!(plan.assignments.len(), 1);
        assert_eq!(plan.assignments[0].address, Ipv4Addr::new(10, 5, 0, 10));

        let s = resolve_settings(
            &SettingsMap::try_from(vec![("AMF_IP", "10.5.0.12")]).unwrap(),
            &SettingsMap::new(),
        );
        let plan =
            build_address_plan(&manifest_with("{network: corenet, ip_key: AMF_IP}"), &s).unwrap();
        assert_eq!(plan.assignments[0].address, Ipv4Addr::new(10, 5, 0, 12));

        assert_eq!(
            build_address_plan(&manifest_with("{network: corenet, ip_key: AMF_IP}"), &empty),
            Err(AddressError::UnresolvedAddressKey {
                service: "amf".into(),
                key: "AMF_IP".into()
            })
        );
        let bad = resolve_settings(
            &SettingsMap::try_from(vec![("AMF_IP", "amf.local")]).unwrap(),
            &SettingsMap::new(),
        );
        assert!(matches!(
            build_address_plan(&manifest_with("{network: corenet, ip_key: AMF_IP}"), &bad),
            Err(AddressError::UnparsableAddress { .. })
        ));
        let plan = build_address_plan(&manifest_with("{network: corenet}"), &empty).unwrap();
        assert!(plan.assignments.is_empty());
    }

    #[test]
    fn duplicate_and_out_of_subnet() {
        let catalog = default_network_catalog();
        let plan = AddressPlan {
            assignments: vec![
                Assignment::new("amf", "corenet", "10.5.0.10".parse().unwrap()),
                Assignment::new("smf", "corenet", "10.5.0.10".parse().unwrap()),
                Assignment::new("upf", "corenet", "10.9.9.9".parse().unwrap()),
                Assignment::new("nrf", "corenet", "10.5.0.1".parse().unwrap()),
            ],
        };
        let conflicts = check_address_plan(&plan, &catalog);
        assert_eq!(conflicts.len(), 3);
        assert!(conflicts.contains(&Conflict::Duplicate {
            network: "corenet".into(),
            address: "10.5.0.10".parse().unwrap(),
            first: "amf".into(),
            second: "smf".into(),
        }));
        assert!(conflicts
            .iter()
            .any(|c| matches!(c, Conflict::OutOfSubnet { service, .. } if service == "upf")));
        assert!(conflicts
            .iter()
            .any(|c| matches!(c, Conflict::GatewayCollision { service, .. } if service == "nrf")));
    }

    fn arb_cidr() -> impl Strategy<Value = Ipv4Cidr> {
        (0u32..64, 16u8..=30).prop_map(|(base, prefix)| {
            let raw = (10u32 << 24) | (base << 12);
            let mask = u32::MAX << (32 - prefix);
            Ipv4Cidr::new(Ipv4Addr::from(raw & mask), prefix).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        // Exhaustive membership oracle: enumerate each subnet's addresses.
        #[test]
        fn overlap_agrees_with_enumeration(a in arb_cidr(), b in arb_cidr()) {
            let set_a: HashSet<u32> = (a.first()..=a.last()).collect();
            let intersects = (b.first()..=b.last()).any(|x| set_a.contains(&x));
            prop_assert_eq!(a.overlaps(&b), intersects);
            let catalog = NetworkCatalog {
                networks: vec![
                    NetworkSpec { name: "a".into(), kind: NetworkKind::Isolated, subnet: a, gateway: None, vlan_id: None },
                    NetworkSpec { name: "b".into(), kind: NetworkKind::Isolated, subnet: b, gateway: None, vlan_id: None },
                ],
            };
            prop_assert_eq!(validate_networks(&catalog).has_code(FindingCode::Overlap), intersects);
        }
    }
}
