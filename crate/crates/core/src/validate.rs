//! Pre-deployment checks for a stack manifest and its dependency order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hosts::HostRegistry;
use crate::manifest::{AddressSource, ServiceRole, StackManifest};
use crate::netplan::{check_address_plan, AddressPlan, Assignment, Conflict, NetworkCatalog};
use crate::report::{Finding, FindingCode, ValidationReport};
use crate::settings::ResolvedSettings;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub struct CycleError {
    /// Closed chain, e.g. `["a", "b", "a"]`.
    pub chain: Vec<String>,
}

impl fmt::Display for CycleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dependency cycle {}", self.chain.join(" -> "))
    }
}

fn phase(role: ServiceRole) -> u8 {
    match role {
        ServiceRole::Db => 0,
        ServiceRole::Ran => 2,
        _ => 1,
    }
}

/// Service indices in dependency order. Among services that are ready at the
/// same time, databases come first and RAN services last; remaining ties keep
/// manifest order. Dependencies on unknown services are ignored here.
pub fn topological_order(manifest: &StackManifest) -> Result<Vec<usize>, CycleError> {
    let services = &manifest.services;
    let index: HashMap<&str, usize> = services
        .iter()
        .enumerate()
        .map(|(i, s)| (s.name.as_str(), i))
        .collect();
    let deps: Vec<Vec<usize>> = services
        .iter()
        .map(|s| {
            let mut d: Vec<usize> = s
                .depends_on
                .iter()
                .filter_map(|n| index.get(n.as_str()).copied())
                .collect();
            d.sort_unstable();
            d.dedup();
            d
        })
        .collect();
    let mut remaining: Vec<usize> = deps.iter().map(Vec::len).collect();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); services.len()];
    for (i, d) in deps.iter().enumerate() {
        for &j in d {
            dependents[j].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<(u8, usize)>> = (0..services.len())
        .filter(|&i| remaining[i] == 0)
        .map(|i| Reverse((phase(services[i].role), i)))
        .collect();
    let mut order = Vec::with_capacity(services.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &k in &dependents[i] {
            remaining[k] -= 1;
            if remaining[k] == 0 {
                ready.push(Reverse((phase(services[k].role), k)));
            }
        }
    }
    if order.len() == services.len() {
        return Ok(order);
    }
    // Every unplaced service has an unplaced dependency, so walking those
    // edges must revisit a node.
    let placed: HashSet<usize> = order.into_iter().collect();
    let start = (0..services.len()).find(|i| !placed.contains(i)).expect("unplaced service");
    let mut path = vec![start];
    let mut current = start;
    loop {
        let next = *deps[current]
            .iter()
            .find(|d| !placed.contains(d))
            .expect("unplaced dependency");
        if let Some(pos) = path.iter().position(|&p| p == next) {
            let mut chain: Vec<String> =
                path[pos..].iter().map(|&i| services[i].name.clone()).collect();
            chain.push(services[next].name.clone());
            return Err(CycleError { chain });
        }
        path.push(next);
        current = next;
    }
}

/// Checks a manifest against the network catalog, host registry and settings.
/// An empty report means the stack can be deployed.
pub fn validate_manifest(
    manifest: &StackManifest,
    networks: &NetworkCatalog,
    hosts: &HostRegistry,
    settings: &ResolvedSettings,
) -> ValidationReport {
    let mut report = ValidationReport::new();
    for net in &manifest.networks {
        if networks.get(net).is_none() {
            report.push(Finding::error(
                FindingCode::UnknownNetwork,
                net.as_str(),
                format!("network `{net}` is not in the network catalog"),
            ));
        }
    }

    let names: HashSet<&str> = manifest.services.iter().map(|s| s.name.as_str()).collect();
    let mut plan = AddressPlan::default();
    for svc in &manifest.services {
        let subject = svc.name.as_str();
        match hosts.resolve(&svc.target_host) {
            None => report.push(Finding::error(
                FindingCode::UnknownHost,
                subject,
                format!("target host `{}` is not registered", svc.target_host),
            )),
            Some(_) if !hosts.is_controller(&svc.target_host) && svc.role != ServiceRole::Ran => {
                report.push(Finding::error(
                    FindingCode::RemoteNonRan,
                    subject,
                    format!(
                        "only RAN services may run on `{}`; role is {}",
                        svc.target_host, svc.role
                    ),
                ))
            }
            Some(_) => {}
        }
        for dep in &svc.depends_on {
            if !names.contains(dep.as_str()) {
                report.push(Finding::error(
                    FindingCode::UnknownDependency,
                    subject,
                    format!("depends on unknown service `{dep}`"),
                ));
            }
        }
        let mut seen = HashSet::new();
        for att in &svc.attachments {
            let net = att.network.as_str();
            if !seen.insert(net) {
                report.push(Finding::error(
                    FindingCode::DuplicateAttachment,
                    subject,
                    format!("attached to `{net}` more than once"),
                ));
                continue;
            }
            if !manifest.networks.iter().any(|n| n == net) {
                report.push(Finding::error(
                    FindingCode::UndeclaredNetwork,
                    subject,
                    format!("network `{net}` is not listed in the stack's networks"),
                ));
            }
            if networks.get(net).is_none() {
                report.push(Finding::error(
                    FindingCode::UnknownNetwork,
                    subject,
                    format!("network `{net}` is not in the network catalog"),
                ));
            }
            let address: Option<Ipv4Addr> = match &att.address {
                AddressSource::Static(ip) => Some(*ip),
                AddressSource::SettingKey(key) => match settings.get(key) {
                    None => {
                        report.push(Finding::error(
                            FindingCode::UnresolvedAddressKey,
                            subject,
                            format!("address key `{key}` for `{net}` is not set"),
                        ));
                        None
                    }
                    Some(value) => match value.parse() {
                        Ok(ip) => Some(ip),
                        Err(_) => {
                            report.push(Finding::error(
                                FindingCode::UnparsableAddress,
                                subject,
                                format!("`{key}` = `{value}` is not an IPv4 address"),
                            ));
                            None
                        }
                    },
                },
                AddressSource::Dynamic => {
                    if svc.role != ServiceRole::Util {
                        report.push(Finding::error(
                            FindingCode::DynamicAddressNotAllowed,
                            subject,
                            format!("`{net}` needs a static address for role {}", svc.role),
                        ));
                    }
                    None
                }
            };
            if let Some(ip) = address {
                plan.assignments.push(Assignment::new(&svc.name, net, ip));
            }
        }
    }

    for conflict in check_address_plan(&plan, networks) {
        // already reported per attachment
        if !matches!(conflict, Conflict::UnknownNetwork { .. }) {
            report.push(conflict.to_finding());
        }
    }

    if let Err(cycle) = topological_order(manifest) {
        report.push(Finding::error(
            FindingCode::DependencyCycle,
            cycle.chain[0].as_str(),
            cycle.to_string(),
        ));
    }

    let dbs: Vec<&str> = manifest
        .services
        .iter()
        .filter(|s| s.role == ServiceRole::Db)
        .map(|s| s.name.as_str())
        .collect();
    if dbs.len() > 1 {
        report.push(Finding::error(
            FindingCode::AmbiguousSubscriberDb,
            dbs.join(","),
            "a stack may contain at most one subscriber database",
        ));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hosts::default_host_registry;
    use crate::manifest::{parse_manifest, NetworkAttachment, ServiceSpec};
    use crate::netplan::default_network_catalog;
    use crate::settings::{resolve_settings, SettingsMap};

    fn settings() -> ResolvedSettings {
        resolve_settings(
            &SettingsMap::try_from(vec![("AMF_IP", "10.5.0.12"), ("BAD_IP", "nope")]).unwrap(),
            &SettingsMap::new(),
        )
    }

    fn check(text: &str) -> ValidationReport {
        validate_manifest(
            &parse_manifest(text).unwrap(),
            &default_network_catalog(),
            &default_host_registry(),
            &settings(),
        )
    }

    fn codes(report: &ValidationReport) -> Vec<FindingCode> {
        report.iter().map(|f| f.code).collect()
    }

    #[test]
    fn clean_manifest() {
        let r = check(
            "name: s\ngeneration: G5SA\nnetworks: [corenet]\nservices:\n  - name: amf\n    image: a:1\n    role: CORE_NF\n    attachments:\n      - {network: corenet, ip_key: AMF_IP}\n",
        );
        assert!(r.is_empty(), "{r}");
    }

    #[test]
    fn unknown_network_and_host() {
        let r = check(
            "name: s\ngeneration: G5SA\nnetworks: [lab9]\nservices:\n  - name: gnb\n    image: a:1\n    role: RAN\n    target_host: ran-9\n    attachments:\n      - {network: lab9, static_ip: 10.9.0.2}\n",
        );
        assert!(r.has_code(FindingCode::UnknownNetwork));
        assert!(r.has_code(FindingCode::UnknownHost));
    }

    #[test]
    fn structural_findings() {
        let r = check(
            "\
name: s
generation: G5SA
networks: [corenet]
services:
  - name: db1
    image: a:1
    role: DB
  - name: db2
    image: a:1
    role: DB
    depends_on: [ghost]
  - name: amf
    image: a:1
    role: CORE_NF
    target_host: ran-1
    attachments:
      - {network: corenet}
      - {network: extnet, ip_key: MISSING_IP}
      - {network: corenet, static_ip: 10.5.0.9}
  - name: smf
    image: a:1
    role: CORE_NF
    attachments:
      - {network: corenet, ip_key: BAD_IP}
",
        );
        let c = codes(&r);
        for code in [
            FindingCode::AmbiguousSubscriberDb,
            FindingCode::UnknownDependency,
            FindingCode::RemoteNonRan,
            FindingCode::DynamicAddressNotAllowed,
            FindingCode::UndeclaredNetwork,
            FindingCode::UnresolvedAddressKey,
            FindingCode::DuplicateAttachment,
            FindingCode::UnparsableAddress,
        ] {
            assert!(c.contains(&code), "missing {code} in {r}");
        }
    }

    #[test]
    fn address_conflicts_become_findings() {
        let r = check(
            "name: s\ngeneration: G5SA\nnetworks: [corenet]\nservices:\n  - {name: a, image: a:1, role: CORE_NF, attachments: [{network: corenet, static_ip: 10.5.0.12}]}\n  - {name: b, image: a:1, role: CORE_NF, attachments: [{network: corenet, ip_key: AMF_IP}]}\n  - {name: c, image: a:1, role: CORE_NF, attachments: [{network: corenet, static_ip: 10.5.0.1}]}\n  - {name: d, image: a:1, role: CORE_NF, attachments: [{network: corenet, static_ip: 10.7.0.1}]}\n",
        );
        assert_eq!(
            codes(&r),
            vec![
                FindingCode::GatewayCollision,
                FindingCode::OutOfSubnet,
                FindingCode::DuplicateAddress
            ]
        );
    }

    fn svc(name: &str, role: ServiceRole, deps: &[&str]) -> ServiceSpec {
        let mut s = ServiceSpec::new(name, "x:1", role);
        s.depends_on = deps.iter().map(|d| d.to_string()).collect();
        s
    }

    fn stack(services: Vec<ServiceSpec>) -> StackManifest {
        StackManifest {
            name: "t".into(),
            description: String::new(),
            generation: crate::manifest::Generation::G5SA,
            services,
            networks: vec![],
            overrides: SettingsMap::new(),
        }
    }

    #[test]
    fn order_prefers_db_first_ran_last() {
        let m = stack(vec![
            svc("gnb", ServiceRole::Ran, &[]),
            svc("amf", ServiceRole::CoreNf, &["nrf"]),
            svc("nrf", ServiceRole::CoreNf, &[]),
            svc("db", ServiceRole::Db, &[]),
        ]);
        let names: Vec<&str> = topological_order(&m)
            .unwrap()
            .into_iter()
            .map(|i| m.services[i].name.as_str())
            .collect();
        assert_eq!(names, ["db", "nrf", "amf", "gnb"]);
    }

    #[test]
    fn cycle_chain() {
        let m = stack(vec![
            svc("x", ServiceRole::CoreNf, &[]),
            svc("a", ServiceRole::CoreNf, &["b"]),
            svc("b", ServiceRole::CoreNf, &["a"]),
        ]);
        assert_eq!(
            topological_order(&m).unwrap_err().chain,
            vec!["a".to_string(), "b".into(), "a".into()]
        );
        let self_loop = stack(vec![svc("a", ServiceRole::CoreNf, &["a"])]);
        assert_eq!(topological_order(&self_loop).unwrap_err().chain, ["a", "a"]);
    }

    #[test]
    fn validation_is_pure() {
        let mut m = stack(vec![svc("a", ServiceRole::CoreNf, &["b"]), svc("b", ServiceRole::CoreNf, &["a"])]);
        m.services[0].attachments.push(NetworkAttachment {
            network: "nowhere".into(),
            address: AddressSource::Dynamic,
        });
        let args = (default_network_catalog(), default_host_registry(), settings());
        let first = validate_manifest(&m, &args.0, &args.1, &args.2);
        let second = validate_manifest(&m, &args.0, &args.1, &args.2);
        assert_eq!(first, second);
        assert!(first.has_code(FindingCode::DependencyCycle));
    }
}
