//! Loading the stack catalog from a directory of manifest files.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{
    parse_manifest, AddressSource, Generation, NetworkAttachment, ServiceRole, ServiceSpec,
    StackManifest, TemplateSpec, CONTROLLER,
};
use crate::report::{Finding, FindingCode, ValidationReport};

pub const UERANSIM_IMAGE: &str = "cube/ueransim:3.2.6";

#[derive(Debug, Error)]
#[error("cannot read `{}`: {source}", path.display())]
pub struct CatalogError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub manifest: StackManifest,
    pub source: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub name: String,
    pub generation: Generation,
    pub description: String,
    pub service_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackCatalog {
    pub entries: Vec<CatalogEntry>,
}

fn manifest_files(dir: &Path) -> Result<Vec<PathBuf>, CatalogError> {
    let err = |source| CatalogError {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        let is_yaml = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("yaml" | "yml")
        );
        if is_yaml && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

impl StackCatalog {
    /// Parses every `*.yaml`/`*.yml` file in `dir`. Files that fail to parse
    /// and repeated stack names become findings; the first file wins.
    pub fn load(dir: &Path) -> Result<(Self, ValidationReport), CatalogError> {
        let mut catalog = StackCatalog::default();
        let mut report = ValidationReport::new();
        for path in manifest_files(dir)? {
            let text = std::fs::read_to_string(&path).map_err(|source| CatalogError {
                path: path.clone(),
                source,
            })?;
            let subject = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            match parse_manifest(&text) {
                Err(e) => report.push(Finding::error(FindingCode::ParseError, subject, e.to_string())),
                Ok(manifest) => {
                    if let Some(prev) = catalog.get_entry(&manifest.name) {
                        report.push(Finding::error(
                            FindingCode::DuplicateStack,
                            manifest.name.as_str(),
                            format!("`{subject}` repeats a stack already defined in `{}`", prev.source.display()),
                        ));
                        continue;
                    }
                    catalog.entries.push(CatalogEntry {
                        manifest,
                        source: path,
                    });
                }
            }
        }
        catalog.entries.sort_by(|a, b| a.manifest.name.cmp(&b.manifest.name));
        tracing::debug!(dir = %dir.display(), stacks = catalog.entries.len(), "loaded catalog");
        Ok((catalog, report))
    }

    fn get_entry(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.manifest.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&StackManifest> {
        self.get_entry(name).map(|e| &e.manifest)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.manifest.name.as_str())
    }

    pub fn summaries(&self) -> Vec<CatalogSummary> {
        self.entries
            .iter()
            .map(|e| CatalogSummary {
                name: e.manifest.name.clone(),
                generation: e.manifest.generation,
                description: e.manifest.description.clone(),
                service_count: e.manifest.services.len(),
            })
            .collect()
    }
}

/// Catalog summaries sorted by name, plus findings for unreadable manifests.
pub fn list_catalog(dir: &Path) -> Result<(Vec<CatalogSummary>, ValidationReport), CatalogError> {
    let (catalog, report) = StackCatalog::load(dir)?;
    Ok((catalog.summaries(), report))
}

/// Replaces the RAN services of a 5G SA stack with a software gNB and UE pair
/// on the controller. Returns `None` for other generations or stacks without
/// a RAN service.
pub fn emulated_variant(manifest: &StackManifest) -> Option<StackManifest> {
    if manifest.generation != Generation::G5SA {
        return None;
    }
    let ran: Vec<&ServiceSpec> = manifest
        .services
        .iter()
        .filter(|s| s.role == ServiceRole::Ran)
        .collect();
    let first = *ran.first()?;
    let removed: Vec<&str> = ran.iter().map(|s| s.name.as_str()).collect();

    let mut services: Vec<ServiceSpec> = manifest
        .services
        .iter()
        .filter(|s| s.role != ServiceRole::Ran)
        .cloned()
        .collect();
    for s in &mut services {
        s.depends_on.retain(|d| !removed.contains(&d.as_str()));
    }

    let attach = |key: &str| NetworkAttachment {
        network: "corenet".into(),
        address: AddressSource::SettingKey(key.into()),
    };
    let mut gnb = ServiceSpec::new("ueransim-gnb", UERANSIM_IMAGE, ServiceRole::Ran);
    gnb.attachments.push(attach("UERANSIM_GNB_IP"));
    gnb.config_templates.push(TemplateSpec {
        source: "ueransim/gnb.yaml".into(),
        target: "gnb.yaml".into(),
    });
    gnb.depends_on = first.depends_on.clone();
    gnb.target_host = CONTROLLER.into();
    gnb.command_override = Some("nr-gnb -c /etc/cube/gnb.yaml".into());

    let mut ue = ServiceSpec::new("ueransim-ue", UERANSIM_IMAGE, ServiceRole::Ran);
    ue.attachments.push(attach("UERANSIM_UE_IP"));
    ue.config_templates.push(TemplateSpec {
        source: "ueransim/ue.yaml".into(),
        target: "ue.yaml".into(),
    });
    ue.depends_on = vec![gnb.name.clone()];
    ue.command_override = Some("nr-ue -c /etc/cube/ue.yaml".into());

    services.push(gnb);
    services.push(ue);

    let mut networks: Vec<String> = manifest.networks.clone();
    networks.retain(|n| services.iter().any(|s| s.attachment(n).is_some()));
    if !networks.iter().any(|n| n == "corenet") {
        networks.push("corenet".into());
    }

    Some(StackManifest {
        name: format!("{}-emulated", manifest.name),
        description: format!("{} (emulated RAN and UE)", manifest.description),
        generation: Generation::EMULATED,
        services,
        networks,
        overrides: manifest.overrides.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = "name: alpha\ngeneration: G4\ndescription: first\nservices:\n  - {name: x, image: a:1, role: UTIL}\n";

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let (list, report) = list_catalog(dir.path()).unwrap();
        assert!(list.is_empty());
        assert!(report.is_empty());
    }

    #[test]
    fn corrupt_file_is_a_finding() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.yaml"), A).unwrap();
        std::fs::write(dir.path().join("b.yaml"), "name: [unclosed\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let (list, report) = list_catalog(dir.path()).unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].name, "alpha");
        assert_eq!(list[0].service_count, 1);
        assert_eq!(report.len(), 1);
        assert!(report.has_code(FindingCode::ParseError));
    }

    #[test]
    fn duplicate_stack_names() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.yaml"), A).unwrap();
        std::fs::write(dir.path().join("b.yaml"), A).unwrap();
        let (catalog, report) = StackCatalog::load(dir.path()).unwrap();
        assert_eq!(catalog.entries.len(), 1);
        assert!(report.has_code(FindingCode::DuplicateStack));
    }

    #[test]
    fn missing_directory() {
        assert!(list_catalog(Path::new("/nonexistent/cube/stacks")).is_err());
    }

    #[test]
    fn emulation_only_for_5g_sa() {
        let m = parse_manifest(A).unwrap();
        assert!(emulated_variant(&m).is_none());
        let sa = parse_manifest(
            "name: s\ngeneration: G5SA\nnetworks: [corenet, rfnet]\nservices:\n  - {name: amf, image: a:1, role: CORE_NF, attachments: [{network: corenet, static_ip: 10.5.0.12}]}\n  - {name: gnb, image: g:1, role: RAN, target_host: ran-1, depends_on: [amf], attachments: [{network: rfnet, static_ip: 192.168.40.100}]}\n  - {name: mon, image: m:1, role: UTIL, depends_on: [gnb]}\n",
        )
        .unwrap();
        let e = emulated_variant(&sa).unwrap();
        assert_eq!(e.name, "s-emulated");
        assert_eq!(e.generation, Generation::EMULATED);
        let names: Vec<&str> = e.services.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["amf", "mon", "ueransim-gnb", "ueransim-ue"]);
        assert!(e.service("mon").unwrap().depends_on.is_empty());
        assert_eq!(e.service("ueransim-gnb").unwrap().depends_on, ["amf"]);
        assert_eq!(e.networks, ["corenet"]);
        assert!(e.services.iter().all(|s| s.target_host == CONTROLLER));
    }
}
