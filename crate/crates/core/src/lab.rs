//! On-disk lab layout: stacks, templates, networks, hosts and settings.
//!
//! ```text
//! <catalog>/stacks/*.yaml
//! <catalog>/templates/...
//! <catalog>/networks.yaml
//! <catalog>/hosts.yaml
//! <catalog>/settings/global.env
//! <catalog>/settings/subscribers.env
//! ```
//!
//! Missing `networks.yaml` or `hosts.yaml` fall back to the built-in
//! defaults; missing settings files count as empty.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::hosts::{default_host_registry, parse_host_registry, HostRegistry};
use crate::netplan::{default_network_catalog, parse_network_catalog, validate_networks, NetworkCatalog};
use crate::report::ValidationReport;
use crate::settings::{parse_env_file, EnvError, SettingsMap};
use crate::DocumentError;

/// The catalog shipped with this crate.
pub fn default_catalog_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("catalog")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabPaths {
    pub catalog: PathBuf,
    pub settings: Option<PathBuf>,
    pub hosts: Option<PathBuf>,
    pub subscribers: Option<PathBuf>,
}

impl LabPaths {
    pub fn new(catalog: impl Into<PathBuf>) -> Self {
        Self {
            catalog: catalog.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("cannot read `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("`{}`: {source}", path.display())]
    Document {
        path: PathBuf,
        #[source]
        source: DocumentError,
    },
    #[error("`{}`: {source}", path.display())]
    Env {
        path: PathBuf,
        #[source]
        source: EnvError,
    },
    #[error("network catalog is inconsistent: {0}")]
    Networks(ValidationReport),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabConfig {
    pub stacks_dir: PathBuf,
    pub template_root: PathBuf,
    pub networks: NetworkCatalog,
    pub hosts: HostRegistry,
    pub global: SettingsMap,
    pub settings_path: PathBuf,
    pub subscribers_path: PathBuf,
}

fn read_optional(path: &Path) -> Result<Option<String>, LabError> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(LabError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

impl LabConfig {
    pub fn load(paths: &LabPaths) -> Result<Self, LabError> {
        let root = &paths.catalog;
        let networks_path = root.join("networks.yaml");
        let networks = match read_optional(&networks_path)? {
            Some(text) => parse_network_catalog(&text).map_err(|source| LabError::Document {
                path: networks_path.clone(),
                source,
            })?,
            None => default_network_catalog(),
        };
        let report = validate_networks(&networks);
        if !report.is_empty() {
            return Err(LabError::Networks(report));
        }
        let hosts_path = paths.hosts.clone().unwrap_or_else(|| root.join("hosts.yaml"));
        let hosts = match read_optional(&hosts_path)? {
            Some(text) => parse_host_registry(&text).map_err(|source| LabError::Document {
                path: hosts_path.clone(),
                source,
            })?,
            None => default_host_registry(),
        };
        let settings_path = paths
            .settings
            .clone()
            .unwrap_or_else(|| root.join("settings").join("global.env"));
        let global = match read_optional(&settings_path)? {
            Some(text) => {
                let env = parse_env_file(&text).map_err(|source| LabError::Env {
                    path: settings_path.clone(),
                    source,
                })?;
                for w in env.warnings_report().iter() {
                    tracing::warn!(path = %settings_path.display(), "{w}");
                }
                env.settings
            }
            None => SettingsMap::new(),
        };
        Ok(Self {
            stacks_dir: root.join("stacks"),
            template_root: root.join("templates"),
            networks,
            hosts,
            global,
            settings_path,
            subscribers_path: paths
                .subscribers
                .clone()
                .unwrap_or_else(|| root.join("settings").join("subscribers.env")),
        })
    }

    /// The shipped catalog with its default settings.
    pub fn shipped() -> Result<Self, LabError> {
        Self::load(&LabPaths::new(default_catalog_root()))
    }

    /// Subscriber file text; a missing file means no subscribers.
    pub fn subscribers_text(&self) -> Result<String, LabError> {
        Ok(read_optional(&self.subscribers_path)?.unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let lab = LabConfig::load(&LabPaths::new(dir.path())).unwrap();
        assert_eq!(lab.networks, default_network_catalog());
        assert_eq!(lab.hosts, default_host_registry());
        assert!(lab.global.is_empty());
        assert_eq!(lab.subscribers_text().unwrap(), "");
    }

    #[test]
    fn overlapping_networks_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("networks.yaml"),
            "networks:\n  - {name: a, kind: BRIDGE_WAN, subnet: 10.0.0.0/16}\n  - {name: b, kind: BRIDGE_WAN, subnet: 10.0.1.0/24}\n",
        )
        .unwrap();
        assert!(matches!(LabConfig::load(&LabPaths::new(dir.path())), Err(LabError::Networks(_))));
    }

    #[test]
    fn explicit_settings_path() {
        let dir = tempfile::tempdir().unwrap();
        let settings = dir.path().join("custom.env");
        std::fs::write(&settings, "MCC=001\nMNC=01\n").unwrap();
        let mut paths = LabPaths::new(dir.path());
        paths.settings = Some(settings.clone());
        let lab = LabConfig::load(&paths).unwrap();
        assert_eq!(lab.global.get("MNC"), Some("01"));
        assert_eq!(lab.settings_path, settings);
    }
}
