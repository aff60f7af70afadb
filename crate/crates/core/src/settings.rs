//! Central environment files, stack-level overrides and `${KEY}` template
//! rendering.

use std::collections::BTreeSet;
use std::fmt;
use std::io;
use std::net::Ipv4Addr;
use std::path::{Component, Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::StackManifest;
use crate::report::{Finding, FindingCode, ValidationReport};

/// `[A-Z][A-Z0-9_]*`
pub fn is_valid_key(key: &str) -> bool {
    let mut chars = key.chars();
    match chars.next() {
        Some(c) if c.is_ascii_uppercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid settings key `{0}` (expected [A-Z][A-Z0-9_]*)")]
pub struct InvalidKey(pub String);

/// Ordered key/value settings. Keys always satisfy [`is_valid_key`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct SettingsMap {
    entries: IndexMap<String, String>,
}

impl<'de> Deserialize<'de> for SettingsMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = IndexMap::<String, String>::deserialize(deserializer)?;
        let mut map = SettingsMap::new();
        for (k, v) in entries {
            map.insert(k, v).map_err(serde::de::Error::custom)?;
        }
        Ok(map)
    }
}

impl SettingsMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `key`, returning the previous value.
    pub fn insert(
        &mut self,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<Option<String>, InvalidKey> {
        let key = key.into();
        if !is_valid_key(&key) {
            return Err(InvalidKey(key));
        }
        Ok(self.entries.insert(key, value.into()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Serializes back to env-file form, one `KEY=VALUE` per line.
    pub fn to_env_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

impl<K: Into<String>, V: Into<String>> TryFrom<Vec<(K, V)>> for SettingsMap {
    type Error = InvalidKey;

    fn try_from(pairs: Vec<(K, V)>) -> Result<Self, Self::Error> {
        let mut map = SettingsMap::new();
        for (k, v) in pairs {
            map.insert(k, v)?;
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
}

/// A key that appeared more than once; the last occurrence won.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DuplicateKeyWarning {
    pub key: String,
    pub first_line: usize,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnvFile {
    pub settings: SettingsMap,
    pub warnings: Vec<DuplicateKeyWarning>,
}

impl EnvFile {
    pub fn warnings_report(&self) -> ValidationReport {
        self.warnings
            .iter()
            .map(|w| {
                Finding::warning(
                    FindingCode::DuplicateKey,
                    &w.key,
                    format!("line {} overrides line {}", w.line, w.first_line),
                )
            })
            .collect()
    }
}

/// Parses `KEY=VALUE` lines. The value is everything after the first `=`,
/// untrimmed. Blank lines and lines whose first non-blank character is `#`
/// are skipped.
pub fn parse_env_file(text: &str) -> Result<EnvFile, EnvError> {
    let mut env = EnvFile::default();
    let mut first_seen: IndexMap<String, usize> = IndexMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = raw.split_once('=') else {
            return Err(EnvError::MalformedLine {
                line,
                reason: "expected KEY=VALUE".into(),
            });
        };
        if env.settings.insert(key, value).is_err() {
            return Err(EnvError::MalformedLine {
                line,
                reason: format!("invalid key `{key}`"),
            });
        }
        match first_seen.get(key) {
            Some(&first_line) => env.warnings.push(DuplicateKeyWarning {
                key: key.to_string(),
                first_line,
                line,
            }),
            None => {
                first_seen.insert(key.to_string(), line);
            }
        }
    }
    Ok(env)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Global,
    Stack,
}

/// Global settings with stack overrides applied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSettings {
    effective: IndexMap<String, String>,
    provenance: IndexMap<String, Provenance>,
}

impl ResolvedSettings {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.effective.get(key).map(String::as_str)
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.provenance.get(key).copied()
    }

    pub fn effective(&self) -> impl Iterator<Item = (&str, &str)> {
        self.effective.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.effective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effective.is_empty()
    }
}

/// Layers `stack` over `global`; every key gets exactly one provenance.
pub fn resolve_settings(global: &SettingsMap, stack: &SettingsMap) -> ResolvedSettings {
    let mut resolved = ResolvedSettings::default();
    for (k, v) in global.iter() {
        resolved.effective.insert(k.to_string(), v.to_string());
        resolved.provenance.insert(k.to_string(), Provenance::Global);
    }
    for (k, v) in stack.iter() {
        resolved.effective.insert(k.to_string(), v.to_string());
        resolved.provenance.insert(k.to_string(), Provenance::Stack);
    }
    resolved
}

/// Structural checks on well-known settings. Used before accepting edits.
pub fn validate_settings(settings: &SettingsMap) -> ValidationReport {
    let mut report = ValidationReport::new();
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    for (key, value) in settings.iter() {
        let problem = match key {
            "MCC" if !(value.len() == 3 && digits(value)) => Some("MCC must be exactly 3 digits"),
            "MNC" if !((value.len() == 2 || value.len() == 3) && digits(value)) => {
                Some("MNC must be 2 or 3 digits")
            }
            k if k.ends_with("_IP") && value.parse::<Ipv4Addr>().is_err() => {
                Some("not a dotted-quad IPv4 address")
            }
            "CHANNEL" | "BAND" | "CELL_ID" | "TAC" | "PCI" if !digits(value) => {
                Some("must be a decimal number")
            }
            _ => None,
        };
        if let Some(reason) = problem {
            report.push(Finding::error(
                FindingCode::InvalidSetting,
                key,
                format!("`{value}`: {reason}"),
            ));
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("unresolved variable `{key}` at byte {position}")]
    UnresolvedVariable { key: String, position: usize },
    #[error("malformed variable reference at byte {position}")]
    BadVariableSyntax { position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub content: String,
    pub variables_used: BTreeSet<String>,
}

/// Substitutes every `${KEY}` with its effective value. `$${` is an escape
/// for a literal `${`. Substituted values are not re-scanned.
pub fn render_template(template: &str, settings: &ResolvedSettings) -> Result<Rendered, RenderError> {
    let mut content = String::with_capacity(template.len());
    let mut used = BTreeSet::new();
    let mut rest = template;
    let mut offset = 0;
    while let Some(idx) = rest.find('$') {
        content.push_str(&rest[..idx]);
        let at = &rest[idx..];
        let position = offset + idx;
        if let Some(after) = at.strip_prefix("$${") {
            content.push_str("${");
            rest = after;
            offset = position + 3;
        } else if let Some(body) = at.strip_prefix("${") {
            let close = body
                .find('}')
                .ok_or(RenderError::BadVariableSyntax { position })?;
            let key = &body[..close];
            if !is_valid_key(key) {
                return Err(RenderError::BadVariableSyntax { position });
            }
            let value = settings
                .get(key)
                .ok_or_else(|| RenderError::UnresolvedVariable {
                    key: key.to_string(),
                    position,
                })?;
            content.push_str(value);
            used.insert(key.to_string());
            rest = &body[close + 1..];
            offset = position + 2 + close + 1;
        } else {
            content.push('$');
            rest = &at[1..];
            offset = position + 1;
        }
    }
    content.push_str(rest);
    Ok(Rendered {
        content,
        variables_used: used,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedConfig {
    pub service: String,
    pub template_path: PathBuf,
    pub target_path: PathBuf,
    pub content: String,
    pub variables_used: BTreeSet<String>,
}

impl RenderedConfig {
    pub fn sha256(&self) -> String {
        crate::hash::sha256_hex(self.content.as_bytes())
    }
}

#[derive(Debug, Error)]
pub enum RenderStackError {
    #[error("service `{service}`, template `{}`: {source}", template.display())]
    Template {
        service: String,
        template: PathBuf,
        #[source]
        source: RenderError,
    },
    #[error("service `{service}`: cannot read `{}`: {source}", path.display())]
    Io {
        service: String,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("service `{service}`: path `{}` must be relative and stay inside its root", path.display())]
    UnsafePath { service: String, path: PathBuf },
}

impl RenderStackError {
    pub fn service(&self) -> &str {
        match self {
            RenderStackError::Template { service, .. }
            | RenderStackError::Io { service, .. }
            | RenderStackError::UnsafePath { service, .. } => service,
        }
    }
}

pub(crate) fn is_contained_relative(path: &Path) -> bool {
    !path.as_os_str().is_empty()
        && path
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

/// Renders every `(service, template)` pair in manifest order. Nothing is
/// returned unless every template renders.
pub fn render_stack(
    manifest: &StackManifest,
    settings: &ResolvedSettings,
    template_root: &Path,
) -> Result<Vec<RenderedConfig>, RenderStackError> {
    let mut out = Vec::new();
    for service in &manifest.services {
        for template in &service.config_templates {
            for path in [&template.source, &template.target] {
                if !is_contained_relative(path) {
                    return Err(RenderStackError::UnsafePath {
                        service: service.name.clone(),
                        path: path.clone(),
                    });
                }
            }
            let full = template_root.join(&template.source);
            let text = std::fs::read_to_string(&full).map_err(|source| RenderStackError::Io {
                service: service.name.clone(),
                path: full.clone(),
                source,
            })?;
            let rendered =
                render_template(&text, settings).map_err(|source| RenderStackError::Template {
                    service: service.name.clone(),
                    template: template.source.clone(),
                    source,
                })?;
            out.push(RenderedConfig {
                service: service.name.clone(),
                template_path: template.source.clone(),
                target_path: template.target.clone(),
                content: rendered.content,
                variables_used: rendered.variables_used,
            });
        }
    }
    Ok(out)
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Global => "GLOBAL",
            Provenance::Stack => "STACK",
        })
    }
}
