//! Subscriber identities and the seed set that repopulates the subscriber
//! database each time a stack starts.
//!
//! Env schema: `UE<n>_IMSI`, `UE<n>_KI`, `UE<n>_OPC`, and optionally
//! `UE<n>_AMF` (defaults to `8000`) and `UE<n>_MSISDN`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{Finding, FindingCode, ValidationReport};
use crate::settings::{parse_env_file, EnvError, ResolvedSettings};

pub const DEFAULT_AMF_FIELD: &str = "8000";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubscriberRecord {
    pub imsi: String,
    pub ki: String,
    pub opc: String,
    pub amf_field: String,
    pub msisdn: Option<String>,
}

impl SubscriberRecord {
    /// `imsi,ki,opc,amf_field[,msisdn]`
    pub fn canonical_line(&self) -> String {
        let mut line = format!("{},{},{},{}", self.imsi, self.ki, self.opc, self.amf_field);
        if let Some(msisdn) = &self.msisdn {
            line.push(',');
            line.push_str(msisdn);
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plmn {
    pub mcc: String,
    pub mnc: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlmnError {
    #[error("setting `{0}` is not set")]
    Missing(&'static str),
    #[error("MCC `{0}` must be 3 digits")]
    BadMcc(String),
    #[error("MNC `{0}` must be 2 or 3 digits")]
    BadMnc(String),
}

impl Plmn {
    pub fn new(mcc: impl Into<String>, mnc: impl Into<String>) -> Result<Self, PlmnError> {
        let mcc = mcc.into();
        let mnc = mnc.into();
        let digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());
        if mcc.len() != 3 || !digits(&mcc) {
            return Err(PlmnError::BadMcc(mcc));
        }
        if !(mnc.len() == 2 || mnc.len() == 3) || !digits(&mnc) {
            return Err(PlmnError::BadMnc(mnc));
        }
        Ok(Self { mcc, mnc })
    }

    /// Reads `MCC` and `MNC`; the MNC length comes from the setting itself.
    pub fn from_settings(settings: &ResolvedSettings) -> Result<Self, PlmnError> {
        let mcc = settings.get("MCC").ok_or(PlmnError::Missing("MCC"))?;
        let mnc = settings.get("MNC").ok_or(PlmnError::Missing("MNC"))?;
        Plmn::new(mcc, mnc)
    }

    pub fn prefix(&self) -> String {
        format!("{}{}", self.mcc, self.mnc)
    }
}

impl fmt::Display for Plmn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.mcc, self.mnc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubscriberField {
    Imsi,
    Ki,
    Opc,
    Amf,
    Msisdn,
}

impl SubscriberField {
    fn suffix(self) -> &'static str {
        match self {
            SubscriberField::Imsi => "IMSI",
            SubscriberField::Ki => "KI",
            SubscriberField::Opc => "OPC",
            SubscriberField::Amf => "AMF",
            SubscriberField::Msisdn => "MSISDN",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        [
            SubscriberField::Imsi,
            SubscriberField::Ki,
            SubscriberField::Opc,
            SubscriberField::Amf,
            SubscriberField::Msisdn,
        ]
        .into_iter()
        .find(|f| f.suffix() == s)
    }
}

impl fmt::Display for SubscriberField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubscriberError {
    #[error(transparent)]
    MalformedLine(#[from] EnvError),
    #[error("UE{index}: missing {missing}")]
    IncompleteRecord {
        index: u32,
        missing: SubscriberField,
    },
    #[error("unknown subscriber key `{0}`")]
    UnknownKey(String),
    #[error("duplicate IMSI {0}")]
    DuplicateImsi(String),
    #[error("invalid subscriber {imsi}: {report}")]
    InvalidRecord {
        imsi: String,
        report: ValidationReport,
    },
}

/// Assembles one record per `UE<n>` index, ordered by `n`. Keys that do not
/// start with `UE<digits>_` are ignored so the file may carry comments-as-keys
/// for other tools.
pub fn parse_subscribers(text: &str) -> Result<Vec<SubscriberRecord>, SubscriberError> {
    let env = parse_env_file(text)?;
    let mut slots: BTreeMap<u32, BTreeMap<SubscriberField, String>> = BTreeMap::new();
    for (key, value) in env.settings.iter() {
        let Some(rest) = key.strip_prefix("UE") else {
            continue;
        };
        let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
        let Some(suffix) = rest[digits.len()..].strip_prefix('_') else {
            continue;
        };
        let Ok(index) = digits.parse::<u32>() else {
            continue;
        };
        let field =
            SubscriberField::from_suffix(suffix).ok_or_else(|| SubscriberError::UnknownKey(key.into()))?;
        slots.entry(index).or_default().insert(field, value.to_string());
    }
    let mut records = Vec::with_capacity(slots.len());
    for (index, mut fields) in slots {
        let mut take = |field| {
            fields
                .remove(&field)
                .ok_or(SubscriberError::IncompleteRecord {
                    index,
                    missing: field,
                })
        };
        let imsi = take(SubscriberField::Imsi)?;
        let ki = take(SubscriberField::Ki)?;
        let opc = take(SubscriberField::Opc)?;
        let amf_field = take(SubscriberField::Amf).unwrap_or_else(|_| DEFAULT_AMF_FIELD.into());
        let msisdn = take(SubscriberField::Msisdn).ok();
        records.push(SubscriberRecord {
            imsi,
            ki,
            opc,
            amf_field,
            msisdn,
        });
    }
    Ok(records)
}

fn is_hex(s: &str) -> bool {
    s.chars().all(|c| c.is_ascii_hexdigit())
}

fn is_digits(s: &str) -> bool {
    s.chars().all(|c| c.is_ascii_digit())
}

pub fn validate_subscriber(record: &SubscriberRecord, plmn: &Plmn) -> ValidationReport {
    let mut report = ValidationReport::new();
    let subject = |field: &str| format!("{}.{field}", record.imsi);
    if !is_digits(&record.imsi) {
        report.push(Finding::error(
            FindingCode::Charset,
            subject("imsi"),
            "IMSI must contain decimal digits only",
        ));
    }
    if record.imsi.len() != 15 {
        report.push(Finding::error(
            FindingCode::Length,
            subject("imsi"),
            format!("IMSI has {} characters, expected 15", record.imsi.len()),
        ));
    }
    if !record.imsi.starts_with(&plmn.prefix()) {
        report.push(Finding::error(
            FindingCode::PlmnMismatch,
            subject("imsi"),
            format!("IMSI does not start with PLMN {}", plmn.prefix()),
        ));
    }
    for (name, value, len) in [
        ("ki", &record.ki, 32),
        ("opc", &record.opc, 32),
        ("amf", &record.amf_field, 4),
    ] {
        if !is_hex(value) {
            report.push(Finding::error(
                FindingCode::Charset,
                subject(name),
                format!("{name} must be hexadecimal"),
            ));
        }
        if value.len() != len {
            report.push(Finding::error(
                FindingCode::Length,
                subject(name),
                format!("{name} has {} characters, expected {len}", value.len()),
            ));
        }
    }
    if let Some(msisdn) = &record.msisdn {
        if msisdn.is_empty() || !is_digits(msisdn) {
            report.push(Finding::error(
                FindingCode::Charset,
                subject("msisdn"),
                "MSISDN must be a non-empty digit string",
            ));
        }
    }
    report
}

/// The exact subscriber set a stack starts with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub plmn: Plmn,
    pub records: Vec<SubscriberRecord>,
}

impl SeedSet {
    /// One `imsi,ki,opc,amf_field[,msisdn]` line per record, each
    /// newline-terminated.
    pub fn canonical_document(&self) -> String {
        self.records
            .iter()
            .map(|r| r.canonical_line() + "\n")
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn build_seed_set(records: Vec<SubscriberRecord>, plmn: Plmn) -> Result<SeedSet, SubscriberError> {
    let mut seen = HashSet::new();
    for record in &records {
        let report = validate_subscriber(record, &plmn);
        if !report.is_empty() {
            return Err(SubscriberError::InvalidRecord {
                imsi: record.imsi.clone(),
                report,
            });
        }
        if !seen.insert(record.imsi.as_str()) {
            return Err(SubscriberError::DuplicateImsi(record.imsi.clone()));
        }
    }
    Ok(SeedSet { plmn, records })
}
