//! Scan reports: per-target fingerprint and findings with summary counts.
//!
//! JSON output is stable: object keys are sorted, findings are ordered by
//! check id, timestamps are RFC 3339 in UTC with whole seconds. The text
//! format is for people and may change between versions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::audit::{AuditFinding, CheckId, Severity, Status};
use crate::fingerprint::FingerprintDecision;

pub const REPORT_SCHEMA: &str = include_str!("../data/report.schema.json");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected json or text)")]
    UnknownFormat(String),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

mod rfc3339 {
    use super::*;

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Counts over a list of findings. Every severity, status and check id is
/// present, with zero where nothing was found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub by_severity: BTreeMap<Severity, usize>,
    pub by_status: BTreeMap<Status, usize>,
    pub vulnerable_by_check: BTreeMap<CheckId, usize>,
}

pub fn summarize<'a>(findings: impl IntoIterator<Item = &'a AuditFinding>) -> Summary {
    let mut s = Summary {
        total: 0,
        by_severity: [Severity::Info, Severity::Low, Severity::Medium, Severity::High, Severity::Critical]
            .into_iter()
            .map(|k| (k, 0))
            .collect(),
        by_status: [Status::Vulnerable, Status::NotVulnerable, Status::NotApplicable, Status::Inconclusive]
            .into_iter()
            .map(|k| (k, 0))
            .collect(),
        vulnerable_by_check: CheckId::ALL.into_iter().map(|k| (k, 0)).collect(),
    };
    for f in findings {
        s.total += 1;
        *s.by_severity.entry(f.severity).or_default() += 1;
        *s.by_status.entry(f.status).or_default() += 1;
        if f.status == Status::Vulnerable {
            *s.vulnerable_by_check.entry(f.check_id).or_default() += 1;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetReport {
    pub base_url: String,
    pub fingerprint: FingerprintDecision,
    pub findings: Vec<AuditFinding>,
    pub summary: Summary,
}

impl TargetReport {
    pub fn new(base_url: impl Into<String>, fingerprint: FingerprintDecision, mut findings: Vec<AuditFinding>) -> Self {
        findings.sort_by_key(|f| (f.check_id, f.severity));
        let summary = summarize(&findings);
        Self {
            base_url: base_url.into(),
            fingerprint,
            findings,
            summary,
        }
    }

    pub fn finding(&self, check: CheckId) -> Option<&AuditFinding> {
        self.findings.iter().find(|f| f.check_id == check)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    #[serde(with = "rfc3339")]
    pub scan_started: DateTime<Utc>,
    #[serde(with = "rfc3339")]
    pub scan_finished: DateTime<Utc>,
    pub targets: Vec<TargetReport>,
    /// Counts across every target.
    pub rollup: Summary,
}

impl Report {
    pub fn new(scan_started: DateTime<Utc>, scan_finished: DateTime<Utc>, targets: Vec<TargetReport>) -> Self {
        let rollup = summarize(targets.iter().flat_map(|t| &t.findings));
        Self {
            tool_version: TOOL_VERSION.to_string(),
            scan_started: trunc(scan_started),
            scan_finished: trunc(scan_finished),
            targets,
            rollup,
        }
    }

    /// Checks ordering and that every summary matches its findings.
    pub fn validate(&self) -> Result<(), String> {
        for t in &self.targets {
            let keys: Vec<_> = t.findings.iter().map(|f| (f.check_id, f.severity)).collect();
            if !keys.windows(2).all(|w| w[0] <= w[1]) {
                return Err(format!("{}: findings out of order", t.base_url));
            }
            if t.summary != summarize(&t.findings) {
                return Err(format!("{}: summary does not match findings", t.base_url));
            }
            if let Some(f) = t.findings.iter().find(|f| f.status == Status::Vulnerable && f.evidence.is_empty()) {
                return Err(format!("{}: {:?} vulnerable without evidence", t.base_url, f.check_id));
            }
        }
        if self.rollup != summarize(self.targets.iter().flat_map(|t| &t.findings)) {
            return Err("rollup does not match findings".into());
        }
        Ok(())
    }

    pub fn has_vulnerable(&self) -> bool {
        self.rollup.by_status.get(&Status::Vulnerable).copied().unwrap_or(0) > 0
    }
}

fn trunc(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp(t.timestamp(), 0).unwrap_or(t)
}

pub fn render_report(report: &Report, format: Format) -> Result<Vec<u8>, ReportError> {
    match format {
        Format::Json => {
            // Value objects are BTreeMaps, so keys come out sorted
            let value = serde_json::to_value(report)?;
            let mut out = serde_json::to_vec_pretty(&value)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Text => Ok(render_text(report).into_bytes()),
    }
}

pub fn parse_report(raw: &[u8]) -> Result<Report, ReportError> {
    Ok(serde_json::from_slice(raw)?)
}

fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "router-audit {}", report.tool_version);
    let _ = writeln!(
        out,
        "scan {} .. {}",
        report.scan_started.to_rfc3339_opts(SecondsFormat::Secs, true),
        report.scan_finished.to_rfc3339_opts(SecondsFormat::Secs, true)
    );
    for t in &report.targets {
        let id = t.fingerprint.matched_id.as_deref().unwrap_or("unidentified");
        let _ = writeln!(out, "\n{}  {} ({} probes)", t.base_url, id, t.fingerprint.probes_used);
        for f in &t.findings {
            let _ = writeln!(
                out,
                "  {:<8} {:<19} {:<13} {} [{}]",
                format!("{:?}", f.severity),
                format!("{:?}", f.check_id),
                format!("{:?}", f.status),
                f.description,
                f.reference
            );
        }
    }
    let vulnerable = report.rollup.by_status.get(&Status::Vulnerable).copied().unwrap_or(0);
    let _ = writeln!(
        out,
        "\n{} targets, {} findings, {} vulnerable",
        report.targets.len(),
        report.rollup.total,
        vulnerable
    );
    out
}
