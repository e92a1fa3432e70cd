//! Versioned JSON report envelopes emitted by the CLI, and the lightweight
//! schema checks the test suite validates them against.

use serde::{Deserialize, Serialize};

use crate::archive::{MalformedRecord, RoundTripReport, SnapshotRef};
use crate::assembler::AssemblyReport;
use crate::probe::{OutcomeMatrix, ProtectionProfile};
use crate::tlsaudit::HttpsEnforcementReport;

pub const SCHEMA_VERSION: u32 = 1;

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// The envelope for audits of a single target. Optional sections are present
/// exactly when their stage ran.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub target: String,
    pub started_at: String,
    pub finished_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<OutcomeMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protection: Option<ProtectionProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub https: Option<HttpsEnforcementReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assembly: Option<AssemblyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roundtrip: Option<RoundTripReport>,
    /// URIs whose fetch failed, with the error, when an assembly aborted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fetch_failures: Vec<String>,
}

impl AuditReport {
    pub fn new(target: &str, started_at: String, finished_at: String) -> AuditReport {
        AuditReport {
            schema_version: SCHEMA_VERSION,
            tool_version: tool_version(),
            target: target.to_string(),
            started_at,
            finished_at,
            matrix: None,
            protection: None,
            https: None,
            assembly: None,
            roundtrip: None,
            fetch_failures: Vec::new(),
        }
    }
}

/// Survey output. Full URLs are redacted by design: ids and counts only,
/// plus the malformed entries that explain any count mismatch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub prefix: String,
    pub unique_id_count: usize,
    pub pipeline_line_count: usize,
    pub excluded_count: u64,
    pub malformed_count: usize,
    pub unique_ids: Vec<u64>,
    pub earliest: Option<SnapshotRef>,
    pub malformed: Vec<MalformedRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushEntry {
    pub url: String,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub submitted: usize,
    pub failed: usize,
    pub entries: Vec<PushEntry>,
}

/// Minimal structural schema: a list of `(dotted.path, kind)` requirements
/// checked against serialized output. `?` marks an optional field that is
/// type-checked only when present.
pub type FieldSpec = (&'static str, FieldKind);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Number,
    String,
    Bool,
    Array,
    Object,
    OptionalObject,
    OptionalArray,
}

pub const AUDIT_REPORT_SCHEMA: &[FieldSpec] = &[
    ("schema_version", FieldKind::Number),
    ("tool_version", FieldKind::String),
    ("target", FieldKind::String),
    ("started_at", FieldKind::String),
    ("finished_at", FieldKind::String),
    ("matrix", FieldKind::OptionalArray),
    ("protection", FieldKind::OptionalObject),
    ("https", FieldKind::OptionalObject),
    ("assembly", FieldKind::OptionalObject),
    ("roundtrip", FieldKind::OptionalObject),
];

pub const SURVEY_REPORT_SCHEMA: &[FieldSpec] = &[
    ("schema_version", FieldKind::Number),
    ("tool_version", FieldKind::String),
    ("prefix", FieldKind::String),
    ("unique_id_count", FieldKind::Number),
    ("pipeline_line_count", FieldKind::Number),
    ("excluded_count", FieldKind::Number),
    ("malformed_count", FieldKind::Number),
    ("unique_ids", FieldKind::Array),
    ("malformed", FieldKind::Array),
];

pub const PUSH_REPORT_SCHEMA: &[FieldSpec] = &[
    ("schema_version", FieldKind::Number),
    ("tool_version", FieldKind::String),
    ("submitted", FieldKind::Number),
    ("failed", FieldKind::Number),
    ("entries", FieldKind::Array),
];

/// Validate a JSON document against a field spec list.
pub fn validate_schema(value: &serde_json::Value, schema: &[FieldSpec]) -> Result<(), String> {
    let object = value.as_object().ok_or("document is not a JSON object")?;
    for (path, kind) in schema {
        let field = object.get(*path);
        let ok = match kind {
            FieldKind::Number => field.map(|v| v.is_number()),
            FieldKind::String => field.map(|v| v.is_string()),
            FieldKind::Bool => field.map(|v| v.is_boolean()),
            FieldKind::Array => field.map(|v| v.is_array()),
            FieldKind::Object => field.map(|v| v.is_object()),
            FieldKind::OptionalObject => Some(field.map(|v| v.is_object()).unwrap_or(true)),
            FieldKind::OptionalArray => Some(field.map(|v| v.is_array()).unwrap_or(true)),
        };
        match ok {
            Some(true) => {}
            Some(false) => return Err(format!("field {path:?} has the wrong type")),
            None => return Err(format!("required field {path:?} missing")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_report_sections_appear_iff_populated() {
        let report = AuditReport::new("https://t.example/x", "now".into(), "later".into());
        let value = serde_json::to_value(&report).unwrap();
        validate_schema(&value, AUDIT_REPORT_SCHEMA).unwrap();
        assert!(value.get("protection").is_none());
        assert!(value.get("assembly").is_none());

        let mut with_section = AuditReport::new("https://t.example/x", "a".into(), "b".into());
        with_section.protection = Some(crate::probe::classify(
            &crate::probe::OutcomeMatrix::from_entries(vec![(
                crate::probe::NO_COOKIE.to_string(),
                crate::probe::ProbeOutcome::Timeout { elapsed_ms: 1 },
            )]),
        )
        .unwrap());
        let value = serde_json::to_value(&with_section).unwrap();
        validate_schema(&value, AUDIT_REPORT_SCHEMA).unwrap();
        assert!(value.get("protection").is_some());
    }

    #[test]
    fn schema_validation_rejects_missing_and_mistyped_fields() {
        let mut value = serde_json::json!({
            "schema_version": 1,
            "tool_version": "0.1.0",
            "submitted": 2,
            "failed": 0,
            "entries": []
        });
        validate_schema(&value, PUSH_REPORT_SCHEMA).unwrap();

        value["submitted"] = serde_json::json!("two");
        assert!(validate_schema(&value, PUSH_REPORT_SCHEMA).is_err());

        value.as_object_mut().unwrap().remove("submitted");
        assert!(validate_schema(&value, PUSH_REPORT_SCHEMA).is_err());
    }
}
