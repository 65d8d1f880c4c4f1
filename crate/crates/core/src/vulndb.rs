//! Known vulnerabilities keyed by library coordinates and explicit version
//! lists, and their join with identified versions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matching::MatchReport;
use crate::store::LibraryKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VulnSource {
    Cve,
    SecurityBug,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        })
    }
}

/// CVSS v3 band of a score in `(0, 10]`; `None` outside that range.
pub fn severity(cvss: f64) -> Option<Severity> {
    if !(cvss > 0.0 && cvss <= 10.0) {
        return None;
    }
    Some(if cvss < 4.0 {
        Severity::Low
    } else if cvss < 7.0 {
        Severity::Medium
    } else if cvss < 9.0 {
        Severity::High
    } else {
        Severity::Critical
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnRecord {
    pub vuln_id: String,
    pub source: VulnSource,
    pub group_id: String,
    pub artifact_id: String,
    pub affected_versions: BTreeSet<String>,
    pub cvss: f64,
    pub severity: Severity,
    pub description: String,
}

/// One line of the import format. Severity is derived, never read.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    vuln_id: String,
    source: VulnSource,
    group_id: String,
    artifact_id: String,
    affected_versions: Vec<String>,
    cvss: f64,
    #[serde(default)]
    description: String,
}

#[derive(Debug, thiserror::Error)]
pub enum VulnImportError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: cvss {cvss} is outside (0, 10]")]
    CvssOutOfRange { line: usize, cvss: f64 },
    #[error("line {line}: {vuln_id} was already imported for {existing}, not {found}")]
    ConflictingDuplicate {
        line: usize,
        vuln_id: String,
        existing: String,
        found: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VulnDb {
    records: BTreeMap<String, VulnRecord>,
}

impl VulnDb {
    /// Parses one JSON object per line; blank lines are skipped. A repeated
    /// `vuln_id` with the same coordinates merges its version lists.
    pub fn import(jsonl: &str) -> Result<VulnDb, VulnImportError> {
        let mut db = VulnDb::default();
        for (i, text) in jsonl.lines().enumerate() {
            let line = i + 1;
            if text.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(text).map_err(|e| VulnImportError::Schema {
                line,
                message: e.to_string(),
            })?;
            let schema = |message: &str| VulnImportError::Schema {
                line,
                message: message.to_string(),
            };
            if raw.vuln_id.is_empty() {
                return Err(schema("vuln_id is empty"));
            }
            if raw.group_id.is_empty() || raw.artifact_id.is_empty() {
                return Err(schema("group_id and artifact_id must be non-empty"));
            }
            if raw.affected_versions.is_empty() || raw.affected_versions.iter().any(String::is_empty) {
                return Err(schema("affected_versions must list at least one non-empty version"));
            }
            let severity = severity(raw.cvss).ok_or(VulnImportError::CvssOutOfRange { line, cvss: raw.cvss })?;
            let record = VulnRecord {
                vuln_id: raw.vuln_id,
                source: raw.source,
                group_id: raw.group_id,
                artifact_id: raw.artifact_id,
                affected_versions: raw.affected_versions.into_iter().collect(),
                cvss: raw.cvss,
                severity,
                description: raw.description,
            };
            db.insert(record).map_err(|(existing, found, vuln_id)| VulnImportError::ConflictingDuplicate {
                line,
                vuln_id,
                existing,
                found,
            })?;
        }
        Ok(db)
    }

    fn insert(&mut self, record: VulnRecord) -> Result<(), (String, String, String)> {
        match self.records.get_mut(&record.vuln_id) {
            None => {
                self.records.insert(record.vuln_id.clone(), record);
                Ok(())
            }
            Some(existing) => {
                if (&existing.group_id, &existing.artifact_id) != (&record.group_id, &record.artifact_id) {
                    return Err((
                        format!("{}:{}", existing.group_id, existing.artifact_id),
                        format!("{}:{}", record.group_id, record.artifact_id),
                        record.vuln_id,
                    ));
                }
                existing.affected_versions.extend(record.affected_versions);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &VulnRecord> {
        self.records.values()
    }

    /// Records for these coordinates whose affected list names the version.
    pub fn lookup(&self, key: &LibraryKey) -> Vec<&VulnRecord> {
        self.records
            .values()
            .filter(|r| r.group_id == key.group && r.artifact_id == key.artifact && r.affected_versions.contains(&key.version))
            .collect()
    }

    /// Serializes back to the import format, one record per line in id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            let line = serde_json::json!({
                "vuln_id": r.vuln_id,
                "source": r.source,
                "group_id": r.group_id,
                "artifact_id": r.artifact_id,
                "affected_versions": r.affected_versions,
                "cvss": r.cvss,
                "description": r.description,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub app_id: String,
    pub library: LibraryKey,
    pub vuln_id: String,
    pub severity: Severity,
    pub cvss: f64,
    /// The version came from a tie, so the app may ship a different one.
    pub tied_versions_note: bool,
}

/// Findings for every winner of every candidate, tied winners included.
/// Sorted by library key, then vulnerability id.
pub fn annotate(report: &MatchReport, vulns: &VulnDb) -> Vec<Finding> {
    let mut found: BTreeMap<(LibraryKey, String), Finding> = BTreeMap::new();
    for candidate in &report.candidates {
        for winner in &candidate.winners {
            for v in vulns.lookup(&winner.db_key) {
                found
                    .entry((winner.db_key.clone(), v.vuln_id.clone()))
                    .and_modify(|f| f.tied_versions_note |= candidate.ambiguous)
                    .or_insert_with(|| Finding {
                        app_id: report.app_id.clone(),
                        library: winner.db_key.clone(),
                        vuln_id: v.vuln_id.clone(),
                        severity: v.severity,
                        cvss: v.cvss,
                        tied_versions_note: candidate.ambiguous,
                    });
            }
        }
    }
    found.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"vuln_id":"CVE-2021-0341","source":"cve","group_id":"com.squareup.okhttp3","artifact_id":"okhttp","affected_versions":["3.12.0","3.12.1"],"cvss":7.5,"description":"hostname verification"}"#;

    #[test]
    fn band_boundaries() {
        assert_eq!(severity(0.1), Some(Severity::Low));
        assert_eq!(severity(3.9), Some(Severity::Low));
        assert_eq!(severity(4.0), Some(Severity::Medium));
        assert_eq!(severity(6.9), Some(Severity::Medium));
        assert_eq!(severity(7.0), Some(Severity::High));
        assert_eq!(severity(8.9), Some(Severity::High));
        assert_eq!(severity(9.0), Some(Severity::Critical));
        assert_eq!(severity(9.8), Some(Severity::Critical));
        assert_eq!(severity(10.0), Some(Severity::Critical));
        assert_eq!(severity(0.0), None);
        assert_eq!(severity(10.1), None);
        assert_eq!(severity(f64::NAN), None);
    }

    #[test]
    fn import_and_lookup() {
        let db = VulnDb::import(LINE).unwrap();
        let key = |v: &str| LibraryKey::new("com.squareup.okhttp3", "okhttp", v);
        assert_eq!(db.lookup(&key("3.12.1")).len(), 1);
        assert!(db.lookup(&key("3.12.2")).is_empty());
        assert!(db.lookup(&LibraryKey::new("com.squareup.okhttp3", "okio", "3.12.1")).is_empty());
        assert_eq!(db.lookup(&key("3.12.0"))[0].severity, Severity::High);
    }

    #[test]
    fn zero_cvss_is_rejected_with_its_line() {
        let text = format!("{LINE}\n\n{}", LINE.replace("7.5", "0.0"));
        match VulnDb::import(&text) {
            Err(VulnImportError::CvssOutOfRange { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let err = VulnDb::import(&format!("{LINE}\n{{\"vuln_id\":1}}")).unwrap_err();
        assert!(matches!(err, VulnImportError::Schema { line: 2, .. }), "{err}");
        let err = VulnDb::import(&LINE.replace(r#"["3.12.0","3.12.1"]"#, "[]")).unwrap_err();
        assert!(matches!(err, VulnImportError::Schema { line: 1, .. }));
    }

    #[test]
    fn duplicate_ids_merge_versions() {
        let other = LINE.replace(r#"["3.12.0","3.12.1"]"#, r#"["4.0.0"]"#);
        let db = VulnDb::import(&format!("{LINE}\n{other}")).unwrap();
        assert_eq!(db.len(), 1);
        let versions: Vec<_> = db.records().next().unwrap().affected_versions.iter().cloned().collect();
        assert_eq!(versions, ["3.12.0", "3.12.1", "4.0.0"]);

        let moved = LINE.replace("\"okhttp\"", "\"okio\"");
        assert!(matches!(
            VulnDb::import(&format!("{LINE}\n{moved}")),
            Err(VulnImportError::ConflictingDuplicate { line: 2, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let db = VulnDb::import(LINE).unwrap();
        assert_eq!(VulnDb::import(&db.to_jsonl()).unwrap(), db);
    }
}
