//! The JSON scan report.

use serde::{Deserialize, Serialize};

use crate::features::MatcherConfig;
use crate::matching::{CandidateResult, MatchReport, StageTimings};
use crate::vulndb::Finding;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub report_version: u32,
    pub app_id: String,
    pub config: MatcherConfig,
    pub candidates: Vec<CandidateResult>,
    /// Present only when a vulnerability database was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub findings: Option<Vec<Finding>>,
    /// Wall-clock data; the only part of a report that varies between runs.
    pub timings: StageTimings,
}

impl ScanReport {
    pub fn new(report: MatchReport, config: MatcherConfig, findings: Option<Vec<Finding>>) -> ScanReport {
        ScanReport {
            report_version: REPORT_VERSION,
            app_id: report.app_id,
            config,
            candidates: report.candidates,
            findings,
            timings: report.timings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report with timings zeroed, for byte-level comparisons.
    pub fn deterministic_json(&self) -> String {
        ScanReport {
            timings: StageTimings::default(),
            ..self.clone()
        }
        .to_json()
    }
}
