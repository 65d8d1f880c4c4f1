//! Library- and version-level precision, recall and F1.
//!
//! Counts are micro-averaged over apps with set semantics per app. At the
//! library level a report counts as correct when any reported version of the
//! right `(group, artifact)` is present. At the version level every reported
//! version that is not the embedded one is a false positive, so two tied
//! wrong versions of a library make two false positives and one false
//! negative.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpusgen::ManifestEntry;
use crate::store::LibraryKey;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// A ratio with an empty denominator is 1: no claim made, none wrong.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Metrics {
        let ratio = |n: usize, d: usize| if d == 0 { 1.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub apps: usize,
    pub library: Metrics,
    pub version: Metrics,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("the corpus has no apps")]
    EmptyCorpus,
}

/// One app's ground truth and reported versions.
#[derive(Debug, Clone, Default)]
pub struct AppOutcome {
    pub truth: BTreeSet<LibraryKey>,
    pub reported: BTreeSet<LibraryKey>,
}

impl AppOutcome {
    pub fn new<'a>(truth: impl IntoIterator<Item = &'a ManifestEntry>, reported: BTreeSet<LibraryKey>) -> AppOutcome {
        AppOutcome {
            truth: truth
                .into_iter()
                .map(|e| LibraryKey::new(&e.group, &e.artifact, &e.version))
                .collect(),
            reported,
        }
    }
}

fn counts<T: Ord>(truth: &BTreeSet<T>, reported: &BTreeSet<T>) -> (usize, usize, usize) {
    let tp = truth.intersection(reported).count();
    (tp, reported.len() - tp, truth.len() - tp)
}

pub fn evaluate(outcomes: &[AppOutcome]) -> Result<EvalResult, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let (mut lib, mut ver) = ((0, 0, 0), (0, 0, 0));
    for o in outcomes {
        let libs = |s: &BTreeSet<LibraryKey>| -> BTreeSet<(String, String)> {
            s.iter().map(|k| (k.group.clone(), k.artifact.clone())).collect()
        };
        let l = counts(&libs(&o.truth), &libs(&o.reported));
        let v = counts(&o.truth, &o.reported);
        lib = (lib.0 + l.0, lib.1 + l.1, lib.2 + l.2);
        ver = (ver.0 + v.0, ver.1 + v.1, ver.2 + v.2);
    }
    Ok(EvalResult {
        apps: outcomes.len(),
        library: Metrics::from_counts(lib.0, lib.1, lib.2),
        version: Metrics::from_counts(ver.0, ver.1, ver.2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(v: &str) -> LibraryKey {
        LibraryKey::new("com.squareup.okio", "okio", v)
    }

    #[test]
    fn okio_ties() {
        let o = AppOutcome {
            truth: [key("2.4.3")].into(),
            reported: [key("2.0.0"), key("2.3.0")].into(),
        };
        let r = evaluate(&[o]).unwrap();
        assert_eq!((r.library.tp, r.library.fp, r.library.fn_), (1, 0, 0));
        assert_eq!((r.version.tp, r.version.fp, r.version.fn_), (0, 2, 1));
    }

    #[test]
    fn exact_reports_score_one() {
        let o = AppOutcome {
            truth: [key("1"), LibraryKey::new("g", "a", "2")].into(),
            reported: [key("1"), LibraryKey::new("g", "a", "2")].into(),
        };
        let r = evaluate(&[o]).unwrap();
        assert_eq!((r.version.precision, r.version.recall, r.version.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.library.f1, 1.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(evaluate(&[]), Err(EvalError::EmptyCorpus));
    }
}
