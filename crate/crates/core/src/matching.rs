//! Two-stage library version identification.
//!
//! The coarse stage looks up a candidate's `T1` and otherwise measures how much
//! of each stored version's coarse set the candidate contains. Surviving
//! versions go to the version stage, which pairs methods (exact coarse matches
//! first, then fuzzy digests at `MSS >= theta`) and scores each version by the
//! share of its methods that found a partner.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::ProgramBundle;
use crate::decouple::{build_cdg, split_candidates, strip_primary, CandidateOrigin};
use crate::features::{mss, mss_upper_bound, CtphDigest, MatcherConfig, MethodFeature, ModuleFeatures};
use crate::store::{LibraryKey, LibraryRecord, SignatureDb};

/// Scores of one candidate against one stored version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDetail {
    pub candidate_id: usize,
    pub db_key: LibraryKey,
    pub tss: f64,
    /// Pairs with identical coarse hashes.
    pub matched_exact: usize,
    /// Pairs joined by fuzzy digest similarity.
    pub matched_fuzzy: usize,
    pub db_method_count: usize,
    pub matched_total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    T1Exact,
    CoarseFull,
    VersionMatched,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate_id: usize,
    pub origin: CandidateOrigin,
    pub namespace_hint: Option<String>,
    pub class_count: usize,
    pub method_count: usize,
    pub stage: StageOutcome,
    /// More than one winner shares the top score.
    pub ambiguous: bool,
    pub winners: Vec<MatchDetail>,
}

/// Wall-clock time spent per stage, kept apart from results so reports can be
/// compared byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decouple_ms: f64,
    pub features_ms: f64,
    pub coarse_ms: f64,
    pub version_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub app_id: String,
    pub candidates: Vec<CandidateResult>,
    pub timings: StageTimings,
}

impl MatchReport {
    /// Winning keys across all candidates.
    pub fn winner_keys(&self) -> BTreeSet<LibraryKey> {
        self.candidates
            .iter()
            .flat_map(|c| c.winners.iter().map(|w| w.db_key.clone()))
            .collect()
    }
}

/// Keep iff `min/max >= class_ratio`.
pub fn filter_class_count(candidate: usize, record: usize, class_ratio: f64) -> bool {
    let (lo, hi) = (candidate.min(record), candidate.max(record));
    if hi == 0 {
        return true;
    }
    lo as f64 / hi as f64 >= class_ratio
}

/// Share of the record's coarse multiset present in the candidate.
pub fn coarse_containment(candidate: &ModuleFeatures, record: &ModuleFeatures) -> f64 {
    if record.method_count() == 0 {
        return 0.0;
    }
    candidate.coarse_overlap(record) as f64 / record.method_count() as f64
}

/// A root looks obfuscated when a segment is one character long or a hex
/// string of at least 16 digits.
pub fn is_obfuscated_pkg(root: &str) -> bool {
    root.split('/').any(|seg| {
        seg.chars().count() == 1 || (seg.len() >= 16 && seg.chars().all(|c| c.is_ascii_hexdigit()))
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoarseOutcome {
    T1Hit(Vec<LibraryKey>),
    FullHit(Vec<LibraryKey>),
    Potential(Vec<LibraryKey>),
    None,
}

/// Coarse filtering of one candidate. With `narrow` set, records sharing a
/// package root with the candidate are examined first and the remainder only
/// when those produce no full hit.
pub fn coarse_stage(candidate: &ModuleFeatures, db: &SignatureDb, config: &MatcherConfig, narrow: bool) -> CoarseOutcome {
    let t1_hits: Vec<LibraryKey> = db.query_t1(&candidate.t1).into_iter().cloned().collect();
    if !t1_hits.is_empty() {
        return CoarseOutcome::T1Hit(t1_hits);
    }

    let mut tiers: Vec<Vec<&LibraryRecord>> = Vec::new();
    if narrow {
        let near: BTreeSet<&LibraryKey> = candidate
            .package_roots
            .iter()
            .flat_map(|root| db.query_pkg(root))
            .collect();
        let (first, rest): (Vec<&LibraryRecord>, Vec<&LibraryRecord>) =
            db.records().partition(|r| near.contains(&r.key));
        tiers.push(first);
        tiers.push(rest);
    } else {
        tiers.push(db.records().collect());
    }

    let mut potential = Vec::new();
    for tier in tiers {
        let scored: Vec<(&LibraryKey, f64)> = tier
            .par_iter()
            .filter(|r| filter_class_count(candidate.class_count, r.features.class_count, config.class_ratio))
            .map(|r| (&r.key, coarse_containment(candidate, &r.features)))
            .collect();
        let full: Vec<LibraryKey> = scored
            .iter()
            .filter(|(_, c)| *c >= 1.0)
            .map(|(k, _)| (*k).clone())
            .collect();
        if !full.is_empty() {
            return CoarseOutcome::FullHit(sorted(full));
        }
        potential.extend(
            scored
                .iter()
                .filter(|(_, c)| *c >= config.coarse_overlap)
                .map(|(k, _)| (*k).clone()),
        );
    }
    if potential.is_empty() {
        CoarseOutcome::None
    } else {
        CoarseOutcome::Potential(sorted(potential))
    }
}

fn sorted(mut keys: Vec<LibraryKey>) -> Vec<LibraryKey> {
    keys.sort();
    keys.dedup();
    keys
}

/// Pairs a candidate's methods with a record's and scores the record.
/// Returns `None` when the record has no methods, or when no exact pair
/// exists and `config.require_exact_pair` is set.
pub fn score_record(candidate_id: usize, candidate: &ModuleFeatures, record: &LibraryRecord, config: &MatcherConfig) -> Option<MatchDetail> {
    let db = &record.features;
    if db.method_count() == 0 {
        return None;
    }
    let mut cand_groups = group_by_coarse(&candidate.methods);
    let mut db_groups = group_by_coarse(&db.methods);

    let mut matched_exact = 0;
    let mut cand_rest: Vec<&MethodFeature> = Vec::new();
    let mut db_rest: Vec<&MethodFeature> = Vec::new();
    for (coarse, db_methods) in db_groups.iter_mut() {
        match cand_groups.get_mut(coarse) {
            Some(cand_methods) => {
                let (paired, c_left, d_left) = pair_exact(cand_methods, db_methods);
                matched_exact += paired;
                cand_rest.extend(c_left);
                db_rest.extend(d_left);
                cand_groups.remove(coarse);
            }
            None => db_rest.extend(db_methods.iter().copied()),
        }
    }
    cand_rest.extend(cand_groups.into_values().flatten());

    if matched_exact == 0 && config.require_exact_pair {
        return None;
    }
    let matched_fuzzy = pair_fuzzy(&cand_rest, &db_rest, config.theta);
    let matched_total = matched_exact + matched_fuzzy;
    Some(MatchDetail {
        candidate_id,
        db_key: record.key.clone(),
        tss: matched_total as f64 / db.method_count() as f64,
        matched_exact,
        matched_fuzzy,
        db_method_count: db.method_count(),
        matched_total,
    })
}

fn group_by_coarse(methods: &[MethodFeature]) -> BTreeMap<crate::hash::Hash128, Vec<&MethodFeature>> {
    let mut groups: BTreeMap<_, Vec<&MethodFeature>> = BTreeMap::new();
    for m in methods {
        groups.entry(m.coarse).or_default().push(m);
    }
    groups
}

/// Order by content, then by name. Renaming must not change pairings, so the
/// name only breaks ties between methods with identical digests.
fn content_order(a: &&MethodFeature, b: &&MethodFeature) -> std::cmp::Ordering {
    (a.fine.to_string(), a.opcode_len, &a.method_ref).cmp(&(b.fine.to_string(), b.opcode_len, &b.method_ref))
}

/// Pairs methods sharing one coarse hash: identical fine digests first, then
/// the leftovers in content order. Returns the pair count and the unpaired
/// methods of each side.
fn pair_exact<'a>(
    cand: &mut [&'a MethodFeature],
    db: &mut [&'a MethodFeature],
) -> (usize, Vec<&'a MethodFeature>, Vec<&'a MethodFeature>) {
    cand.sort_by(content_order);
    db.sort_by(content_order);
    let mut cand_used = vec![false; cand.len()];
    let mut db_used = vec![false; db.len()];
    let (mut i, mut j) = (0, 0);
    while i < cand.len() && j < db.len() {
        match cand[i].fine.to_string().cmp(&db[j].fine.to_string()) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                cand_used[i] = true;
                db_used[j] = true;
                i += 1;
                j += 1;
            }
        }
    }
    let c_left: Vec<_> = cand.iter().zip(&cand_used).filter(|(_, u)| !**u).map(|(m, _)| *m).collect();
    let d_left: Vec<_> = db.iter().zip(&db_used).filter(|(_, u)| !**u).map(|(m, _)| *m).collect();
    let extra = c_left.len().min(d_left.len());
    let paired = cand_used.iter().filter(|u| **u).count() + extra;
    (paired, c_left[extra..].to_vec(), d_left[extra..].to_vec())
}

/// Greedy one-to-one pairing by descending MSS; pairs below `theta` are never
/// accepted. Returns the number of pairs.
fn pair_fuzzy(cand: &[&MethodFeature], db: &[&MethodFeature], theta: f64) -> usize {
    if cand.is_empty() || db.is_empty() {
        return 0;
    }
    let mut cand: Vec<&MethodFeature> = cand.to_vec();
    let mut db: Vec<&MethodFeature> = db.to_vec();
    cand.sort_by(content_order);
    db.sort_by(content_order);
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for (i, c) in cand.iter().enumerate() {
        for (j, d) in db.iter().enumerate() {
            if !compatible(&c.fine, &d.fine) || mss_upper_bound(&c.fine, &d.fine) < theta {
                continue;
            }
            let s = mss(&c.fine, &d.fine);
            if s >= theta {
                edges.push((s, i, j));
            }
        }
    }
    // Indices follow content order, so ties resolve identically under renaming.
    edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let mut cand_used = vec![false; cand.len()];
    let mut db_used = vec![false; db.len()];
    let mut pairs = 0;
    for (_, i, j) in edges {
        if !cand_used[i] && !db_used[j] {
            cand_used[i] = true;
            db_used[j] = true;
            pairs += 1;
        }
    }
    pairs
}

fn compatible(a: &CtphDigest, b: &CtphDigest) -> bool {
    a.block_size == b.block_size || a.block_size == 2 * b.block_size || 2 * a.block_size == b.block_size
}

/// Scores every potential key and keeps those with `tss >= delta`, in key order.
pub fn version_stage(
    candidate_id: usize,
    candidate: &ModuleFeatures,
    keys: &[LibraryKey],
    db: &SignatureDb,
    config: &MatcherConfig,
) -> Vec<MatchDetail> {
    let mut details: Vec<MatchDetail> = keys
        .par_iter()
        .filter_map(|k| db.get(k))
        .filter_map(|r| score_record(candidate_id, candidate, r, config))
        .filter(|d| d.tss >= config.delta)
        .collect();
    details.sort_by(|a, b| a.db_key.cmp(&b.db_key));
    details
}

/// All details sharing the highest TSS.
fn argmax(details: Vec<MatchDetail>) -> Vec<MatchDetail> {
    let Some(best) = details.iter().map(|d| d.tss).reduce(f64::max) else {
        return details;
    };
    details.into_iter().filter(|d| d.tss == best).collect()
}

/// Runs the whole pipeline on an app bundle.
pub fn identify(app: &ProgramBundle, db: &SignatureDb, config: &MatcherConfig) -> MatchReport {
    identify_with(app, db, config, true)
}

/// [`identify`] with the package-index narrowing switchable. Narrowing only
/// ever applies to candidates whose package roots look unobfuscated.
pub fn identify_with(app: &ProgramBundle, db: &SignatureDb, config: &MatcherConfig, use_pkg_index: bool) -> MatchReport {
    let t0 = Instant::now();
    let classes = strip_primary(app);
    let cdg = build_cdg(&classes, &app.dependency_edges);
    let modules = split_candidates(&cdg);
    let decouple = t0.elapsed();

    let results: Vec<(CandidateResult, [Duration; 3])> = modules
        .par_iter()
        .enumerate()
        .map(|(id, module)| {
            let t = Instant::now();
            let features = ModuleFeatures::from_classes(module.classes.iter().copied());
            let features_time = t.elapsed();

            let t = Instant::now();
            let narrow = use_pkg_index
                && !features.package_roots.is_empty()
                && !features.package_roots.iter().any(|r| is_obfuscated_pkg(r));
            let coarse = if features.method_count() == 0 {
                CoarseOutcome::None
            } else {
                coarse_stage(&features, db, config, narrow)
            };
            let coarse_time = t.elapsed();

            let t = Instant::now();
            let score_all = |keys: &[LibraryKey]| -> Vec<MatchDetail> {
                let mut d: Vec<MatchDetail> = keys
                    .par_iter()
                    .filter_map(|k| db.get(k))
                    .filter_map(|r| score_record(id, &features, r, config))
                    .collect();
                d.sort_by(|a, b| a.db_key.cmp(&b.db_key));
                d
            };
            let (stage, winners) = match &coarse {
                CoarseOutcome::T1Hit(keys) => (StageOutcome::T1Exact, argmax(score_all(keys))),
                CoarseOutcome::FullHit(keys) => (StageOutcome::CoarseFull, argmax(score_all(keys))),
                CoarseOutcome::Potential(keys) => {
                    let w = argmax(version_stage(id, &features, keys, db, config));
                    let stage = if w.is_empty() { StageOutcome::Unmatched } else { StageOutcome::VersionMatched };
                    (stage, w)
                }
                CoarseOutcome::None => (StageOutcome::Unmatched, Vec::new()),
            };
            let version_time = t.elapsed();

            let result = CandidateResult {
                candidate_id: id,
                origin: module.origin,
                namespace_hint: module.namespace_hint.as_ref().map(|p| p.to_string()),
                class_count: features.class_count,
                method_count: features.method_count(),
                stage,
                ambiguous: winners.len() > 1,
                winners,
            };
            (result, [features_time, coarse_time, version_time])
        })
        .collect();

    let ms = |d: Duration| d.as_secs_f64() * 1000.0;
    let mut timings = StageTimings {
        decouple_ms: ms(decouple),
        ..Default::default()
    };
    let mut candidates = Vec::with_capacity(results.len());
    for (result, [f, c, v]) in results {
        timings.features_ms += ms(f);
        timings.coarse_ms += ms(c);
        timings.version_ms += ms(v);
        candidates.push(result);
    }
    MatchReport {
        app_id: app_id(app),
        candidates,
        timings,
    }
}

/// The app package for apps, `group:artifact:version` for libraries.
pub fn app_id(bundle: &ProgramBundle) -> String {
    if let Some(app) = bundle.app_meta() {
        app.app_package.dotted()
    } else if let Some(lib) = bundle.library_meta() {
        format!("{}:{}:{}", lib.group_id, lib.artifact_id, lib.version)
    } else {
        String::new()
    }
}
