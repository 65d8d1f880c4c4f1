//! Coarse (CFG shape) and fine (fuzzy opcode hash) signatures.

mod cfg;
mod ctph;
mod similarity;

pub use cfg::{canonicalize_cfg, coarse_hash, t1, CanonicalCfg};
pub use ctph::{
    ctph, CtphDigest, ParseDigestError, RollingHash, DIGEST_ALPHABET, DIGEST_LEN,
    DOUBLE_DIGEST_LEN, MIN_BLOCK_SIZE, ROLLING_WINDOW,
};
pub use similarity::{edit_distance, mss, mss_upper_bound, string_similarity};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassDef, MethodDef};
use crate::hash::Hash128;

/// Per-method signature pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSignature {
    pub coarse: Hash128,
    pub fine: CtphDigest,
    /// Opcodes across reachable blocks.
    pub opcode_len: usize,
}

/// Opcode bytes of the reachable blocks, concatenated in serial order.
pub fn opcode_stream(method: &MethodDef, canonical: &CanonicalCfg) -> Vec<u8> {
    canonical
        .order
        .iter()
        .flat_map(|&b| method.blocks[b].opcodes.iter().map(|op| op.byte()))
        .collect()
}

pub fn fine_digest(method: &MethodDef, canonical: &CanonicalCfg) -> CtphDigest {
    ctph(&opcode_stream(method, canonical))
}

pub fn method_signature(method: &MethodDef) -> MethodSignature {
    let canonical = canonicalize_cfg(method);
    let stream = opcode_stream(method, &canonical);
    MethodSignature {
        coarse: coarse_hash(&canonical),
        fine: ctph(&stream),
        opcode_len: stream.len(),
    }
}

/// One method's features inside a module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodFeature {
    /// `class_id#method_id`
    pub method_ref: String,
    pub coarse: Hash128,
    pub fine: CtphDigest,
    pub opcode_len: u32,
}

/// Signatures of a library candidate or a stored library version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleFeatures {
    pub t1: Hash128,
    /// Every method, sorted by `(coarse, method_ref)`. Read as a multiset of
    /// coarse hashes this is the module's coarse set.
    pub methods: Vec<MethodFeature>,
    /// Classes with at least one method.
    pub class_count: usize,
    pub package_roots: BTreeSet<String>,
}

/// Segments of a class package kept as its root for the package index.
pub const PACKAGE_ROOT_DEPTH: usize = 2;

impl ModuleFeatures {
    pub fn from_classes<'a, I>(classes: I) -> ModuleFeatures
    where
        I: IntoIterator<Item = &'a ClassDef>,
    {
        let classes: Vec<&ClassDef> = classes.into_iter().collect();
        let work: Vec<(&ClassDef, &MethodDef)> = classes
            .iter()
            .flat_map(|c| c.methods.iter().map(move |m| (*c, m)))
            .collect();
        let mut methods: Vec<MethodFeature> = work
            .par_iter()
            .map(|(class, method)| {
                let sig = method_signature(method);
                MethodFeature {
                    method_ref: format!("{}#{}", class.class_id, method.method_id),
                    coarse: sig.coarse,
                    fine: sig.fine,
                    opcode_len: sig.opcode_len as u32,
                }
            })
            .collect();
        methods.sort_by(|a, b| (a.coarse, &a.method_ref).cmp(&(b.coarse, &b.method_ref)));
        let package_roots = classes
            .iter()
            .filter(|c| !c.package.is_empty())
            .map(|c| c.package.truncated(PACKAGE_ROOT_DEPTH).to_string())
            .collect();
        ModuleFeatures {
            t1: t1(methods.iter().map(|m| &m.coarse)),
            class_count: classes.iter().filter(|c| !c.methods.is_empty()).count(),
            methods,
            package_roots,
        }
    }

    pub fn method_count(&self) -> usize {
        self.methods.len()
    }

    /// Coarse hashes in ascending order, with multiplicity.
    pub fn coarse_set(&self) -> impl Iterator<Item = &Hash128> + '_ {
        self.methods.iter().map(|m| &m.coarse)
    }

    /// Coarse hash to the methods carrying it.
    pub fn fine_map(&self) -> BTreeMap<Hash128, Vec<(&str, &CtphDigest)>> {
        let mut map: BTreeMap<Hash128, Vec<(&str, &CtphDigest)>> = BTreeMap::new();
        for m in &self.methods {
            map.entry(m.coarse)
                .or_default()
                .push((m.method_ref.as_str(), &m.fine));
        }
        map
    }

    /// Multiset intersection size of two coarse sets. Both method lists are
    /// sorted by coarse hash, so this is a linear merge.
    pub fn coarse_overlap(&self, other: &ModuleFeatures) -> usize {
        let (mut i, mut j, mut shared) = (0, 0, 0);
        let (a, b) = (&self.methods, &other.methods);
        while i < a.len() && j < b.len() {
            match a[i].coarse.cmp(&b[j].coarse) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        shared
    }
}

/// Thresholds for the two-stage search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    /// Method similarity threshold.
    pub theta: f64,
    /// Library similarity threshold.
    pub delta: f64,
    /// Minimum share of a stored version's coarse features present in a candidate.
    pub coarse_overlap: f64,
    /// Minimum smaller/larger class-count ratio.
    pub class_ratio: f64,
    /// Require at least one exactly matched method before scoring a pair of libraries.
    #[serde(default = "default_true")]
    pub require_exact_pair: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            theta: 0.85,
            delta: 0.95,
            coarse_overlap: 0.70,
            class_ratio: 0.40,
            require_exact_pair: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{name} must lie in [0, 1], got {value}")]
pub struct ConfigError {
    pub name: &'static str,
    pub value: f64,
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("theta", self.theta),
            ("delta", self.delta),
            ("coarse_overlap", self.coarse_overlap),
            ("class_ratio", self.class_ratio),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError { name, value });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{BasicBlock, PackagePath};
    use crate::opcode::Opcode;

    fn class(id: &str, pkg: &str, methods: Vec<MethodDef>) -> ClassDef {
        ClassDef {
            class_id: id.into(),
            package: PackagePath::parse_slashed(pkg).unwrap(),
            methods,
        }
    }

    fn straight(id: &str, ops: &[Opcode]) -> MethodDef {
        MethodDef {
            method_id: id.into(),
            blocks: vec![BasicBlock::new(ops.to_vec())],
            edges: vec![],
            entry_block: 0,
        }
    }

    #[test]
    fn empty_method_gets_the_sentinel_digest() {
        let sig = method_signature(&straight("e", &[]));
        assert_eq!(sig.fine.to_string(), "0:");
        assert_eq!(sig.opcode_len, 0);
    }

    #[test]
    fn module_features_count_methods_and_classes() {
        let ops = [Opcode::Const, Opcode::Return];
        let f = ModuleFeatures::from_classes(&[
            class("a/b/c/X", "a/b/c", vec![straight("m1", &ops), straight("m2", &ops)]),
            class("a/b/Y", "a/b", vec![]),
            class("Z", "", vec![straight("m", &ops)]),
        ]);
        assert_eq!(f.method_count(), 3);
        assert_eq!(f.class_count, 2);
        assert_eq!(f.package_roots.iter().collect::<Vec<_>>(), vec!["a/b"]);
        assert_eq!(f.fine_map().len(), 1);
        assert_eq!(f.coarse_overlap(&f), 3);
    }

    #[test]
    fn config_rejects_out_of_range() {
        assert!(MatcherConfig::default().validate().is_ok());
        let bad = MatcherConfig { theta: 1.5, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().name, "theta");
    }
}
