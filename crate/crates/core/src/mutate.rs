//! Seeded obfuscation transforms over bundles.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{BasicBlock, BundleMeta, EdgeKind, PackagePath, ProgramBundle};
use crate::opcode::Opcode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MutationOp {
    /// Renames every package segment and class id bijectively.
    Rename,
    /// Moves every class into the package `a`.
    Flatten,
    /// Inserts `nop` at `ceil(rate * len)` distinct positions of every block.
    Junk { rate: f64 },
    /// Deletes `floor(rate * M)` of the `M` methods whose class receives no call.
    DeadCode { rate: f64 },
    /// Splits `floor(rate * B)` of the bundle's `B` blocks at their midpoint.
    Cfr { rate: f64 },
}

impl MutationOp {
    fn rate(&self) -> Option<f64> {
        match *self {
            MutationOp::Junk { rate } | MutationOp::DeadCode { rate } | MutationOp::Cfr { rate } => Some(rate),
            MutationOp::Rename | MutationOp::Flatten => None,
        }
    }
}

impl fmt::Display for MutationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationOp::Rename => f.write_str("rename"),
            MutationOp::Flatten => f.write_str("flatten"),
            MutationOp::Junk { rate } => write!(f, "junk={rate}"),
            MutationOp::DeadCode { rate } => write!(f, "dead_code={rate}"),
            MutationOp::Cfr { rate } => write!(f, "cfr={rate}"),
        }
    }
}

/// Parses the CLI form: `rename`, `flatten`, `junk=0.05`, `dead_code=0.25`, `cfr=0.1`.
impl FromStr for MutationOp {
    type Err = MutateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, rate) = match s.split_once('=') {
            Some((n, r)) => {
                let rate: f64 = r
                    .trim()
                    .parse()
                    .map_err(|_| MutateError::BadOp(format!("`{s}`: rate is not a number")))?;
                (n.trim(), Some(rate))
            }
            None => (s.trim(), None),
        };
        let op = match (name, rate) {
            ("rename", None) => MutationOp::Rename,
            ("flatten", None) => MutationOp::Flatten,
            ("junk", Some(rate)) => MutationOp::Junk { rate },
            ("dead_code", Some(rate)) => MutationOp::DeadCode { rate },
            ("cfr", Some(rate)) => MutationOp::Cfr { rate },
            ("rename" | "flatten", Some(_)) => return Err(MutateError::BadOp(format!("`{name}` takes no rate"))),
            ("junk" | "dead_code" | "cfr", None) => return Err(MutateError::BadOp(format!("`{name}` needs a rate, e.g. {name}=0.05"))),
            _ => return Err(MutateError::BadOp(format!("unknown mutation `{name}`"))),
        };
        if let Some(rate) = op.rate() {
            if !(0.0..=1.0).contains(&rate) {
                return Err(MutateError::RateOutOfRange { op: name.to_string(), rate });
            }
        }
        Ok(op)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationSpec {
    pub seed: u64,
    pub ops: Vec<MutationOp>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MutateError {
    #[error("{0}")]
    BadOp(String),
    #[error("{op} rate must lie in [0, 1], got {rate}")]
    RateOutOfRange { op: String, rate: f64 },
}

impl MutationSpec {
    pub fn validate(&self) -> Result<(), MutateError> {
        for op in &self.ops {
            if let Some(rate) = op.rate() {
                if !(0.0..=1.0).contains(&rate) {
                    let name = op.to_string();
                    let name = name.split('=').next().unwrap_or_default().to_string();
                    return Err(MutateError::RateOutOfRange { op: name, rate });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MutationWarning {
    NothingToDelete,
}

impl fmt::Display for MutationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationWarning::NothingToDelete => {
                f.write_str("dead_code: every class receives a call, nothing deleted")
            }
        }
    }
}

/// Applies the ops in order. The same spec and input always give the same output.
pub fn mutate(bundle: &ProgramBundle, spec: &MutationSpec) -> Result<(ProgramBundle, Vec<MutationWarning>), MutateError> {
    spec.validate()?;
    let mut out = bundle.clone();
    let mut warnings = Vec::new();
    for (i, op) in spec.ops.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        match *op {
            MutationOp::Rename => rename(&mut out, &mut rng),
            MutationOp::Flatten => flatten(&mut out),
            MutationOp::Junk { rate } => junk(&mut out, rate, &mut rng),
            MutationOp::DeadCode { rate } => {
                if let Some(w) = dead_code(&mut out, rate, &mut rng) {
                    warnings.push(w);
                }
            }
            MutationOp::Cfr { rate } => cfr(&mut out, rate, &mut rng),
        }
    }
    debug_assert!(out.validate().is_ok());
    Ok((out, warnings))
}

/// `a`, `b`, …, `z`, `aa`, `ab`, …
pub fn short_name(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

fn shuffled_names(count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut names: Vec<String> = (0..count).map(short_name).collect();
    names.shuffle(rng);
    names
}

fn rename(bundle: &mut ProgramBundle, rng: &mut ChaCha8Rng) {
    let segments = collect_segments(bundle);
    let seg_map: BTreeMap<String, String> = segments.iter().cloned().zip(shuffled_names(segments.len(), rng)).collect();
    let rewrite = |p: &mut PackagePath| {
        for s in p.segments_mut() {
            *s = seg_map[s.as_str()].clone();
        }
    };

    let mut class_ids: Vec<String> = bundle.classes.iter().map(|c| c.class_id.clone()).collect();
    class_ids.sort();
    let class_names = shuffled_names(class_ids.len(), rng);
    let mut id_map: BTreeMap<String, String> = BTreeMap::new();

    for class in &mut bundle.classes {
        rewrite(&mut class.package);
        let idx = class_ids.binary_search(&class.class_id).unwrap();
        let new_id = if class.package.is_empty() {
            format!("C{}", class_names[idx])
        } else {
            format!("{}/C{}", class.package, class_names[idx])
        };
        id_map.insert(class.class_id.clone(), new_id.clone());
        class.class_id = new_id;
    }
    for e in &mut bundle.dependency_edges {
        e.from = id_map[&e.from].clone();
        e.to = id_map[&e.to].clone();
    }
    match &mut bundle.meta {
        BundleMeta::App(app) => {
            rewrite(&mut app.app_package);
            rewrite(&mut app.application_namespace);
            rewrite(&mut app.launcher_activity_package);
        }
        BundleMeta::Library(lib) => {
            for d in &mut lib.declared_deps {
                rewrite(&mut d.root_package);
            }
        }
    }
}

fn collect_segments(bundle: &ProgramBundle) -> Vec<String> {
    let mut segments: BTreeSet<String> = BTreeSet::new();
    for c in &bundle.classes {
        segments.extend(c.package.segments().iter().cloned());
    }
    match &bundle.meta {
        BundleMeta::App(app) => {
            for p in app.host_prefixes() {
                segments.extend(p.segments().iter().cloned());
            }
        }
        BundleMeta::Library(lib) => {
            for d in &lib.declared_deps {
                segments.extend(d.root_package.segments().iter().cloned());
            }
        }
    }
    segments.into_iter().collect()
}

fn flatten(bundle: &mut ProgramBundle) {
    let flat = PackagePath::parse_slashed("a").expect("valid package");
    for class in &mut bundle.classes {
        class.package = flat.clone();
    }
}

fn junk(bundle: &mut ProgramBundle, rate: f64, rng: &mut ChaCha8Rng) {
    for class in &mut bundle.classes {
        for method in &mut class.methods {
            for block in &mut method.blocks {
                let len = block.len();
                let k = ((rate * len as f64).ceil() as usize).min(len);
                if k == 0 {
                    continue;
                }
                let mut at: Vec<usize> = index::sample(rng, len, k).into_vec();
                at.sort_unstable();
                let mut ops = Vec::with_capacity(len + k);
                let mut next = at.iter().peekable();
                for (i, op) in block.opcodes.iter().enumerate() {
                    if next.peek() == Some(&&i) {
                        ops.push(Opcode::Nop);
                        next.next();
                    }
                    ops.push(*op);
                }
                block.opcodes = ops;
            }
        }
    }
}

/// Methods of classes that no other class calls, as `(class, method)` indices.
pub fn deletable_methods(bundle: &ProgramBundle) -> Vec<(usize, usize)> {
    let called: HashSet<&str> = bundle
        .dependency_edges
        .iter()
        .filter(|e| e.kind == EdgeKind::MethodCall && e.from != e.to)
        .map(|e| e.to.as_str())
        .collect();
    bundle
        .classes
        .iter()
        .enumerate()
        .filter(|(_, c)| !called.contains(c.class_id.as_str()))
        .flat_map(|(ci, c)| (0..c.methods.len()).map(move |mi| (ci, mi)))
        .collect()
}

fn dead_code(bundle: &mut ProgramBundle, rate: f64, rng: &mut ChaCha8Rng) -> Option<MutationWarning> {
    let deletable = deletable_methods(bundle);
    if deletable.is_empty() {
        return (rate > 0.0).then_some(MutationWarning::NothingToDelete);
    }
    let k = (rate * deletable.len() as f64).floor() as usize;
    let mut doomed: Vec<(usize, usize)> = index::sample(rng, deletable.len(), k)
        .into_iter()
        .map(|i| deletable[i])
        .collect();
    // Remove from the back so earlier indices stay valid.
    doomed.sort_unstable_by(|a, b| b.cmp(a));
    for (ci, mi) in doomed {
        bundle.classes[ci].methods.remove(mi);
    }
    None
}

fn cfr(bundle: &mut ProgramBundle, rate: f64, rng: &mut ChaCha8Rng) {
    let total_blocks: usize = bundle
        .classes
        .iter()
        .flat_map(|c| &c.methods)
        .map(|m| m.blocks.len())
        .sum();
    let splittable: Vec<(usize, usize, usize)> = bundle
        .classes
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            c.methods.iter().enumerate().flat_map(move |(mi, m)| {
                m.blocks
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.len() >= 2)
                    .map(move |(bi, _)| (ci, mi, bi))
            })
        })
        .collect();
    let k = ((rate * total_blocks as f64).floor() as usize).min(splittable.len());
    let mut chosen: Vec<(usize, usize, usize)> = index::sample(rng, splittable.len(), k)
        .into_iter()
        .map(|i| splittable[i])
        .collect();
    chosen.sort_unstable();
    for (ci, mi, bi) in chosen {
        let method = &mut bundle.classes[ci].methods[mi];
        let block = &mut method.blocks[bi];
        let tail = block.opcodes.split_off(block.len() / 2);
        let new = method.blocks.len();
        method.blocks.push(BasicBlock::new(tail));
        for e in &mut method.edges {
            if e.0 == bi {
                e.0 = new;
            }
        }
        method.edges.push((bi, new));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{parse_bundle, write_bundle};
    use crate::features::method_signature;

    const APP: &str = "@bundle app
@meta app_package=com.example.app
@class com/example/app/Main pkg=com/example/app
@method run entry=0
@block 0:
  const
  invoke_static
  if_eqz
@block 1:
  return_void
@block 2:
  const
  return
@edge 0 1
@edge 0 2
@class com/squareup/okio/Buffer pkg=com/squareup/okio
@method read entry=0
@block 0:
  load_local
  field_get
  add
  return
@class com/squareup/okio/Segment pkg=com/squareup/okio
@method take entry=0
@block 0:
  load_local
  return
@dep com/example/app/Main com/squareup/okio/Buffer method_call
@dep com/squareup/okio/Buffer com/squareup/okio/Segment field_reference
";

    fn spec(ops: &[&str]) -> MutationSpec {
        MutationSpec {
            seed: 7,
            ops: ops.iter().map(|o| o.parse().unwrap()).collect(),
        }
    }

    #[test]
    fn short_names_are_bijective_base26() {
        assert_eq!(short_name(0), "a");
        assert_eq!(short_name(25), "z");
        assert_eq!(short_name(26), "aa");
        assert_eq!(short_name(27), "ab");
        assert_eq!(short_name(26 + 26 * 26), "aaa");
        let names: HashSet<String> = (0..2000).map(short_name).collect();
        assert_eq!(names.len(), 2000);
    }

    #[test]
    fn zero_rates_are_identity() {
        let b = parse_bundle(APP).unwrap();
        let (m, _) = mutate(&b, &spec(&["junk=0", "dead_code=0", "cfr=0"])).unwrap();
        assert_eq!(write_bundle(&m), write_bundle(&b));
    }

    #[test]
    fn rename_keeps_signatures_and_host_stripping() {
        let b = parse_bundle(APP).unwrap();
        let (m, _) = mutate(&b, &spec(&["rename"])).unwrap();
        assert_ne!(write_bundle(&m), write_bundle(&b));
        for (x, y) in b.classes.iter().zip(&m.classes) {
            assert_ne!(x.class_id, y.class_id);
            for (mx, my) in x.methods.iter().zip(&y.methods) {
                assert_eq!(method_signature(mx), method_signature(my));
            }
        }
        let host = m.app_meta().unwrap().app_package.clone();
        assert!(host.is_prefix_of(&m.classes[0].package));
        assert!(!host.is_prefix_of(&m.classes[1].package));
        m.validate().unwrap();
    }

    #[test]
    fn same_seed_same_output() {
        let b = parse_bundle(APP).unwrap();
        let s = spec(&["rename", "junk=0.5", "cfr=0.5", "dead_code=1"]);
        assert_eq!(mutate(&b, &s).unwrap().0, mutate(&b, &s).unwrap().0);
    }

    #[test]
    fn junk_inserts_ceil_rate_len_nops() {
        let b = parse_bundle(APP).unwrap();
        let (m, _) = mutate(&b, &spec(&["junk=0.3"])).unwrap();
        for (x, y) in b.classes.iter().zip(&m.classes) {
            for (bx, by) in x.methods[0].blocks.iter().zip(&y.methods[0].blocks) {
                let k = (0.3 * bx.len() as f64).ceil() as usize;
                assert_eq!(by.len(), bx.len() + k);
                let kept: Vec<_> = by.opcodes.iter().filter(|o| **o != Opcode::Nop).collect();
                assert_eq!(kept, bx.opcodes.iter().collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn dead_code_only_touches_uncalled_classes() {
        let b = parse_bundle(APP).unwrap();
        // Main and Segment receive no method call; Buffer does.
        assert_eq!(deletable_methods(&b).len(), 2);
        let (m, w) = mutate(&b, &spec(&["dead_code=1"])).unwrap();
        assert!(w.is_empty());
        assert_eq!(m.method_count(), 1);
        assert_eq!(m.classes[1].methods.len(), 1);
    }

    #[test]
    fn cfr_splits_keep_the_opcode_stream() {
        let b = parse_bundle(APP).unwrap();
        let (m, _) = mutate(&b, &spec(&["cfr=1"])).unwrap();
        let blocks = |p: &ProgramBundle| p.classes.iter().flat_map(|c| &c.methods).map(|m| m.blocks.len()).sum::<usize>();
        assert!(blocks(&m) > blocks(&b));
        for (x, y) in b.classes.iter().zip(&m.classes) {
            assert_eq!(method_signature(&x.methods[0]).fine, method_signature(&y.methods[0]).fine);
        }
    }

    #[test]
    fn op_parsing() {
        assert_eq!("junk=0.05".parse::<MutationOp>().unwrap(), MutationOp::Junk { rate: 0.05 });
        assert!("junk".parse::<MutationOp>().is_err());
        assert!("junk=1.5".parse::<MutationOp>().is_err());
        assert!("rename=1".parse::<MutationOp>().is_err());
        assert!("shuffle".parse::<MutationOp>().is_err());
        let json = r#"{"seed":3,"ops":[{"op":"rename"},{"op":"junk","rate":0.05}]}"#;
        let s: MutationSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.ops[1], MutationOp::Junk { rate: 0.05 });
    }
}
