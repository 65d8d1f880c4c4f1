use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::BundleError;
use crate::opcode::Opcode;

/// A package path as a list of segments (`com/squareup/okhttp`).
///
/// Segments are non-empty and contain no whitespace, `/`, `.` or `=`.
/// The empty path denotes the default (root) package.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct PackagePath(Vec<String>);

impl PackagePath {
    pub fn new<I, S>(segments: I) -> Result<PackagePath, String>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        for seg in &segments {
            validate_segment(seg)?;
        }
        Ok(PackagePath(segments))
    }

    /// Parses `a/b/c`; the empty string is the root package.
    pub fn parse_slashed(s: &str) -> Result<PackagePath, String> {
        if s.is_empty() {
            return Ok(PackagePath::default());
        }
        PackagePath::new(s.split('/'))
    }

    /// Parses `a.b.c`.
    pub fn parse_dotted(s: &str) -> Result<PackagePath, String> {
        if s.is_empty() {
            return Ok(PackagePath::default());
        }
        PackagePath::new(s.split('.'))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Segment-wise prefix test: `com/foo` is a prefix of `com/foo/bar` but not of `com/foobar`.
    /// The empty path is a prefix of nothing, so an empty host package never strips code.
    pub fn is_prefix_of(&self, other: &PackagePath) -> bool {
        !self.0.is_empty() && other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    /// The first `n` segments (or the whole path when shorter).
    pub fn truncated(&self, n: usize) -> PackagePath {
        PackagePath(self.0.iter().take(n).cloned().collect())
    }

    pub fn dotted(&self) -> String {
        self.0.join(".")
    }

    pub(crate) fn segments_mut(&mut self) -> &mut Vec<String> {
        &mut self.0
    }
}

impl fmt::Display for PackagePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

fn validate_segment(seg: &str) -> Result<(), String> {
    if seg.is_empty() {
        return Err("empty package segment".to_string());
    }
    if let Some(c) = seg
        .chars()
        .find(|c| c.is_whitespace() || matches!(c, '/' | '.' | '=' | ':'))
    {
        return Err(format!("invalid character {c:?} in package segment `{seg}`"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    App,
    Library,
}

impl BundleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BundleKind::App => "app",
            BundleKind::Library => "library",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Packaging {
    Skinny,
    Fat,
}

impl Packaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Packaging::Skinny => "skinny",
            Packaging::Fat => "fat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredDep {
    pub group_id: String,
    pub artifact_id: String,
    pub version: String,
    pub root_package: PackagePath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMeta {
    pub app_package: PackagePath,
    pub application_namespace: PackagePath,
    pub launcher_activity_package: PackagePath,
}

impl AppMeta {
    pub fn host_prefixes(&self) -> [&PackagePath; 3] {
        [
            &self.app_package,
            &self.application_namespace,
            &self.launcher_activity_package,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryMeta {
    pub group_id: String,
    pub artifact_id: String,
    pub version: String,
    pub packaging: Packaging,
    pub declared_deps: Vec<DeclaredDep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BundleMeta {
    App(AppMeta),
    Library(LibraryMeta),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub opcodes: Vec<Opcode>,
}

impl BasicBlock {
    pub fn new(opcodes: Vec<Opcode>) -> BasicBlock {
        BasicBlock { opcodes }
    }

    pub fn len(&self) -> usize {
        self.opcodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opcodes.is_empty()
    }
}

/// A method body as a control flow graph of basic blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodDef {
    pub method_id: String,
    pub blocks: Vec<BasicBlock>,
    /// CFG edges as `(from, to)` block indices.
    pub edges: Vec<(usize, usize)>,
    pub entry_block: usize,
}

impl MethodDef {
    pub fn opcode_count(&self) -> usize {
        self.blocks.iter().map(BasicBlock::len).sum()
    }

    /// Deduplicated successor lists per block, in ascending index order.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.blocks.len()];
        for &(from, to) in &self.edges {
            if from < succ.len() && to < self.blocks.len() {
                succ[from].push(to);
            }
        }
        for list in &mut succ {
            list.sort_unstable();
            list.dedup();
        }
        succ
    }

    /// Blocks reachable from the entry block, flagged by index.
    pub fn reachable(&self) -> Vec<bool> {
        let succ = self.successors();
        let mut seen = vec![false; self.blocks.len()];
        if self.entry_block >= self.blocks.len() {
            return seen;
        }
        let mut stack = vec![self.entry_block];
        seen[self.entry_block] = true;
        while let Some(b) = stack.pop() {
            for &s in &succ[b] {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    }

    fn validate(&self, path: &str) -> Result<(), BundleError> {
        let path = format!("{path}/method[{}]", self.method_id);
        validate_token(&self.method_id, &path)?;
        if self.blocks.is_empty() {
            return Err(BundleError::semantic(path, "method has no blocks"));
        }
        if self.entry_block >= self.blocks.len() {
            return Err(BundleError::semantic(
                path,
                format!(
                    "entry block {} out of range (method has {} blocks)",
                    self.entry_block,
                    self.blocks.len()
                ),
            ));
        }
        for &(from, to) in &self.edges {
            if from >= self.blocks.len() || to >= self.blocks.len() {
                return Err(BundleError::semantic(
                    path,
                    format!("edge {from}->{to} references a missing block"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub class_id: String,
    pub package: PackagePath,
    pub methods: Vec<MethodDef>,
}

impl ClassDef {
    fn validate(&self) -> Result<(), BundleError> {
        let path = format!("class[{}]", self.class_id);
        validate_token(&self.class_id, &path)?;
        let mut seen = HashSet::new();
        for m in &self.methods {
            if !seen.insert(m.method_id.as_str()) {
                return Err(BundleError::semantic(
                    format!("{path}/method[{}]", m.method_id),
                    "duplicate method id",
                ));
            }
            m.validate(&path)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Inheritance,
    MethodCall,
    FieldReference,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Inheritance => "inheritance",
            EdgeKind::MethodCall => "method_call",
            EdgeKind::FieldReference => "field_reference",
        }
    }

    pub fn parse(s: &str) -> Option<EdgeKind> {
        match s {
            "inheritance" => Some(EdgeKind::Inheritance),
            "method_call" => Some(EdgeKind::MethodCall),
            "field_reference" => Some(EdgeKind::FieldReference),
            _ => None,
        }
    }
}

/// A class dependency edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepEdge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

/// A parsed program: either an app or one library version.
///
/// Bundles are immutable once validated; construct them with
/// [`ProgramBundle::new`] or the parser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramBundle {
    pub meta: BundleMeta,
    pub classes: Vec<ClassDef>,
    pub dependency_edges: Vec<DepEdge>,
}

impl ProgramBundle {
    pub fn new(
        meta: BundleMeta,
        classes: Vec<ClassDef>,
        dependency_edges: Vec<DepEdge>,
    ) -> Result<ProgramBundle, BundleError> {
        let bundle = ProgramBundle {
            meta,
            classes,
            dependency_edges,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn kind(&self) -> BundleKind {
        match self.meta {
            BundleMeta::App(_) => BundleKind::App,
            BundleMeta::Library(_) => BundleKind::Library,
        }
    }

    pub fn app_meta(&self) -> Option<&AppMeta> {
        match &self.meta {
            BundleMeta::App(m) => Some(m),
            BundleMeta::Library(_) => None,
        }
    }

    pub fn library_meta(&self) -> Option<&LibraryMeta> {
        match &self.meta {
            BundleMeta::Library(m) => Some(m),
            BundleMeta::App(_) => None,
        }
    }

    pub fn method_count(&self) -> usize {
        self.classes.iter().map(|c| c.methods.len()).sum()
    }

    pub fn class(&self, class_id: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    /// Checks every structural invariant; errors carry an entity path.
    pub fn validate(&self) -> Result<(), BundleError> {
        match &self.meta {
            BundleMeta::Library(lib) => {
                for (field, value) in [
                    ("group_id", &lib.group_id),
                    ("artifact_id", &lib.artifact_id),
                    ("version", &lib.version),
                ] {
                    if value.trim().is_empty() {
                        return Err(BundleError::semantic(
                            format!("meta/{field}"),
                            format!("library metadata field `{field}` is missing or empty"),
                        ));
                    }
                }
                for (i, dep) in lib.declared_deps.iter().enumerate() {
                    if dep.group_id.is_empty() || dep.artifact_id.is_empty() || dep.version.is_empty()
                    {
                        return Err(BundleError::semantic(
                            format!("meta/declared_dep[{i}]"),
                            "declared dependency needs group, artifact and version",
                        ));
                    }
                    if lib.packaging == Packaging::Fat && dep.root_package.is_empty() {
                        return Err(BundleError::semantic(
                            format!("meta/declared_dep[{i}]"),
                            "fat packaging requires a root package for every declared dependency",
                        ));
                    }
                }
            }
            BundleMeta::App(app) => {
                if app.app_package.is_empty() {
                    return Err(BundleError::semantic(
                        "meta/app_package",
                        "app metadata field `app_package` is missing or empty",
                    ));
                }
            }
        }

        let mut ids = HashSet::with_capacity(self.classes.len());
        for class in &self.classes {
            if !ids.insert(class.class_id.as_str()) {
                return Err(BundleError::semantic(
                    format!("class[{}]", class.class_id),
                    "duplicate class id",
                ));
            }
            class.validate()?;
        }
        for (i, edge) in self.dependency_edges.iter().enumerate() {
            for end in [&edge.from, &edge.to] {
                if !ids.contains(end.as_str()) {
                    return Err(BundleError::semantic(
                        format!("dep[{i}]"),
                        format!("dependency edge references undeclared class `{end}`"),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn validate_token(token: &str, path: &str) -> Result<(), BundleError> {
    if token.is_empty() || token.chars().any(char::is_whitespace) {
        return Err(BundleError::semantic(
            path.to_string(),
            "identifiers must be non-empty and contain no whitespace",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_is_segment_exact() {
        let foo = PackagePath::parse_slashed("com/foo").unwrap();
        assert!(foo.is_prefix_of(&PackagePath::parse_slashed("com/foo/bar").unwrap()));
        assert!(foo.is_prefix_of(&foo));
        assert!(!foo.is_prefix_of(&PackagePath::parse_slashed("com/foobar").unwrap()));
        assert!(!foo.is_prefix_of(&PackagePath::parse_slashed("com").unwrap()));
        assert!(!PackagePath::default().is_prefix_of(&foo));
    }

    #[test]
    fn segments_reject_bad_characters() {
        assert!(PackagePath::parse_slashed("com//foo").is_err());
        assert!(PackagePath::parse_slashed("com/f oo").is_err());
        assert_eq!(
            PackagePath::parse_dotted("com.foo.bar").unwrap(),
            PackagePath::parse_slashed("com/foo/bar").unwrap()
        );
    }

    #[test]
    fn reachability_ignores_disconnected_blocks() {
        let m = MethodDef {
            method_id: "m".into(),
            blocks: vec![BasicBlock::default(); 4],
            edges: vec![(0, 1), (2, 3)],
            entry_block: 0,
        };
        assert_eq!(m.reachable(), vec![true, true, false, false]);
    }
}
