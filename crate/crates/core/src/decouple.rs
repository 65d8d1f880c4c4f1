//! Host-module removal and splitting of the remaining classes into library
//! candidates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bundle::{BundleMeta, ClassDef, DepEdge, PackagePath, Packaging, ProgramBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrigin {
    /// One connected component of the class dependency graph.
    CdgComponent,
    /// Isolated classes pooled together.
    Residual,
    /// A library's own classes (all of a skinny bundle, or a fat bundle minus its dependencies).
    HostLibrary,
    /// Classes of a fat library under one declared dependency's root package.
    DeclaredDepSplit,
}

#[derive(Debug, Clone)]
pub struct CandidateModule<'a> {
    pub classes: Vec<&'a ClassDef>,
    pub origin: CandidateOrigin,
    pub namespace_hint: Option<PackagePath>,
}

impl CandidateModule<'_> {
    pub fn smallest_class_id(&self) -> Option<&str> {
        self.classes.iter().map(|c| c.class_id.as_str()).min()
    }
}

/// Classes outside the host namespaces: everything not under the app package,
/// the application namespace or the launcher activity package. Library bundles
/// have no host module and pass through untouched.
pub fn strip_primary(bundle: &ProgramBundle) -> Vec<&ClassDef> {
    match &bundle.meta {
        BundleMeta::App(app) => bundle
            .classes
            .iter()
            .filter(|c| !app.host_prefixes().iter().any(|p| p.is_prefix_of(&c.package)))
            .collect(),
        BundleMeta::Library(_) => bundle.classes.iter().collect(),
    }
}

/// Undirected class dependency graph over a set of classes.
#[derive(Debug, Clone)]
pub struct Cdg<'a> {
    pub classes: Vec<&'a ClassDef>,
    /// Neighbour indices into `classes`, sorted and deduplicated.
    pub neighbours: Vec<Vec<usize>>,
}

impl Cdg<'_> {
    pub fn edge_count(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected components as sorted lists of class indices.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.classes.len();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            comp[start] = id;
            let mut i = 0;
            while i < members.len() {
                for &nb in &self.neighbours[members[i]] {
                    if comp[nb] == usize::MAX {
                        comp[nb] = id;
                        members.push(nb);
                    }
                }
                i += 1;
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

/// Builds the CDG. Edge kinds are ignored; edges touching classes outside
/// `classes` are dropped.
pub fn build_cdg<'a>(classes: &[&'a ClassDef], dependency_edges: &[DepEdge]) -> Cdg<'a> {
    let index: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.class_id.as_str(), i))
        .collect();
    let mut neighbours = vec![Vec::new(); classes.len()];
    for edge in dependency_edges {
        let (Some(&a), Some(&b)) = (index.get(edge.from.as_str()), index.get(edge.to.as_str())) else {
            continue;
        };
        if a != b {
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
    }
    for list in &mut neighbours {
        list.sort_unstable();
        list.dedup();
    }
    Cdg {
        classes: classes.to_vec(),
        neighbours,
    }
}

/// One candidate per connected component, ordered by smallest class id.
/// When more than one class is isolated, the isolated classes are pooled
/// into a single residual candidate.
pub fn split_candidates<'a>(cdg: &Cdg<'a>) -> Vec<CandidateModule<'a>> {
    let mut components = Vec::new();
    let mut singletons = Vec::new();
    for members in cdg.components() {
        if members.len() == 1 && cdg.neighbours[members[0]].is_empty() {
            singletons.push(members[0]);
        } else {
            components.push(members);
        }
    }
    let mut out: Vec<CandidateModule<'a>> = components
        .into_iter()
        .map(|members| candidate(cdg, &members, CandidateOrigin::CdgComponent))
        .collect();
    match singletons.len() {
        0 => {}
        1 => out.push(candidate(cdg, &singletons, CandidateOrigin::CdgComponent)),
        _ => out.push(candidate(cdg, &singletons, CandidateOrigin::Residual)),
    }
    out.sort_by(|a, b| a.smallest_class_id().cmp(&b.smallest_class_id()));
    out
}

fn candidate<'a>(cdg: &Cdg<'a>, members: &[usize], origin: CandidateOrigin) -> CandidateModule<'a> {
    let mut classes: Vec<&'a ClassDef> = members.iter().map(|&i| cdg.classes[i]).collect();
    classes.sort_by(|a, b| a.class_id.cmp(&b.class_id));
    let namespace_hint = common_prefix(classes.iter().map(|c| &c.package));
    CandidateModule {
        classes,
        origin,
        namespace_hint,
    }
}

fn common_prefix<'p, I: Iterator<Item = &'p PackagePath>>(mut paths: I) -> Option<PackagePath> {
    let first = paths.next()?;
    let mut len = first.len();
    for p in paths {
        len = len.min(
            first
                .segments()
                .iter()
                .zip(p.segments())
                .take_while(|(a, b)| a == b)
                .count(),
        );
    }
    (len > 0).then(|| first.truncated(len))
}

/// A declared dependency root that matched no classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitWarning {
    pub dependency: String,
    pub root_package: PackagePath,
}

impl std::fmt::Display for SplitWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "declared dependency {} (root {}) matches no classes",
            self.dependency, self.root_package
        )
    }
}

/// Splits a library bundle by packaging mode. A fat bundle yields one
/// candidate per declared dependency found under its root package plus the
/// host-library remainder (always first); a skinny bundle is one candidate.
pub fn split_skinny_deps(bundle: &ProgramBundle) -> (Vec<CandidateModule<'_>>, Vec<SplitWarning>) {
    let all: Vec<&ClassDef> = bundle.classes.iter().collect();
    fn whole(classes: Vec<&ClassDef>) -> CandidateModule<'_> {
        CandidateModule {
            namespace_hint: common_prefix(classes.iter().map(|c| &c.package)),
            classes,
            origin: CandidateOrigin::HostLibrary,
        }
    }
    let Some(lib) = bundle.library_meta() else {
        return (vec![whole(all)], Vec::new());
    };
    if lib.packaging == Packaging::Skinny {
        return (vec![whole(all)], Vec::new());
    }

    let mut taken = vec![false; all.len()];
    let mut splits = Vec::new();
    let mut warnings = Vec::new();
    for dep in &lib.declared_deps {
        let mut members: Vec<&ClassDef> = Vec::new();
        for (i, c) in all.iter().enumerate() {
            if !taken[i] && dep.root_package.is_prefix_of(&c.package) {
                taken[i] = true;
                members.push(c);
            }
        }
        if members.is_empty() {
            warnings.push(SplitWarning {
                dependency: format!("{}:{}:{}", dep.group_id, dep.artifact_id, dep.version),
                root_package: dep.root_package.clone(),
            });
            continue;
        }
        splits.push(CandidateModule {
            classes: members,
            origin: CandidateOrigin::DeclaredDepSplit,
            namespace_hint: Some(dep.root_package.clone()),
        });
    }
    let host: Vec<&ClassDef> = all
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(c, _)| *c)
        .collect();
    let mut out = vec![whole(host)];
    out.extend(splits);
    (out, warnings)
}
