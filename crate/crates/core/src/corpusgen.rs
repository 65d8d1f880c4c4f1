//! Synthetic ground-truth corpus: libraries with version histories and apps
//! that embed sampled versions next to their own host code.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    write_bundle, AppMeta, BasicBlock, BundleMeta, ClassDef, DepEdge, EdgeKind, LibraryMeta, MethodDef, PackagePath,
    Packaging, ProgramBundle,
};
use crate::features::{canonicalize_cfg, coarse_hash, t1};
use crate::opcode::Opcode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_libraries: usize,
    pub versions_per_library: usize,
    /// Share of methods edited between consecutive versions.
    pub inter_version_edit_rate: f64,
    /// Share of methods removed and replaced by new ones between versions
    /// (only when the edit rate is positive).
    pub add_remove_fraction: f64,
    pub methods_per_library: (usize, usize),
    pub opcodes_per_method: (usize, usize),
    pub apps: usize,
    pub libs_per_app: (usize, usize),
    pub host_classes: (usize, usize),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 1,
            n_libraries: 50,
            versions_per_library: 10,
            inter_version_edit_rate: 0.15,
            add_remove_fraction: 0.02,
            methods_per_library: (50, 150),
            opcodes_per_method: (8, 160),
            apps: 100,
            libs_per_app: (3, 8),
            host_classes: (5, 25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub group: String,
    pub artifact: String,
    pub version: String,
}

/// App id to the library versions it embeds.
pub type Manifest = BTreeMap<String, Vec<ManifestEntry>>;

#[derive(Debug, Clone)]
pub struct GeneratedApp {
    pub id: String,
    /// The app bundle without any library classes.
    pub host: ProgramBundle,
    /// Indices into [`Corpus::libraries`].
    pub embedded: Vec<usize>,
    pub bundle: ProgramBundle,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub libraries: Vec<ProgramBundle>,
    pub apps: Vec<GeneratedApp>,
}

impl Corpus {
    pub fn manifest(&self) -> Manifest {
        self.apps
            .iter()
            .map(|app| {
                let truth = app
                    .embedded
                    .iter()
                    .map(|&i| {
                        let lib = self.libraries[i].library_meta().expect("library bundle");
                        ManifestEntry {
                            group: lib.group_id.clone(),
                            artifact: lib.artifact_id.clone(),
                            version: lib.version.clone(),
                        }
                    })
                    .collect();
                (app.id.clone(), truth)
            })
            .collect()
    }

    /// Rebuilds every app from its host part and the manifest's libraries and
    /// compares with the generated bundle.
    pub fn check_manifest(&self) -> Result<(), String> {
        let by_key: BTreeMap<ManifestEntry, &ProgramBundle> = self
            .libraries
            .iter()
            .map(|b| {
                let m = b.library_meta().expect("library bundle");
                (
                    ManifestEntry {
                        group: m.group_id.clone(),
                        artifact: m.artifact_id.clone(),
                        version: m.version.clone(),
                    },
                    b,
                )
            })
            .collect();
        let manifest = self.manifest();
        for app in &self.apps {
            let libs: Vec<&ProgramBundle> = manifest[&app.id]
                .iter()
                .map(|e| by_key.get(e).copied().ok_or_else(|| format!("{}: unknown library {e:?}", app.id)))
                .collect::<Result<_, _>>()?;
            if compose_app(&app.host, &libs) != app.bundle {
                return Err(format!("{}: bundle differs from its manifest", app.id));
            }
        }
        Ok(())
    }

    /// Writes `libs/*.bundle`, `apps/<id>.bundle` and `manifest.json`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        let libs = dir.join("libs");
        let apps = dir.join("apps");
        std::fs::create_dir_all(&libs)?;
        std::fs::create_dir_all(&apps)?;
        for b in &self.libraries {
            let m = b.library_meta().expect("library bundle");
            let name = format!("{}-{}-{}.bundle", m.group_id, m.artifact_id, m.version);
            std::fs::write(libs.join(name), write_bundle(b))?;
        }
        for app in &self.apps {
            std::fs::write(apps.join(format!("{}.bundle", app.id)), write_bundle(&app.bundle))?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest()).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("manifest.json"), manifest)
    }
}

/// Host classes first, then each library's classes and edges in order.
pub fn compose_app(host: &ProgramBundle, libs: &[&ProgramBundle]) -> ProgramBundle {
    let mut out = host.clone();
    for lib in libs {
        out.classes.extend(lib.classes.iter().cloned());
        out.dependency_edges.extend(lib.dependency_edges.iter().cloned());
    }
    out
}

pub fn generate(spec: &CorpusSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut names = NamePool::default();
    let mut libraries = Vec::new();
    let mut families: Vec<Vec<usize>> = Vec::new();
    for i in 0..spec.n_libraries {
        let name = names.fresh(&mut rng);
        // Every tenth library lives under a root shared with others, like
        // the support libraries of a platform.
        let (group, root) = if i % 10 == 9 {
            ("com.android.support".to_string(), format!("android/support/{name}"))
        } else {
            let tld = ["com", "org", "io", "net"][rng.gen_range(0..4)];
            (format!("{tld}.{name}"), format!("{tld}/{name}"))
        };
        let mut family = Vec::new();
        let mut state = LibraryState::new(&root, spec, &mut rng);
        let mut seen = BTreeSet::new();
        for v in 0..spec.versions_per_library {
            if v > 0 && spec.inter_version_edit_rate > 0.0 {
                state.evolve(spec, &mut rng);
                // A removal can cancel the structural edit; keep splitting
                // until this version's coarse set is new.
                while seen.contains(&state.t1()) {
                    let slots = state.method_slots();
                    let (c, m) = slots[rng.gen_range(0..slots.len())];
                    split_block(&mut state.classes[c].methods[m], &mut rng);
                }
            }
            seen.insert(state.t1());
            family.push(libraries.len());
            libraries.push(state.bundle(&group, &name, &format!("1.{v}.0")));
        }
        families.push(family);
    }

    let mut apps = Vec::new();
    for a in 0..spec.apps {
        let id = format!("app{a:04}");
        let name = names.fresh(&mut rng);
        let host = host_bundle(&name, spec, &mut rng);
        let (lo, hi) = spec.libs_per_app;
        let count = rng.gen_range(lo.min(hi)..=hi).min(families.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, families.len(), count).into_vec();
        picked.sort_unstable();
        let embedded: Vec<usize> = picked
            .iter()
            .map(|&f| families[f][rng.gen_range(0..families[f].len())])
            .collect();
        let libs: Vec<&ProgramBundle> = embedded.iter().map(|&i| &libraries[i]).collect();
        let bundle = compose_app(&host, &libs);
        apps.push(GeneratedApp {
            id,
            host,
            embedded,
            bundle,
        });
    }
    Corpus { libraries, apps }
}

#[derive(Default)]
struct NamePool {
    used: BTreeSet<String>,
}

impl NamePool {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syllables = rng.gen_range(2..=3);
            let mut s = String::new();
            for _ in 0..syllables {
                s.push(C[rng.gen_range(0..C.len())] as char);
                s.push(V[rng.gen_range(0..V.len())] as char);
            }
            if self.used.insert(s.clone()) {
                return s;
            }
        }
    }
}

const NOUNS: &[&str] = &[
    "Buffer", "Reader", "Writer", "Codec", "Cache", "Pool", "Client", "Request", "Response", "Parser", "Factory",
    "Builder", "Adapter", "Handler", "Stream", "Source", "Sink", "Channel", "Queue", "Registry",
];
const VERBS: &[&str] = &[
    "read", "write", "open", "close", "flush", "get", "put", "apply", "build", "parse", "encode", "decode", "reset",
    "visit", "emit",
];

/// Non-control opcodes used for block bodies.
fn body_opcodes() -> Vec<Opcode> {
    Opcode::ALL
        .iter()
        .copied()
        .filter(|op| {
            !matches!(
                op,
                Opcode::Nop
                    | Opcode::Goto
                    | Opcode::Switch
                    | Opcode::Return
                    | Opcode::ReturnVoid
                    | Opcode::Throw
                    | Opcode::IfEq
                    | Opcode::IfNe
                    | Opcode::IfLt
                    | Opcode::IfGe
                    | Opcode::IfGt
                    | Opcode::IfLe
                    | Opcode::IfEqz
                    | Opcode::IfNez
            )
        })
        .collect()
}

const BRANCHES: &[Opcode] = &[
    Opcode::IfEq,
    Opcode::IfNe,
    Opcode::IfLt,
    Opcode::IfGe,
    Opcode::IfGt,
    Opcode::IfLe,
    Opcode::IfEqz,
    Opcode::IfNez,
];

/// A random method body: a fallthrough chain with forward branches and
/// occasional loops. Every block is reachable from block 0.
fn random_method(method_id: String, spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> MethodDef {
    let body = body_opcodes();
    let (lo, hi) = spec.opcodes_per_method;
    let total = rng.gen_range(lo.max(2)..=hi.max(lo.max(2)));
    // Block counts skew small: most methods have few blocks.
    let max_blocks = (total / 3).clamp(1, 12);
    let n = (1 + (rng.gen::<f64>().powi(2) * max_blocks as f64) as usize).min(max_blocks);

    let mut edges: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    for i in 0..n.saturating_sub(1) {
        if i + 2 < n && rng.gen_bool(0.45) {
            edges.push((i, rng.gen_range(i + 2..n)));
        }
        if rng.gen_bool(0.08) {
            edges.push((i + 1, rng.gen_range(0..=i)));
        }
    }
    edges.sort_unstable();
    edges.dedup();

    // Split the opcode budget across blocks, at least two per block.
    let mut sizes = vec![2usize; n];
    for _ in 0..total.saturating_sub(2 * n) {
        sizes[rng.gen_range(0..n)] += 1;
    }
    let blocks = (0..n)
        .map(|b| {
            let out = edges.iter().filter(|e| e.0 == b).count();
            let mut ops: Vec<Opcode> = (0..sizes[b] - 1).map(|_| *body.choose(rng).unwrap()).collect();
            ops.push(match out {
                0 => *[Opcode::Return, Opcode::ReturnVoid, Opcode::Throw].choose(rng).unwrap(),
                1 => *[Opcode::Goto, *body.choose(rng).unwrap()].choose(rng).unwrap(),
                2 => *BRANCHES.choose(rng).unwrap(),
                _ => Opcode::Switch,
            });
            BasicBlock::new(ops)
        })
        .collect();
    MethodDef {
        method_id,
        blocks,
        edges,
        entry_block: 0,
    }
}

struct LibraryState {
    classes: Vec<ClassDef>,
    edges: Vec<DepEdge>,
    next_method: usize,
}

impl LibraryState {
    fn new(root: &str, spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> LibraryState {
        let (lo, hi) = spec.methods_per_library;
        let n_methods = rng.gen_range(lo.max(1)..=hi.max(lo.max(1)));
        let n_classes = (n_methods / 4).max(1);
        let subpackages = ["", "internal", "util", "io"];
        let mut classes: Vec<ClassDef> = (0..n_classes)
            .map(|c| {
                let sub = subpackages[rng.gen_range(0..subpackages.len())];
                let pkg = if sub.is_empty() { root.to_string() } else { format!("{root}/{sub}") };
                ClassDef {
                    class_id: format!("{pkg}/{}{c}", NOUNS[rng.gen_range(0..NOUNS.len())]),
                    package: PackagePath::parse_slashed(&pkg).expect("valid package"),
                    methods: Vec::new(),
                }
            })
            .collect();
        let mut next_method = 0;
        for m in 0..n_methods {
            // Each class gets one method before any gets a second.
            let c = if m < n_classes { m } else { rng.gen_range(0..n_classes) };
            let id = format!("{}{next_method}", VERBS[rng.gen_range(0..VERBS.len())]);
            next_method += 1;
            classes[c].methods.push(random_method(id, spec, rng));
        }

        // A spanning tree keeps the library one CDG component. Most tree
        // edges are calls; the rest link API classes that nothing calls.
        let mut edges = Vec::new();
        for c in 1..n_classes {
            let parent = rng.gen_range(0..c);
            let (a, b) = (classes[parent].class_id.clone(), classes[c].class_id.clone());
            if rng.gen_bool(0.8) {
                edges.push(DepEdge { from: a, to: b, kind: EdgeKind::MethodCall });
            } else {
                let kind = if rng.gen_bool(0.5) { EdgeKind::Inheritance } else { EdgeKind::FieldReference };
                edges.push(DepEdge { from: b, to: a, kind });
            }
        }
        for _ in 0..n_classes / 3 {
            let (a, b) = (rng.gen_range(0..n_classes), rng.gen_range(0..n_classes));
            if a != b {
                let kind = [EdgeKind::MethodCall, EdgeKind::FieldReference, EdgeKind::Inheritance][rng.gen_range(0..3)];
                edges.push(DepEdge {
                    from: classes[a].class_id.clone(),
                    to: classes[b].class_id.clone(),
                    kind,
                });
            }
        }
        LibraryState {
            classes,
            edges,
            next_method,
        }
    }

    fn t1(&self) -> crate::hash::Hash128 {
        let coarse: Vec<_> = self
            .classes
            .iter()
            .flat_map(|c| &c.methods)
            .map(|m| coarse_hash(&canonicalize_cfg(m)))
            .collect();
        t1(coarse.iter())
    }

    fn method_slots(&self) -> Vec<(usize, usize)> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(c, class)| (0..class.methods.len()).map(move |m| (c, m)))
            .collect()
    }

    /// One version step: edit `ceil(rate * M)` methods in place, at least one
    /// of them structurally, then swap a few methods for new ones.
    fn evolve(&mut self, spec: &CorpusSpec, rng: &mut ChaCha8Rng) {
        let body = body_opcodes();
        let slots = self.method_slots();
        let k = ((spec.inter_version_edit_rate * slots.len() as f64).ceil() as usize).min(slots.len());
        let chosen: Vec<(usize, usize)> = index::sample(rng, slots.len(), k).into_iter().map(|i| slots[i]).collect();
        let mut structural = false;
        for (i, &(c, m)) in chosen.iter().enumerate() {
            let method = &mut self.classes[c].methods[m];
            let subs = (method.opcode_count() / 20).max(1);
            for _ in 0..subs {
                let b = rng.gen_range(0..method.blocks.len());
                let block = &mut method.blocks[b];
                if block.len() >= 2 {
                    let at = rng.gen_range(0..block.len() - 1);
                    block.opcodes[at] = *body.choose(rng).unwrap();
                }
            }
            let last = i + 1 == chosen.len();
            if rng.gen_bool(0.3) || (last && !structural) {
                structural |= split_block(method, rng);
            }
        }

        let swaps = (spec.add_remove_fraction * slots.len() as f64).floor() as usize;
        for _ in 0..swaps {
            let removable: Vec<(usize, usize)> = self
                .method_slots()
                .into_iter()
                .filter(|&(c, _)| self.classes[c].methods.len() > 1)
                .collect();
            if let Some(&(c, m)) = removable.choose(rng) {
                self.classes[c].methods.remove(m);
            }
            let c = rng.gen_range(0..self.classes.len());
            let id = format!("{}{}", VERBS[rng.gen_range(0..VERBS.len())], self.next_method);
            self.next_method += 1;
            let method = random_method(id, spec, rng);
            self.classes[c].methods.push(method);
        }
    }

    fn bundle(&self, group: &str, artifact: &str, version: &str) -> ProgramBundle {
        ProgramBundle::new(
            BundleMeta::Library(LibraryMeta {
                group_id: group.to_string(),
                artifact_id: artifact.to_string(),
                version: version.to_string(),
                packaging: Packaging::Skinny,
                declared_deps: Vec::new(),
            }),
            self.classes.clone(),
            self.edges.clone(),
        )
        .expect("generated library is valid")
    }
}

/// Splits the largest splittable block of a method in two. Returns false when
/// no block has two opcodes.
fn split_block(method: &mut MethodDef, rng: &mut ChaCha8Rng) -> bool {
    let candidates: Vec<usize> = (0..method.blocks.len()).filter(|&b| method.blocks[b].len() >= 2).collect();
    let Some(&b) = candidates.choose(rng) else {
        return false;
    };
    let len = method.blocks[b].len();
    let at = rng.gen_range(1..len);
    let tail = method.blocks[b].opcodes.split_off(at);
    let new = method.blocks.len();
    method.blocks.push(BasicBlock::new(tail));
    for e in &mut method.edges {
        if e.0 == b {
            e.0 = new;
        }
    }
    method.edges.push((b, new));
    true
}

/// Host code under the app package and a separate launcher package, linked
/// only among itself.
fn host_bundle(name: &str, spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> ProgramBundle {
    let app_pkg = format!("com/{name}/app");
    let launcher = format!("net/{name}/launcher");
    let (lo, hi) = spec.host_classes;
    let n = rng.gen_range(lo.max(1)..=hi.max(lo.max(1)));
    let classes: Vec<ClassDef> = (0..n)
        .map(|c| {
            let pkg = if c == 0 { launcher.clone() } else { app_pkg.clone() };
            ClassDef {
                class_id: format!("{pkg}/{}{c}", NOUNS[rng.gen_range(0..NOUNS.len())]),
                package: PackagePath::parse_slashed(&pkg).expect("valid package"),
                methods: (0..rng.gen_range(1..=4))
                    .map(|m| random_method(format!("{}{m}", VERBS[rng.gen_range(0..VERBS.len())]), spec, rng))
                    .collect(),
            }
        })
        .collect();
    let edges = (1..n)
        .map(|c| DepEdge {
            from: classes[rng.gen_range(0..c)].class_id.clone(),
            to: classes[c].class_id.clone(),
            kind: EdgeKind::MethodCall,
        })
        .collect();
    let path = |s: &str| PackagePath::parse_slashed(s).expect("valid package");
    ProgramBundle::new(
        BundleMeta::App(AppMeta {
            app_package: path(&app_pkg),
            application_namespace: path(&app_pkg),
            launcher_activity_package: path(&launcher),
        }),
        classes,
        edges,
    )
    .expect("generated host is valid")
}
