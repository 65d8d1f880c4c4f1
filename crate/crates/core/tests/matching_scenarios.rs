use tplscan_core::bundle::{
    AppMeta, BasicBlock, BundleMeta, ClassDef, DeclaredDep, LibraryMeta, MethodDef, PackagePath, Packaging,
    ProgramBundle,
};
use tplscan_core::corpusgen::{generate, CorpusSpec};
use tplscan_core::features::ModuleFeatures;
use tplscan_core::matching::{coarse_containment, coarse_stage, identify, identify_with, CoarseOutcome, StageOutcome};
use tplscan_core::mutate::{mutate, MutationSpec};
use tplscan_core::store::{LibraryKey, SignatureDb};
use tplscan_core::{MatcherConfig, Opcode};

/// A chain of `k` blocks; every `k` gives a different shape.
fn chain(id: &str, k: usize) -> MethodDef {
    MethodDef {
        method_id: id.into(),
        blocks: (0..k).map(|i| BasicBlock::new(vec![Opcode::Const; 2 + i % 3])).collect(),
        edges: (1..k).map(|i| (i - 1, i)).collect(),
        entry_block: 0,
    }
}

/// Adds a self-loop on the last block, a shape no plain chain has.
fn perturb(m: &mut MethodDef) {
    let last = m.blocks.len() - 1;
    m.edges.push((last, last));
}

fn path(s: &str) -> PackagePath {
    PackagePath::parse_slashed(s).unwrap()
}

fn library(version: &str, methods: Vec<MethodDef>) -> ProgramBundle {
    let classes = methods
        .chunks(5)
        .enumerate()
        .map(|(i, ms)| ClassDef {
            class_id: format!("com/squareup/okio/C{i}"),
            package: path("com/squareup/okio"),
            methods: ms.to_vec(),
        })
        .collect::<Vec<_>>();
    let edges = (1..classes.len())
        .map(|i| tplscan_core::bundle::DepEdge {
            from: classes[0].class_id.clone(),
            to: classes[i].class_id.clone(),
            kind: tplscan_core::bundle::EdgeKind::MethodCall,
        })
        .collect();
    ProgramBundle::new(
        BundleMeta::Library(LibraryMeta {
            group_id: "com.squareup.okio".into(),
            artifact_id: "okio".into(),
            version: version.into(),
            packaging: Packaging::Skinny,
            declared_deps: vec![],
        }),
        classes,
        edges,
    )
    .unwrap()
}

fn app_with(libs: &[&ProgramBundle]) -> ProgramBundle {
    let host = ClassDef {
        class_id: "com/example/Main".into(),
        package: path("com/example"),
        methods: vec![chain("main", 2)],
    };
    let mut classes = vec![host];
    let mut edges = vec![];
    for lib in libs {
        classes.extend(lib.classes.iter().cloned());
        edges.extend(lib.dependency_edges.iter().cloned());
    }
    ProgramBundle::new(
        BundleMeta::App(AppMeta {
            app_package: path("com/example"),
            application_namespace: path("com/example"),
            launcher_activity_package: path("com/example"),
        }),
        classes,
        edges,
    )
    .unwrap()
}

fn twenty() -> Vec<MethodDef> {
    (1..=20).map(|k| chain(&format!("m{k}"), k)).collect()
}

fn db_of(libs: &[&ProgramBundle]) -> SignatureDb {
    let mut db = SignatureDb::new();
    for l in libs {
        db.add_bundle(l).unwrap();
    }
    db
}

#[test]
fn ten_percent_perturbed_is_a_potential_match() {
    let stored = library("1.0.0", twenty());
    let mut methods = twenty();
    perturb(&mut methods[4]);
    perturb(&mut methods[11]);
    let candidate = ModuleFeatures::from_classes(&library("x", methods).classes);
    let record = ModuleFeatures::from_classes(&stored.classes);
    assert_eq!(coarse_containment(&candidate, &record), 18.0 / 20.0);
    let db = db_of(&[&stored]);
    assert_eq!(
        coarse_stage(&candidate, &db, &MatcherConfig::default(), true),
        CoarseOutcome::Potential(vec![LibraryKey::new("com.squareup.okio", "okio", "1.0.0")])
    );
}

#[test]
fn half_removed_is_no_match() {
    let stored = library("1.0.0", twenty());
    let candidate = ModuleFeatures::from_classes(&library("x", twenty()[..10].to_vec()).classes);
    let record = ModuleFeatures::from_classes(&stored.classes);
    assert_eq!(coarse_containment(&candidate, &record), 0.5);
    let config = MatcherConfig { class_ratio: 0.0, ..MatcherConfig::default() };
    assert_eq!(coarse_stage(&candidate, &db_of(&[&stored]), &config, true), CoarseOutcome::None);
}

#[test]
fn unmodified_embed_hits_t1() {
    let v1 = library("1.0.0", twenty());
    let mut edited = twenty();
    perturb(&mut edited[0]);
    let v2 = library("2.0.0", edited);
    let db = db_of(&[&v1, &v2]);
    let report = identify(&app_with(&[&v2]), &db, &MatcherConfig::default());
    assert_eq!(report.candidates.len(), 1);
    let c = &report.candidates[0];
    assert_eq!(c.stage, StageOutcome::T1Exact);
    assert!(!c.ambiguous);
    assert_eq!(c.winners.len(), 1);
    assert_eq!(c.winners[0].db_key.version, "2.0.0");
    assert_eq!(c.winners[0].tss, 1.0);
}

#[test]
fn byte_identical_versions_are_reported_together() {
    let (a, b) = (library("2.0.0", twenty()), library("2.3.0", twenty()));
    let db = db_of(&[&a, &b]);
    let report = identify(&app_with(&[&library("2.4.3", twenty())]), &db, &MatcherConfig::default());
    let c = &report.candidates[0];
    assert!(c.ambiguous);
    let versions: Vec<_> = c.winners.iter().map(|w| w.db_key.version.as_str()).collect();
    assert_eq!(versions, ["2.0.0", "2.3.0"]);
}

#[test]
fn app_without_library_code_has_no_candidates() {
    let db = db_of(&[&library("1.0.0", twenty())]);
    let report = identify(&app_with(&[]), &db, &MatcherConfig::default());
    assert!(report.candidates.is_empty());
}

#[test]
fn fuzzy_partner_completes_a_version_match() {
    // Version 2 differs from the embedded code in one method's shape only; its
    // opcode stream is unchanged, so the pair is fuzzy with MSS 1.
    let stored = library("1.0.0", twenty());
    let mut methods = twenty();
    let m = &mut methods[19];
    let tail = m.blocks[19].opcodes.split_off(1);
    m.blocks.push(BasicBlock::new(tail));
    m.edges.push((19, 20));
    let report = identify(&app_with(&[&library("x", methods)]), &db_of(&[&stored]), &MatcherConfig::default());
    let c = &report.candidates[0];
    assert_eq!(c.stage, StageOutcome::VersionMatched);
    let w = &c.winners[0];
    assert_eq!((w.matched_exact, w.matched_fuzzy, w.tss), (19, 1, 1.0));
}

#[test]
fn package_index_never_changes_winners() {
    let corpus = generate(&CorpusSpec {
        n_libraries: 10,
        versions_per_library: 3,
        apps: 10,
        ..CorpusSpec::default()
    });
    let mut db = SignatureDb::new();
    for l in &corpus.libraries {
        db.add_bundle(l).unwrap();
    }
    let config = MatcherConfig::default();
    let spec = MutationSpec {
        seed: 5,
        ops: vec!["rename".parse().unwrap()],
    };
    for app in &corpus.apps {
        let renamed = mutate(&app.bundle, &spec).unwrap().0;
        for b in [&app.bundle, &renamed] {
            let with = identify_with(b, &db, &config, true);
            let without = identify_with(b, &db, &config, false);
            assert_eq!(with.candidates, without.candidates);
        }
    }
}

#[test]
fn fat_library_stores_only_its_own_classes() {
    let mut fat = library("1.0.0", twenty());
    fat.classes.push(ClassDef {
        class_id: "okhttp3/internal/Util".into(),
        package: path("okhttp3/internal"),
        methods: vec![chain("u", 3)],
    });
    if let BundleMeta::Library(meta) = &mut fat.meta {
        meta.packaging = Packaging::Fat;
        meta.declared_deps.push(DeclaredDep {
            group_id: "com.squareup.okhttp3".into(),
            artifact_id: "okhttp".into(),
            version: "3.12.0".into(),
            root_package: path("okhttp3"),
        });
    }
    fat.validate().unwrap();
    let db = db_of(&[&fat]);
    let record = db.records().next().unwrap();
    assert_eq!(record.features.method_count(), 20);
    assert!(!record.features.package_roots.contains("okhttp3/internal"));
}
