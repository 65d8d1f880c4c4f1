use std::fmt::Write as _;

use super::model::*;

/// Serializes a bundle into the text format. `parse_bundle` of the result
/// yields a bundle equal to the input.
pub fn write_bundle(bundle: &ProgramBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "@bundle {}", bundle.kind().as_str());
    match &bundle.meta {
        BundleMeta::App(app) => {
            let _ = writeln!(out, "@meta app_package={}", app.app_package.dotted());
            let _ = writeln!(out, "@meta application_namespace={}", app.application_namespace.dotted());
            let _ = writeln!(
                out,
                "@meta launcher_activity_package={}",
                app.launcher_activity_package.dotted()
            );
        }
        BundleMeta::Library(lib) => {
            let _ = writeln!(out, "@meta group_id={}", lib.group_id);
            let _ = writeln!(out, "@meta artifact_id={}", lib.artifact_id);
            let _ = writeln!(out, "@meta version={}", lib.version);
            let _ = writeln!(out, "@meta packaging={}", lib.packaging.as_str());
            for dep in &lib.declared_deps {
                let _ = writeln!(
                    out,
                    "@meta declared_dep={}:{}:{}:{}",
                    dep.group_id, dep.artifact_id, dep.version, dep.root_package
                );
            }
        }
    }
    for class in &bundle.classes {
        let _ = writeln!(out, "@class {} pkg={}", class.class_id, class.package);
        for method in &class.methods {
            let _ = writeln!(out, "@method {} entry={}", method.method_id, method.entry_block);
            for (i, block) in method.blocks.iter().enumerate() {
                let _ = writeln!(out, "@block {i}:");
                for op in &block.opcodes {
                    let _ = writeln!(out, "  {op}");
                }
            }
            for (from, to) in &method.edges {
                let _ = writeln!(out, "@edge {from} {to}");
            }
        }
    }
    for edge in &bundle.dependency_edges {
        let _ = writeln!(out, "@dep {} {} {}", edge.from, edge.to, edge.kind.as_str());
    }
    out
}
