use std::collections::BTreeMap;

use super::model::*;
use super::BundleError;
use crate::opcode::Opcode;

/// Parses a bundle document and validates every invariant.
pub fn parse_bundle(text: &str) -> Result<ProgramBundle, BundleError> {
    let mut p = Parser::default();
    for (idx, raw) in text.lines().enumerate() {
        p.line(idx + 1, raw)?;
    }
    p.finish()
}

#[derive(Default)]
struct Parser {
    kind: Option<BundleKind>,
    meta: BTreeMap<String, (usize, String)>,
    declared_deps: Vec<DeclaredDep>,
    classes: Vec<ClassDef>,
    edges: Vec<DepEdge>,
    in_class: bool,
    in_method: bool,
    in_block: bool,
    last_line: usize,
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter()
        .map(|(byte, tok)| (line[..byte].chars().count() + 1, tok))
        .collect()
}

impl Parser {
    fn line(&mut self, lineno: usize, raw: &str) -> Result<(), BundleError> {
        self.last_line = lineno;
        let toks = tokens(raw);
        let Some(&(col, head)) = toks.first() else {
            return Ok(());
        };
        if head.starts_with('#') {
            return Ok(());
        }
        let err = |col: usize, msg: String| BundleError::syntax(lineno, col, msg);

        if !head.starts_with('@') {
            if !self.in_block {
                return Err(err(col, format!("opcode `{head}` outside of a @block")));
            }
            if toks.len() != 1 {
                return Err(err(toks[1].0, "operands are not allowed; one mnemonic per line".into()));
            }
            let op: Opcode = head.parse().map_err(|e| err(col, format!("{e}")))?;
            let method = self.current_method();
            method.blocks.last_mut().expect("in_block implies a block").opcodes.push(op);
            return Ok(());
        }

        let args = &toks[1..];
        let expect_args = |n: usize| -> Result<(), BundleError> {
            if args.len() != n {
                let at = args.get(n).map_or(col, |t| t.0);
                return Err(err(at, format!("{head} takes {n} argument(s), found {}", args.len())));
            }
            Ok(())
        };

        if self.kind.is_none() && head != "@bundle" {
            return Err(err(col, "document must start with `@bundle app|library`".into()));
        }

        match head {
            "@bundle" => {
                if self.kind.is_some() {
                    return Err(err(col, "duplicate @bundle header".into()));
                }
                expect_args(1)?;
                self.kind = Some(match args[0].1 {
                    "app" => BundleKind::App,
                    "library" => BundleKind::Library,
                    other => return Err(err(args[0].0, format!("unknown bundle kind `{other}`"))),
                });
            }
            "@meta" => {
                expect_args(1)?;
                if !self.classes.is_empty() || !self.edges.is_empty() {
                    return Err(err(col, "@meta must precede all @class and @dep lines".into()));
                }
                let (acol, arg) = args[0];
                let Some((key, value)) = arg.split_once('=') else {
                    return Err(err(acol, "expected key=value".into()));
                };
                self.meta_entry(lineno, acol, key, value)?;
            }
            "@class" => {
                expect_args(2)?;
                let (pcol, pkg) = args[1];
                let Some(path) = pkg.strip_prefix("pkg=") else {
                    return Err(err(pcol, "expected pkg=<a/b/c>".into()));
                };
                let package = PackagePath::parse_slashed(path).map_err(|m| err(pcol + 4, m))?;
                self.classes.push(ClassDef {
                    class_id: args[0].1.to_string(),
                    package,
                    methods: Vec::new(),
                });
                self.in_class = true;
                self.in_method = false;
                self.in_block = false;
            }
            "@method" => {
                expect_args(2)?;
                if !self.in_class {
                    return Err(err(col, "@method outside of a @class".into()));
                }
                let (ecol, entry) = args[1];
                let Some(k) = entry.strip_prefix("entry=") else {
                    return Err(err(ecol, "expected entry=<block index>".into()));
                };
                let entry_block = k
                    .parse::<usize>()
                    .map_err(|_| err(ecol + 6, format!("invalid block index `{k}`")))?;
                self.classes.last_mut().unwrap().methods.push(MethodDef {
                    method_id: args[0].1.to_string(),
                    blocks: Vec::new(),
                    edges: Vec::new(),
                    entry_block,
                });
                self.in_method = true;
                self.in_block = false;
            }
            "@block" => {
                expect_args(1)?;
                if !self.in_method {
                    return Err(err(col, "@block outside of a @method".into()));
                }
                let (bcol, tok) = args[0];
                let Some(idx) = tok.strip_suffix(':') else {
                    return Err(err(bcol, "expected `<index>:`".into()));
                };
                let idx = idx
                    .parse::<usize>()
                    .map_err(|_| err(bcol, format!("invalid block index `{idx}`")))?;
                let method = self.current_method();
                if idx != method.blocks.len() {
                    let want = method.blocks.len();
                    return Err(err(bcol, format!("block {idx} out of order; expected block {want}")));
                }
                method.blocks.push(BasicBlock::default());
                self.in_block = true;
            }
            "@edge" => {
                expect_args(2)?;
                if !self.in_method {
                    return Err(err(col, "@edge outside of a @method".into()));
                }
                let mut ends = [0usize; 2];
                for (slot, &(acol, tok)) in ends.iter_mut().zip(args) {
                    *slot = tok
                        .parse()
                        .map_err(|_| err(acol, format!("invalid block index `{tok}`")))?;
                }
                self.current_method().edges.push((ends[0], ends[1]));
                self.in_block = false;
            }
            "@dep" => {
                expect_args(3)?;
                let kind = EdgeKind::parse(args[2].1).ok_or_else(|| {
                    err(
                        args[2].0,
                        format!(
                            "unknown dependency kind `{}` (inheritance|method_call|field_reference)",
                            args[2].1
                        ),
                    )
                })?;
                self.edges.push(DepEdge {
                    from: args[0].1.to_string(),
                    to: args[1].1.to_string(),
                    kind,
                });
                self.in_class = false;
                self.in_method = false;
                self.in_block = false;
            }
            other => return Err(err(col, format!("unknown directive `{other}`"))),
        }
        Ok(())
    }

    fn current_method(&mut self) -> &mut MethodDef {
        self.classes
            .last_mut()
            .and_then(|c| c.methods.last_mut())
            .expect("in_method implies a method")
    }

    fn meta_entry(&mut self, line: usize, col: usize, key: &str, value: &str) -> Result<(), BundleError> {
        let allowed: &[&str] = match self.kind {
            Some(BundleKind::App) => &["app_package", "application_namespace", "launcher_activity_package"],
            _ => &["group_id", "artifact_id", "version", "packaging", "declared_dep"],
        };
        if !allowed.contains(&key) {
            let kind = self.kind.map_or("bundle", BundleKind::as_str);
            return Err(BundleError::syntax(line, col, format!("unknown {kind} metadata field `{key}`")));
        }
        let value_col = col + key.chars().count() + 1;
        if key == "declared_dep" {
            let parts: Vec<&str> = value.split(':').collect();
            if parts.len() != 4 {
                return Err(BundleError::syntax(
                    line,
                    value_col,
                    "declared_dep must be group:artifact:version:root/package",
                ));
            }
            let root_package =
                PackagePath::parse_slashed(parts[3]).map_err(|m| BundleError::syntax(line, value_col, m))?;
            self.declared_deps.push(DeclaredDep {
                group_id: parts[0].to_string(),
                artifact_id: parts[1].to_string(),
                version: parts[2].to_string(),
                root_package,
            });
            return Ok(());
        }
        if self.meta.insert(key.to_string(), (value_col, value.to_string())).is_some() {
            return Err(BundleError::syntax(line, col, format!("duplicate metadata field `{key}`")));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<ProgramBundle, BundleError> {
        let Some(kind) = self.kind else {
            return Err(BundleError::syntax(
                self.last_line.max(1),
                1,
                "empty document; expected `@bundle app|library`",
            ));
        };
        let mut take = |key: &str| self.meta.remove(key);
        let meta = match kind {
            BundleKind::Library => {
                let packaging = match take("packaging") {
                    None => Packaging::Skinny,
                    Some((_, v)) if v == "skinny" => Packaging::Skinny,
                    Some((_, v)) if v == "fat" => Packaging::Fat,
                    Some((_, v)) => {
                        return Err(BundleError::semantic(
                            "meta/packaging",
                            format!("unknown packaging `{v}` (skinny|fat)"),
                        ))
                    }
                };
                BundleMeta::Library(LibraryMeta {
                    group_id: take("group_id").map(|v| v.1).unwrap_or_default(),
                    artifact_id: take("artifact_id").map(|v| v.1).unwrap_or_default(),
                    version: take("version").map(|v| v.1).unwrap_or_default(),
                    packaging,
                    declared_deps: std::mem::take(&mut self.declared_deps),
                })
            }
            BundleKind::App => {
                let mut dotted = |key: &str| -> Result<Option<PackagePath>, BundleError> {
                    match take(key) {
                        None => Ok(None),
                        Some((_, v)) => PackagePath::parse_dotted(&v)
                            .map(Some)
                            .map_err(|m| BundleError::semantic(format!("meta/{key}"), m)),
                    }
                };
                let app_package = dotted("app_package")?.unwrap_or_default();
                let application_namespace =
                    dotted("application_namespace")?.unwrap_or_else(|| app_package.clone());
                let launcher_activity_package =
                    dotted("launcher_activity_package")?.unwrap_or_else(|| app_package.clone());
                BundleMeta::App(AppMeta {
                    app_package,
                    application_namespace,
                    launcher_activity_package,
                })
            }
        };
        ProgramBundle::new(meta, self.classes, self.edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
@bundle library
@meta group_id=com.example
@meta artifact_id=tiny
@meta version=1.0
@class com/example/Tiny pkg=com/example
@method run entry=0
@block 0:
  const
  return_void
";

    #[test]
    fn minimal_document() {
        let b = parse_bundle(MINIMAL).unwrap();
        assert_eq!(b.classes.len(), 1);
        assert!(b.dependency_edges.is_empty());
        assert_eq!(b.kind(), BundleKind::Library);
        let m = &b.classes[0].methods[0];
        assert_eq!(m.blocks.len(), 1);
        assert_eq!(m.blocks[0].opcodes, vec![Opcode::Const, Opcode::ReturnVoid]);
        assert_eq!(b.library_meta().unwrap().packaging, Packaging::Skinny);
    }

    #[test]
    fn missing_version_names_the_field() {
        let doc = MINIMAL.replace("@meta version=1.0\n", "");
        match parse_bundle(&doc).unwrap_err() {
            BundleError::Semantic { path, message } => {
                assert_eq!(path, "meta/version");
                assert!(message.contains("version"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn dangling_dependency_edge_names_the_class() {
        let doc = format!("{MINIMAL}@dep com/example/Tiny C2 inheritance\n");
        match parse_bundle(&doc).unwrap_err() {
            BundleError::Semantic { path, message } => {
                assert_eq!(path, "dep[0]");
                assert!(message.contains("`C2`"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_mnemonic_is_located() {
        let doc = MINIMAL.replace("  const\n", "  iconst_0\n");
        assert_eq!(
            parse_bundle(&doc).unwrap_err(),
            BundleError::syntax(8, 3, "unknown opcode mnemonic `iconst_0`")
        );
    }

    #[test]
    fn operands_are_rejected() {
        let doc = MINIMAL.replace("  const\n", "  const 42\n");
        assert!(matches!(
            parse_bundle(&doc).unwrap_err(),
            BundleError::Syntax { line: 8, column: 9, .. }
        ));
    }

    #[test]
    fn tokens_report_character_columns() {
        assert_eq!(tokens("  @edge 0  1"), vec![(3, "@edge"), (9, "0"), (12, "1")]);
    }

    #[test]
    fn app_defaults_namespaces_to_app_package() {
        let doc = "@bundle app\n@meta app_package=com.foo\n";
        let b = parse_bundle(doc).unwrap();
        let meta = b.app_meta().unwrap();
        assert_eq!(meta.application_namespace, meta.app_package);
        assert_eq!(meta.launcher_activity_package.to_string(), "com/foo");
    }
}
