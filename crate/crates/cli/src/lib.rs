//! Command implementations behind the `tplscan` binary.
//!
//! Exit codes: 0 success, 1 some inputs failed, 2 a required input is
//! missing, 3 findings present under `--fail-on-findings`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tplscan_core::bundle::load_bundle;
use tplscan_core::corpusgen::{generate, CorpusSpec, Manifest};
use tplscan_core::eval::{evaluate, AppOutcome, EvalResult};
use tplscan_core::matching::identify;
use tplscan_core::mutate::{mutate, MutationOp, MutationSpec};
use tplscan_core::report::ScanReport;
use tplscan_core::store::SignatureDb;
use tplscan_core::vulndb::{annotate, VulnDb};
use tplscan_core::{write_bundle, MatcherConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURES: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_FINDINGS: i32 = 3;

/// A required file or directory does not exist.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} does not exist", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

#[derive(Debug, Parser)]
#[command(name = "tplscan", version, about = "Identify third-party library versions in program bundles")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a signature database from a directory of library bundles.
    BuildDb {
        lib_dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Identify library versions in an app bundle.
    Scan {
        app: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Vulnerability records (JSON lines) to join with the matches.
        #[arg(long)]
        vulndb: Option<PathBuf>,
        /// Report path; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Exit with 3 when the report has findings.
        #[arg(long)]
        fail_on_findings: bool,
        #[command(flatten)]
        thresholds: Thresholds,
    },
    /// Validate vulnerability records and write them normalized.
    VulnImport {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Apply obfuscation transforms to a bundle.
    Mutate {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// MutationSpec JSON file; overrides --op and --seed.
        #[arg(long, conflicts_with_all = ["op", "seed"])]
        spec: Option<PathBuf>,
        /// rename | flatten | junk=R | dead_code=R | cfr=R, applied in order.
        #[arg(long = "op")]
        op: Vec<MutationOp>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Precision and recall of scans against a corpus manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Directory holding `<app id>.bundle`; defaults to `apps/` next to the manifest.
        #[arg(long)]
        apps: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        thresholds: Thresholds,
    },
    /// Dump a signature database as JSON lines.
    Export {
        #[arg(long)]
        db: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus of libraries, apps and a manifest.
    GenCorpus {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        libraries: usize,
        #[arg(long, default_value_t = 10)]
        versions: usize,
        #[arg(long, default_value_t = 0.15)]
        edit_rate: f64,
        #[arg(long, default_value_t = 100)]
        apps: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Thresholds {
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub coarse_overlap: Option<f64>,
    #[arg(long)]
    pub class_ratio: Option<f64>,
}

impl Thresholds {
    pub fn config(&self) -> Result<MatcherConfig> {
        let d = MatcherConfig::default();
        let config = MatcherConfig {
            theta: self.theta.unwrap_or(d.theta),
            delta: self.delta.unwrap_or(d.delta),
            coarse_overlap: self.coarse_overlap.unwrap_or(d.coarse_overlap),
            class_ratio: self.class_ratio.unwrap_or(d.class_ratio),
            ..d
        };
        config.validate()?;
        Ok(config)
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool.build().context("starting worker threads")?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::BuildDb { lib_dir, out } => cmd_build_db(&lib_dir, &out),
        Command::Scan {
            app,
            db,
            vulndb,
            out,
            fail_on_findings,
            thresholds,
        } => cmd_scan(&app, &db, vulndb.as_deref(), out.as_deref(), fail_on_findings, &thresholds.config()?),
        Command::VulnImport { input, out } => cmd_vuln_import(&input, &out),
        Command::Mutate {
            input,
            out,
            spec,
            op,
            seed,
        } => {
            let spec = match spec {
                Some(path) => {
                    require(&path)?;
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => MutationSpec { seed, ops: op },
            };
            cmd_mutate(&input, &out, &spec)
        }
        Command::Eval {
            manifest,
            db,
            apps,
            out,
            thresholds,
        } => {
            let apps = apps.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("apps"));
            cmd_eval(&manifest, &db, &apps, out.as_deref(), &thresholds.config()?)
        }
        Command::Export { db, out } => cmd_export(&db, out.as_deref()),
        Command::GenCorpus {
            out,
            seed,
            libraries,
            versions,
            edit_rate,
            apps,
        } => {
            if !(0.0..=1.0).contains(&edit_rate) {
                bail!("--edit-rate must lie in [0, 1], got {edit_rate}");
            }
            let spec = CorpusSpec {
                seed,
                n_libraries: libraries,
                versions_per_library: versions,
                inter_version_edit_rate: edit_rate,
                apps,
                ..CorpusSpec::default()
            };
            cmd_gen_corpus(&spec, &out)
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingInput(path.to_path_buf()).into())
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn cmd_build_db(lib_dir: &Path, out: &Path) -> Result<i32> {
    require(lib_dir)?;
    let start = Instant::now();
    let mut paths: Vec<PathBuf> = fs::read_dir(lib_dir)
        .with_context(|| format!("listing {}", lib_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bundle"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        eprintln!("warning: no .bundle files in {}", lib_dir.display());
    }

    let mut db = SignatureDb::new();
    let mut failed = 0;
    for path in &paths {
        let added = load_bundle(path)
            .map_err(anyhow::Error::from)
            .and_then(|b| db.add_bundle(&b).with_context(|| path.display().to_string()));
        match added {
            Ok(warnings) => {
                for w in warnings {
                    eprintln!("warning: {}: {w}", path.display());
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {e:#}");
            }
        }
    }
    db.save(out)?;
    println!(
        "records={} methods={} elapsed={:.3}",
        db.len(),
        db.method_count(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failed > 0 { EXIT_FAILURES } else { EXIT_OK })
}

fn load_db(path: &Path) -> Result<SignatureDb> {
    require(path)?;
    SignatureDb::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_vulndb(path: &Path) -> Result<VulnDb> {
    require(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    VulnDb::import(&text).with_context(|| format!("importing {}", path.display()))
}

/// Scans one app; shared by `scan` and the tests.
pub fn scan_report(app: &Path, db: &SignatureDb, vulns: Option<&VulnDb>, config: &MatcherConfig) -> Result<ScanReport> {
    let bundle = load_bundle(app)?;
    let report = identify(&bundle, db, config);
    let findings = vulns.map(|v| annotate(&report, v));
    Ok(ScanReport::new(report, *config, findings))
}

pub fn cmd_scan(
    app: &Path,
    db_path: &Path,
    vulndb: Option<&Path>,
    out: Option<&Path>,
    fail_on_findings: bool,
    config: &MatcherConfig,
) -> Result<i32> {
    require(app)?;
    let db = load_db(db_path)?;
    let vulns = vulndb.map(load_vulndb).transpose()?;
    let report = scan_report(app, &db, vulns.as_ref(), config)?;
    let mut json = report.to_json();
    json.push('\n');
    write_output(out, &json)?;
    let has_findings = report.findings.as_ref().is_some_and(|f| !f.is_empty());
    Ok(if fail_on_findings && has_findings { EXIT_FINDINGS } else { EXIT_OK })
}

pub fn cmd_vuln_import(input: &Path, out: &Path) -> Result<i32> {
    let db = load_vulndb(input)?;
    fs::write(out, db.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
    println!("records={}", db.len());
    Ok(EXIT_OK)
}

pub fn cmd_mutate(input: &Path, out: &Path, spec: &MutationSpec) -> Result<i32> {
    require(input)?;
    let bundle = load_bundle(input)?;
    let (mutated, warnings) = mutate(&bundle, spec)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    fs::write(out, write_bundle(&mutated)).with_context(|| format!("writing {}", out.display()))?;
    Ok(EXIT_OK)
}

pub fn evaluate_corpus(manifest: &Manifest, db: &SignatureDb, apps_dir: &Path, config: &MatcherConfig) -> Result<EvalResult> {
    use rayon::prelude::*;
    let outcomes: Vec<AppOutcome> = manifest
        .par_iter()
        .map(|(id, truth)| {
            let path = apps_dir.join(format!("{id}.bundle"));
            require(&path)?;
            let bundle = load_bundle(&path)?;
            Ok(AppOutcome::new(truth, identify(&bundle, db, config).winner_keys()))
        })
        .collect::<Result<_>>()?;
    Ok(evaluate(&outcomes)?)
}

pub fn cmd_eval(manifest_path: &Path, db_path: &Path, apps_dir: &Path, out: Option<&Path>, config: &MatcherConfig) -> Result<i32> {
    require(manifest_path)?;
    let text = fs::read_to_string(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| format!("manifest {} does not match the schema", manifest_path.display()))?;
    let db = load_db(db_path)?;
    let result = evaluate_corpus(&manifest, &db, apps_dir, config)?;
    let mut json = serde_json::to_string_pretty(&result)?;
    json.push('\n');
    write_output(out, &json)?;
    Ok(EXIT_OK)
}

pub fn cmd_export(db_path: &Path, out: Option<&Path>) -> Result<i32> {
    let db = load_db(db_path)?;
    let mut buf = Vec::new();
    db.export_jsonl(&mut buf)?;
    write_output(out, std::str::from_utf8(&buf)?)?;
    Ok(EXIT_OK)
}

pub fn cmd_gen_corpus(spec: &CorpusSpec, out: &Path) -> Result<i32> {
    let corpus = generate(spec);
    corpus.write_to(out).with_context(|| format!("writing corpus to {}", out.display()))?;
    let per_app: BTreeMap<_, _> = corpus.manifest();
    println!(
        "libraries={} versions={} apps={} embedded={}",
        spec.n_libraries,
        corpus.libraries.len(),
        corpus.apps.len(),
        per_app.values().map(Vec::len).sum::<usize>()
    );
    Ok(EXIT_OK)
}

/// Maps an error to its exit code.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<MissingInput>()) {
        EXIT_MISSING_INPUT
    } else {
        EXIT_FAILURES
    }
}
