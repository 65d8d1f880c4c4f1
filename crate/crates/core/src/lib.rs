//! Identification of exact third-party library versions inside program
//! bundles, and the known vulnerabilities of those versions.
//!
//! The pipeline:
//!
//! 1. [`decouple`] strips the host app's own packages and splits what is left
//!    into library candidates along class-dependency connected components.
//! 2. [`features`] turns each method into a coarse signature (hash of its
//!    canonically numbered CFG) and a fine one (piecewise fuzzy hash of its
//!    opcodes); a module's sorted coarse hashes hash again into `T1`.
//! 3. [`matching`] searches a [`store::SignatureDb`] in two stages: coarse
//!    filtering (package roots, class counts, `T1`, coarse overlap) and then
//!    version pinpointing by method and library similarity scores.
//! 4. [`vulndb`] joins identified versions with known vulnerabilities.
//!
//! [`mutate`] and [`corpusgen`] provide obfuscation transforms and a
//! synthetic ground-truth corpus for evaluation; [`eval`] computes the
//! library- and version-level precision/recall.

pub mod bundle;
pub mod corpusgen;
pub mod decouple;
pub mod eval;
pub mod features;
pub mod hash;
pub mod matching;
pub mod mutate;
pub mod opcode;
pub mod report;
pub mod store;
pub mod vulndb;

pub use bundle::{parse_bundle, write_bundle, ProgramBundle};
pub use features::MatcherConfig;
pub use hash::Hash128;
pub use opcode::Opcode;
