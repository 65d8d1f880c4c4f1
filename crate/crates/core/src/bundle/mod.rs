//! Program bundles: the data model for apps and library versions plus the
//! line-oriented text format they are stored in.
//!
//! See `docs/bundle-format.md` for the grammar.

mod model;
mod parse;
mod write;

pub use model::{
    AppMeta, BasicBlock, BundleKind, BundleMeta, ClassDef, DeclaredDep, DepEdge, EdgeKind,
    LibraryMeta, MethodDef, PackagePath, Packaging, ProgramBundle,
};
pub use parse::parse_bundle;
pub use write::write_bundle;

use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid bundle at {path}: {message}")]
    Semantic { path: String, message: String },
}

impl BundleError {
    pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> BundleError {
        BundleError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn semantic(path: impl Into<String>, message: impl Into<String>) -> BundleError {
        BundleError::Semantic {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}")]
    Parse {
        path: String,
        #[source]
        source: BundleError,
    },
}

/// Reads and parses a bundle file.
pub fn load_bundle(path: &Path) -> Result<ProgramBundle, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bundle(&text).map_err(|source| LoadError::Parse {
        path: path.display().to_string(),
        source,
    })
}
