use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Core {
        path: PathBuf,
        #[source]
        source: l3sma::Error,
    },
    #[error("{0}")]
    Library(#[from] l3sma::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: no input files found")]
    NoInput(PathBuf),
    #[error("{0}")]
    GeometryMismatch(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{0}")]
    Report(String),
    #[error("{failed} of {total} rows failed")]
    RowFailures { failed: usize, total: usize },
    #[error("{count} file(s) could not be read")]
    BadFiles { count: usize },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn core(path: &Path, source: impl Into<l3sma::Error>) -> Self {
        CliError::Core {
            path: path.to_path_buf(),
            source: source.into(),
        }
    }

    /// Invocation problems map to exit code 2, everything else to 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    /// Name of the innermost error variant, e.g. `TruncatedPayload`.
    pub fn kind(&self) -> String {
        match self {
            CliError::Core { source, .. } | CliError::Library(source) => library_kind(source),
            other => leading_ident(&format!("{other:?}")),
        }
    }
}

pub fn library_kind(e: &l3sma::Error) -> String {
    let debug = format!("{e:?}");
    // Debug output nests as `Outer(Inner { .. })`; keep descending through
    // tuple wrappers until a struct-like or unit variant is reached.
    let mut rest = debug.as_str();
    loop {
        let ident = leading_ident(rest);
        let after = &rest[ident.len()..];
        match after.strip_prefix('(') {
            Some(inner) if inner.starts_with(|c: char| c.is_ascii_uppercase()) => rest = inner,
            _ => return ident,
        }
    }
}

fn leading_ident(s: &str) -> String {
    s.chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect()
}
