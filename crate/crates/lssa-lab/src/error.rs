//! Error type shared across the laboratory.

use std::fmt;
use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, LabError>;

/// All failure modes the laboratory distinguishes.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 2,
/// missing artifacts with 3, numerical failures with 4, everything else with 1.
#[derive(Debug)]
pub enum LabError {
    /// Invalid configuration or invalid argument to an operation.
    Config(String),
    /// A required artifact (dataset, checkpoint, attack output) is absent.
    MissingArtifact { path: PathBuf, hint: String },
    /// Numerical failure: NaN loss, zero-norm embedding, divergence.
    Numerical(String),
    /// Tensor shape disagreement between caller and callee.
    ShapeMismatch { expected: String, got: String },
    /// Stored file failed its checksum.
    ChecksumMismatch { path: PathBuf },
    /// Stored artifact has a schema version this build cannot read.
    VersionMismatch { found: u32, supported: u32 },
    /// Checkpoint vocabulary does not match the dataset vocabulary.
    VocabMismatch { checkpoint: String, dataset: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Malformed persisted data (manifest, header, caption file).
    Format(String),
}

impl fmt::Display for LabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabError::Config(msg) => write!(f, "config error: {msg}"),
            LabError::MissingArtifact { path, hint } => {
                write!(f, "missing artifact: {} ({hint})", path.display())
            }
            LabError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            LabError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            LabError::ChecksumMismatch { path } => {
                write!(f, "checksum mismatch for {}", path.display())
            }
            LabError::VersionMismatch { found, supported } => {
                write!(f, "schema version {found} not supported (reader supports {supported})")
            }
            LabError::VocabMismatch { checkpoint, dataset } => write!(
                f,
                "vocabulary hash mismatch: checkpoint has {checkpoint}, dataset has {dataset}"
            ),
            LabError::Io(e) => write!(f, "io error: {e}"),
            LabError::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for LabError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            LabError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e)
    }
}

impl LabError {
    /// Exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::MissingArtifact { .. } => 3,
            LabError::Numerical(_) => 4,
            _ => 1,
        }
    }

    /// Short machine-readable kind tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::MissingArtifact { .. } => "missing_artifact",
            LabError::Numerical(_) => "numerical",
            LabError::ShapeMismatch { .. } => "shape_mismatch",
            LabError::ChecksumMismatch { .. } => "checksum_mismatch",
            LabError::VersionMismatch { .. } => "version_mismatch",
            LabError::VocabMismatch { .. } => "vocab_mismatch",
            LabError::Io(_) => "io",
            LabError::Format(_) => "format",
        }
    }
}
