use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("nonfinite or invalid field `{field}` in record {record}")]
    NonfiniteField { record: usize, field: &'static str },
    #[error("scene contains no Gaussians")]
    EmptyScene,
    #[error("image shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("nonfinite value in loss term `{0}`")]
    NonfinitePart(&'static str),
    #[error("nonfinite gradient in parameter group `{0}`")]
    NonfiniteGradient(&'static str),
    #[error("training diverged at iteration {iter}: {detail}")]
    Diverged { iter: usize, detail: String },
    #[error("isosurface is empty (volume has a single sign)")]
    EmptyIsosurface,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("config validation: {0}")]
    ConfigValidation(String),
    #[error("malformed {what} file {path}: {detail}")]
    MalformedFile {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
