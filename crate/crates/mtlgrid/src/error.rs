use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("label {label} out of range for {classes} classes (index {index})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        index: usize,
    },

    #[error("bad magic in {path}: expected {expected:#010x}, got {actual:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("truncated file {path}: needed {needed} bytes, had {available}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        available: usize,
    },

    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported image size {rows}x{cols}, expected 28x28")]
    BadImageSize { rows: usize, cols: usize },

    #[error("empty class {class}: stratified split requires every class present")]
    EmptyClass { class: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("checkpoint {path}: bad magic")]
    CheckpointBadMagic { path: PathBuf },

    #[error("checkpoint {path}: unsupported format version {version}")]
    CheckpointBadVersion { path: PathBuf, version: u32 },

    #[error("checkpoint {path}: {detail}")]
    CheckpointCorrupt { path: PathBuf, detail: String },

    #[error("model has no {head} head")]
    MissingHead { head: &'static str },

    #[error("non-finite loss at repeat {repeat}, epoch {epoch}, batch {batch} ({component})")]
    NonFiniteLoss {
        repeat: usize,
        epoch: usize,
        batch: usize,
        component: &'static str,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

pub type Result<T> = std::result::Result<T, Error>;
