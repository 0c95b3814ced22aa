use std::path::PathBuf;

use snowformer_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("image directory {0} is missing or holds no PNG files")]
    MissingImageDir(PathBuf),

    #[error("{path}: unsupported image format ({detail})")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("image of {h}x{w} is smaller than the required {need_h}x{need_w}")]
    ImageTooSmall {
        h: usize,
        w: usize,
        need_h: usize,
        need_w: usize,
    },

    #[error("dataset manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: PathBuf },

    #[error("{path}: checkpoint format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: header declares {declared} tensors, file ends after {found} complete records")]
    TensorCountMismatch {
        path: PathBuf,
        declared: u64,
        found: u64,
    },

    #[error("{path}: malformed tensor record: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("{path}: checksum mismatch")]
    Checksum { path: PathBuf },

    #[error("checkpoint does not match the model: {}", .0.join("; "))]
    ParamMismatch(Vec<String>),

    #[error("perceptual weights not found: {0}")]
    MissingWeights(PathBuf),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("invalid tile plan: {0}")]
    InvalidTile(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
