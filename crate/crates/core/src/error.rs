use thiserror::Error;

/// Errors produced by the positioning pipeline, calibration, simulation and reporting.
///
/// The enum is `Clone + PartialEq` so failed trials can be stored inside
/// simulation records and compared for determinism.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum VlpError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error(
        "inconsistent anchors: LED heights span {spread_mm} mm, tolerance is {tolerance_mm} mm"
    )]
    InconsistentAnchors { spread_mm: f64, tolerance_mm: f64 },

    #[error("unknown uid `{0}`")]
    UnknownUid(String),

    #[error("too few anchors: {found} resolvable, at least 2 required")]
    TooFewAnchors { found: usize },

    #[error("no visible anchors: {visible} in frame, at least 2 required")]
    NoVisibleAnchors { visible: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {source_name}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        source_name: String,
        line: Option<u64>,
        message: String,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl VlpError {
    /// Short stable name used in CSV status columns.
    pub fn kind(&self) -> &'static str {
        match self {
            VlpError::DegenerateGeometry(_) => "DegenerateGeometry",
            VlpError::InconsistentAnchors { .. } => "InconsistentAnchors",
            VlpError::UnknownUid(_) => "UnknownUid",
            VlpError::TooFewAnchors { .. } => "TooFewAnchors",
            VlpError::NoVisibleAnchors { .. } => "NoVisibleAnchors",
            VlpError::EmptyInput(_) => "EmptyInput",
            VlpError::InvalidInput(_) => "InvalidInput",
            VlpError::Parse { .. } => "Parse",
            VlpError::Io { .. } => "Io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        VlpError::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = VlpError> = std::result::Result<T, E>;
