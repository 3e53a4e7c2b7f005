use thiserror::Error;

#[derive(Debug, Error)]
pub enum IvrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("self-consistent iteration did not converge after {iterations} steps (last |dE| = {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },

    #[error("energy {energy} is within {distance:e} of P-space pole {pole}")]
    PoleProximity { energy: f64, pole: f64, distance: f64 },

    #[error("resonance search found {found} of {expected} roots")]
    IncompleteSpectrum { found: usize, expected: usize },

    #[error("decay fit failed: {0}")]
    Fit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, IvrError>;

impl IvrError {
    /// Stable identifier for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            IvrError::InvalidInput(_) => "invalid-input",
            IvrError::InvalidGrid(_) => "invalid-grid",
            IvrError::Eigensolver(_) => "eigensolver",
            IvrError::NoConvergence { .. } => "no-convergence",
            IvrError::PoleProximity { .. } => "pole-proximity",
            IvrError::IncompleteSpectrum { .. } => "incomplete-spectrum",
            IvrError::Fit(_) => "fit",
            IvrError::Config(_) => "config",
            IvrError::Io { .. } => "io",
            IvrError::Serde(_) => "serde",
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        IvrError::Io { path: path.as_ref().display().to_string(), source }
    }
}

impl From<serde_json::Error> for IvrError {
    fn from(e: serde_json::Error) -> Self {
        IvrError::Serde(e.to_string())
    }
}
