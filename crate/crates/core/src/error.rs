use thiserror::Error;

/// Errors raised by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("calibration failed at band {band}: white reference {white} is not above dark reference {dark}")]
    Calibration { band: usize, white: f64, dark: f64 },

    #[error("no wavelengths inside {lo_nm}-{hi_nm} nm")]
    EmptyRange { lo_nm: f64, hi_nm: f64 },

    #[error("band index {index} out of range for a cube with {bands} bands")]
    BandOutOfRange { index: usize, bands: usize },

    #[error("band set is empty")]
    EmptyBandSet,

    #[error("invalid hypercube: {0}")]
    InvalidCube(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("row {row} has zero standard deviation")]
    ConstantRow { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("NIPALS did not converge for latent variable {lv} after {iterations} iterations")]
    NoConvergence { lv: usize, iterations: usize },

    #[error("class {class} has zero spread of predicted values")]
    DegenerateClass { class: usize },

    #[error("unknown bug group `{0}`")]
    UnknownGroup(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
