use thiserror::Error;

/// Errors raised by the navigation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("range {r} m is inside the singular zone around the sensor origin")]
    DegenerateRange { r: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid specifications of energyscape and mask/raster differ")]
    SpecMismatch,

    #[error("masked energy denominator is zero; layer is not active")]
    ZeroDenominator,

    #[error("flow-line for lateral distance {d} m does not cross the field of view of sensor {sensor_index}")]
    EmptyRaster { d: f64, sensor_index: usize },

    #[error("degenerate world: {0}")]
    DegenerateWorld(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration failed for {layer}: noise p99 {noise_p99:.4} / threshold {threshold:.4} / weakest echo {weakest_echo:.4}")]
    Calibration {
        layer: String,
        noise_p99: f64,
        threshold: f64,
        weakest_echo: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
