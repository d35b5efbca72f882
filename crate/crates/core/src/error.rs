use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and optimizer.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// The target lies below the local horizon of the satellite.
    #[error("target not visible from satellite {sat_id} (elevation {elevation_deg:.3} deg)")]
    NotVisible { sat_id: usize, elevation_deg: f64 },

    /// A translated beam center left the unit UV disk.
    #[error("beam {beam} translated outside the UV disk (u^2+v^2 = {radius_sq:.6})")]
    Horizon { beam: usize, radius_sq: f64 },

    #[error("TDOA needs at least {needed} anchors, got {got}")]
    InsufficientAnchors { needed: usize, got: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A satellite has no associated beam, so its TOA variance is infinite.
    #[error("satellite at position {0} has infinite TOA variance")]
    UnusableSatellite(usize),

    #[error("lookup failed: {0}")]
    Lookup(String),

    /// Fewer satellites above the elevation mask than positioning needs.
    #[error("user {user}: only {visible} satellites visible, {needed} required")]
    Coverage {
        user: usize,
        visible: usize,
        needed: usize,
    },

    #[error("association failed: {0}")]
    Association(String),

    #[error("SDP assembly failed: {0}")]
    Assembly(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
