use std::path::PathBuf;

use thiserror::Error;

use crate::spectral::CombFit;

pub type Result<T, E = AfcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AfcError {
    /// Bad or missing input data: line tables, scenario files, table files.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical precondition does not hold (out-of-range parameter, grid too small, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("comb fit did not converge after {evaluations} evaluations (residual rms {:.3e})", .best.residual_rms)]
    FitNotConverged { best: Box<CombFit>, evaluations: usize },

    #[error("no comb structure in window: tooth depth {d:.3e} is below 3x residual rms {residual_rms:.3e} (background d0 = {d0:.4})")]
    NoComb { d0: f64, d: f64, residual_rms: f64 },

    #[error("inconsistent depths: inferred d0 = {d0:.4} is negative (d = {d:.4})")]
    InconsistentDepths { d: f64, d0: f64 },

    #[error("trace too short: {fraction:.3e} of the output energy falls outside the trace; extend the time span")]
    TraceTooShort { fraction: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AfcError>,
    },
}

impl AfcError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        AfcError::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AfcError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AfcError::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, skipping any stage wrappers.
    pub fn root(&self) -> &AfcError {
        match self {
            AfcError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| AfcError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
