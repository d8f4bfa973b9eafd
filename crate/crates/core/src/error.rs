//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Stage count outside the supported range 2..=8.
    #[error("invalid stage count {0}: supported range is 2..=8")]
    InvalidStageCount(usize),

    /// The compact coefficient system lost invertibility; with distinct
    /// nodes this signals a node-computation bug upstream.
    #[error("degenerate coefficient system: {0}")]
    DegenerateSystem(String),

    /// Spline coefficient fit left a residual above tolerance.
    #[error("spline basis construction failed: {0}")]
    BasisConstruction(String),

    /// Argument outside its admissible domain (e.g. tau outside [0, 1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Newton iteration on the stage equations did not converge.
    #[error("Newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDidNotConverge { iterations: usize, residual: f64 },

    /// A vector-field evaluation produced NaN or infinity.
    #[error("vector field evaluation returned a non-finite value at t = {t:.6e}")]
    Evaluation { t: f64 },

    /// Step halving failed to reach the requested oracle agreement.
    #[error("reference integration did not reach step-halving agreement (last change {last_change:.3e})")]
    OraclePrecision { last_change: f64 },

    /// A control law was evaluated outside its validity region.
    #[error("control law domain error: {0}")]
    ControlDomain(String),

    /// The ZOH conversion optimizer failed to converge.
    #[error("input conversion did not converge after {iterations} iterations (gradient {gradient:.3e})")]
    ConversionDidNotConverge { iterations: usize, gradient: f64 },

    /// A sampling-limit search was started with an invalid bracket.
    #[error("invalid stability bracket: {0}")]
    InvalidBracket(String),

    /// Error raised during step `step` of a multi-step integration.
    #[error("integration failed at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Bad scenario or configuration value.
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Attach a step index to an error coming out of a one-step solve.
    pub fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
