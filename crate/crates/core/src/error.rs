use thiserror::Error;

/// Errors raised anywhere in the bound evaluation or simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error(
        "surface point {0:?} has zero norm; a surface through the origin cannot be represented"
    )]
    DegenerateSurface([f64; 2]),

    #[error("surface index {index} out of range (map has {count} surfaces)")]
    InvalidSurfaceIndex { index: usize, count: usize },

    #[error("double-bounce path must use two distinct surfaces, got ({0}, {0})")]
    RepeatedSurface(usize),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("amplitude must be positive, got {0}")]
    NonPositiveAmplitude(f64),

    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("carrier frequency must be positive, got {0}")]
    NonPositiveCarrier(f64),

    #[error("squared aperture {0:e} m^2 is below the endfire threshold")]
    ZeroAperture(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "singular information matrix at step {step} ({block}); condition number {condition:e}"
    )]
    SingularFim {
        step: usize,
        block: String,
        condition: f64,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("Monte-Carlo run {run} failed: {source}")]
    RunFailed {
        run: usize,
        source: Box<BoundsError>,
    },
}

impl BoundsError {
    /// Attach a time index to a singular-matrix error raised without one.
    pub fn at_step(self, n: usize) -> Self {
        match self {
            BoundsError::SingularFim {
                block, condition, ..
            } => BoundsError::SingularFim {
                step: n,
                block,
                condition,
            },
            other => other,
        }
    }

    /// True for failures of the numerical core (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        if let BoundsError::RunFailed { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            BoundsError::SingularFim { .. }
                | BoundsError::DegenerateGeometry(_)
                | BoundsError::ZeroAperture(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BoundsError>;
