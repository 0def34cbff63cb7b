use thiserror::Error;

/// Errors raised across the library. Variants are grouped into the three
/// classes the command line maps onto exit codes: parse, contract and
/// numerical.
#[derive(Debug, Error)]
pub enum SnsError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in layer `{layer}`")]
    NumericalOverflow { layer: String },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("degenerate surface: {0}")]
    DegenerateSurface(String),

    #[error("degenerate parametrization at {point:?}: EG - F^2 = {det:e}")]
    DegenerateParametrization { point: [f64; 3], det: f64 },

    #[error("mesh is not star-shaped about its centroid ({} bad faces, first {:?})", faces.len(), faces.first())]
    NotStarShaped { faces: Vec<usize> },

    #[error("ill-conditioned surface Jacobian (condition estimate {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("field norm vanished ({norm:e})")]
    VanishingField { norm: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("at point {index}: {source}")]
    AtPoint {
        index: usize,
        #[source]
        source: Box<SnsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Contract,
    Numerical,
}

impl SnsError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SnsError::Parse { .. } | SnsError::Io(_) => ErrorClass::Parse,
            SnsError::Contract(_) | SnsError::NotStarShaped { .. } => ErrorClass::Contract,
            SnsError::AtPoint { source, .. } => source.class(),
            _ => ErrorClass::Numerical,
        }
    }

    pub(crate) fn at(index: usize, err: SnsError) -> SnsError {
        SnsError::AtPoint { index, source: Box::new(err) }
    }
}

pub type Result<T, E = SnsError> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> SnsError {
    SnsError::Contract(msg.into())
}
