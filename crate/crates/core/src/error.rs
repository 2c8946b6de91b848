use thiserror::Error;

/// Every failure the toolkit reports. Each variant knows which pipeline
/// stage raised it (see [`Error::module`]) so drivers can emit a
/// machine-readable record with provenance.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model `{model}` produced a non-finite value in {field}[{component}]")]
    ModelDomain {
        model: String,
        field: &'static str,
        component: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown parameter `{name}` for model `{model}`")]
    UnknownParameter { model: String, name: String },

    #[error("invalid parameter vector: {0}")]
    InvalidParameters(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "step size underflow at t = {t} (h = {h:e}); the model may be stiff, \
         which the explicit integrator does not support"
    )]
    Stiffness { t: f64, h: f64 },

    #[error("state became non-finite at t = {t}")]
    Divergence { t: f64 },

    #[error("no crossing of x[{index}] = {level} ({direction}) in the integrated span")]
    NoCrossing {
        index: usize,
        level: f64,
        direction: &'static str,
    },

    #[error("periodic orbit Newton iteration did not converge after {iterations} iterations (residual {residual:e}); check the seed")]
    OrbitSeed { iterations: usize, residual: f64 },

    #[error("orbit is not hyperbolic: largest nontrivial Floquet multiplier modulus {modulus}")]
    NonHyperbolic {
        modulus: f64,
        orbit: Box<crate::orbit::PeriodicOrbit>,
    },

    #[error("{what}: residual {residual:e} exceeds tolerance {tolerance:e} at phase {phase}")]
    Accuracy {
        what: &'static str,
        residual: f64,
        tolerance: f64,
        phase: f64,
    },

    #[error("state did not converge to the orbit within {periods} periods (distance {distance:e})")]
    BasinEscape { periods: usize, distance: f64 },

    #[error("singular bordered system ({0}); the phase section may be tangent to the orbit")]
    DegenerateSection(String),

    #[error("stable locking point is near-tangent: |V'(chi*)| = {0:e}")]
    NearTangency(f64),

    #[error("grids do not align: {0}")]
    Alignment(String),

    #[error("cannot normalize column `{0}`: all entries are zero")]
    DegenerateNormalization(String),

    #[error("relative sensitivity undefined for parameter `{0}` with value 0")]
    UndefinedRelative(String),
}

impl Error {
    /// Name of the pipeline stage that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::ModelDomain { .. }
            | Error::UnknownModel(_)
            | Error::UnknownParameter { .. }
            | Error::InvalidParameters(_) => "model",
            Error::Dimension { .. } | Error::Precondition(_) => "core",
            Error::Config(_) => "config",
            Error::Stiffness { .. } | Error::Divergence { .. } | Error::NoCrossing { .. } => {
                "odeint"
            }
            Error::OrbitSeed { .. } | Error::NonHyperbolic { .. } => "orbit",
            Error::Accuracy { .. } | Error::BasinEscape { .. } => "prc",
            Error::DegenerateSection(_) | Error::UndefinedRelative(_) => "sensitivity",
            Error::NearTangency(_) => "entrainment",
            Error::Alignment(_) | Error::DegenerateNormalization(_) => "robustness",
        }
    }

    /// Stable short identifier of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ModelDomain { .. } => "model_domain",
            Error::Dimension { .. } => "dimension",
            Error::UnknownModel(_) => "unknown_model",
            Error::UnknownParameter { .. } => "unknown_parameter",
            Error::InvalidParameters(_) => "invalid_parameters",
            Error::Precondition(_) => "precondition",
            Error::Config(_) => "config",
            Error::Stiffness { .. } => "stiffness",
            Error::Divergence { .. } => "divergence",
            Error::NoCrossing { .. } => "no_crossing",
            Error::OrbitSeed { .. } => "orbit_seed",
            Error::NonHyperbolic { .. } => "non_hyperbolic",
            Error::Accuracy { .. } => "accuracy",
            Error::BasinEscape { .. } => "basin_escape",
            Error::DegenerateSection(_) => "degenerate_section",
            Error::NearTangency(_) => "near_tangency",
            Error::Alignment(_) => "alignment",
            Error::DegenerateNormalization(_) => "degenerate_normalization",
            Error::UndefinedRelative(_) => "undefined_relative",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
