use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension n = {0} (need n >= 2)")]
    InvalidDimension(usize),
    #[error("perturbation violates class {class}: {block} block decays like rho^{observed:.2}, need rho^{required}")]
    ClassViolation {
        class: String,
        block: String,
        observed: f64,
        required: u32,
    },
    #[error("degenerate metric at rho = {rho}, v = {v}: |det| = {det:e}")]
    DegenerateMetric { rho: f64, v: f64, det: f64 },
    #[error("point outside region: {0}")]
    OutOfRegion(String),
    #[error("chart error: {0}")]
    Chart(String),
    #[error("integrator failure: {0}")]
    Integrator(String),
    #[error("symmetric reduction unavailable: {0}")]
    ReductionUnavailable(String),
    #[error("conjugation failed near v = {v:e}: residual {residual:e}")]
    Conjugation { v: f64, residual: f64 },
    #[error("instability at p = {p}, q = {q}")]
    Instability { p: f64, q: f64 },
    #[error("radiation-field extraction failed: {0}")]
    Extraction(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("weight violation: {0}")]
    WeightViolation(String),
    #[error("invalid pole order {0} (need m >= 1)")]
    InvalidOrder(i64),
    #[error("fit failure: {0}")]
    Fit(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
