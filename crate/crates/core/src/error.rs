use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("improper integral diverges from x = {x:e}: {detail}")]
    DivergentIntegral { x: f64, detail: String },

    #[error("value {x:e} is outside the range of G (sup G = {sup:e})")]
    OutOfRange { x: f64, sup: f64 },

    #[error("{op} did not converge after {iterations} iterations (last bracket [{lo:e}, {hi:e}])")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        lo: f64,
        hi: f64,
    },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("regression is rank-deficient at degree {degree}")]
    SingularRegression { degree: usize },

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("unsupported expansion: {0}")]
    UnsupportedExpansion(String),

    #[error("kappa^1 does not plateau near 0 (last samples {0:?})")]
    UnboundedKappa(Vec<f64>),

    #[error("stiffness / blow-up in reference integration: {0}")]
    Stiffness(String),

    #[error("inner estimator error: {0}")]
    InnerEstimator(String),

    #[error("path {path}, step {step}: {source}")]
    AtStep {
        path: usize,
        step: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn at(self, path: usize, step: usize) -> Self {
        Error::AtStep {
            path,
            step,
            source: Box::new(self),
        }
    }

    /// True when the failure came from bad user input rather than the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
