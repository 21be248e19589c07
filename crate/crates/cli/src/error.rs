use polystab::diophantine::DiophantineError;
use polystab::dynamics::DynamicsError;
use polystab::experiments::ExperimentError;
use polystab::geometry::GeometryError;
use polystab::normalform::NormalFormError;
use polystab::AlgebraError;
use thiserror::Error;

/// Exit codes: 2 for configuration and argument errors, 3 for numeric failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AlgebraError> for CliError {
    fn from(e: AlgebraError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Divergence { .. } | GeometryError::SingularHessian(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DiophantineError> for CliError {
    fn from(e: DiophantineError) -> Self {
        match e {
            DiophantineError::Geometry(g) => g.into(),
            DiophantineError::BoundViolated { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::NonConvergence { .. } | DynamicsError::FlowFailure(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<NormalFormError> for CliError {
    fn from(e: NormalFormError) -> Self {
        match e {
            NormalFormError::Algebra(a) => a.into(),
            NormalFormError::Dynamics(d) => d.into(),
            NormalFormError::TruncationOverflow { .. } | NormalFormError::HomologicalDefect { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Algebra(x) => x.into(),
            ExperimentError::Geometry(x) => x.into(),
            ExperimentError::Diophantine(x) => x.into(),
            ExperimentError::NormalForm(x) => x.into(),
            ExperimentError::Dynamics(x) => x.into(),
            ExperimentError::DegenerateData(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
