use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Every configuration problem found.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Core(#[from] snls_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration, 3 for numerical or model errors, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                snls_core::Error::Io(_) | snls_core::Error::Json(_) | snls_core::Error::Snapshot(_) => 4,
                snls_core::Error::InvalidGrid(_)
                | snls_core::Error::InvalidKernel(_)
                | snls_core::Error::InvalidParams(_)
                | snls_core::Error::InvalidNorm(_)
                | snls_core::Error::NotAdmissible { .. } => 2,
                _ => 3,
            },
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) => match e {
                snls_core::Error::InvalidGrid(_) => "invalid_grid",
                snls_core::Error::NonFiniteField => "non_finite_field",
                snls_core::Error::GridMismatch(_) => "grid_mismatch",
                snls_core::Error::InvalidNorm(_) => "invalid_norm",
                snls_core::Error::NotAdmissible { .. } => "not_admissible",
                snls_core::Error::InvalidKernel(_) => "invalid_kernel",
                snls_core::Error::InvalidParams(_) => "invalid_params",
                snls_core::Error::InvalidControl(_) => "invalid_control",
                snls_core::Error::InvalidEvent(_) => "invalid_event",
                snls_core::Error::MissingNoiseLog => "missing_noise_log",
                snls_core::Error::Snapshot(_) => "snapshot",
                snls_core::Error::RangeCondition(_) => "range_condition",
                snls_core::Error::BlowUp(_) => "blow_up",
                snls_core::Error::Io(_) => "io",
                snls_core::Error::Json(_) => "json",
            },
            CliError::Io(_) => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }

    /// Machine-readable form written to stderr and `error.json`.
    pub fn to_json(&self) -> serde_json::Value {
        let violations = match self {
            CliError::Config(v) => v.clone(),
            _ => Vec::new(),
        };
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
                "violations": violations,
            }
        })
    }
}
