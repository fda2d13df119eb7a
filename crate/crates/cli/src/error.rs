use mfg_core::MfgError;
use serde_json::json;

/// Failure of a run, mapped onto the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad configuration or input data (exit 2).
    Validation { field: String, message: String },
    /// A solver did not converge or broke down (exit 3).
    Solver(String),
    /// At least one diagnostic check failed (exit 4). Artifacts are still written.
    Diagnostic(String),
    /// Reading or writing files (exit 1).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::Diagnostic(_) => 4,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Validation { field, message } => json!({
                "error": "validation",
                "field": field,
                "message": message,
                "exit_code": 2,
            }),
            CliError::Solver(m) => json!({"error": "solver", "message": m, "exit_code": 3}),
            CliError::Diagnostic(m) => json!({"error": "diagnostic", "message": m, "exit_code": 4}),
            CliError::Io(m) => json!({"error": "io", "message": m, "exit_code": 1}),
        }
    }

    pub fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }

    /// Core errors raised while setting up a problem are input problems; the rest are solver
    /// failures.
    pub fn from_core(field: &str, e: MfgError) -> Self {
        match e {
            MfgError::Invalid(m) | MfgError::Domain(m) => CliError::Validation {
                field: field.into(),
                message: m,
            },
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation { field, message } => write!(f, "{field}: {message}"),
            CliError::Solver(m) | CliError::Diagnostic(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

/// Errors inside a solve: everything is a solver failure except bad input, which keeps the
/// validation code.
pub fn solver(e: MfgError) -> CliError {
    match e {
        MfgError::Invalid(m) => CliError::Validation {
            field: "problem".into(),
            message: m,
        },
        other => CliError::Solver(other.to_string()),
    }
}
