use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config:\n{0}")]
    Validation(String),

    #[error(transparent)]
    Model(#[from] ge_remote::Error),

    #[error("structure check failed: {0}")]
    Structure(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_GUARD: i32 = 3;
pub const EXIT_STRUCTURE: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ge_remote::Error as E;
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Structure(_) => EXIT_STRUCTURE,
            CliError::Model(e) => match e {
                E::InvalidModel(_) | E::DimensionMismatch { .. } | E::InvalidGrid(_) | E::HorizonMismatch { .. } => EXIT_VALIDATION,
                E::Guard(_) | E::BudgetExceeded { .. } | E::TruncationOverflow { .. } => EXIT_GUARD,
                E::StructureViolation { .. } => EXIT_STRUCTURE,
                _ => EXIT_OTHER,
            },
        }
    }
}

/// Exit status for an error chain: the first [`CliError`] or library error
/// found decides, anything else is 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<ge_remote::Error>() {
            return CliError::Model(e.clone()).exit_code();
        }
    }
    EXIT_OTHER
}
