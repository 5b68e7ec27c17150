use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("property check failed: {0}")]
    Property(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 pass, 2 configuration, 3 numerical failure, 4 failed property.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Property(_) => 4,
        }
    }
}

impl From<mabesov_core::Error> for CliError {
    fn from(e: mabesov_core::Error) -> Self {
        use mabesov_core::Error as E;
        match e {
            E::Parameter(_)
            | E::Domain { .. }
            | E::StrictConvexity { .. }
            | E::ScaleOutOfRange { .. }
            | E::Resolution(_)
            | E::Admissibility { .. }
            | E::Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
