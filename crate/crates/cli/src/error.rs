use sma_core::SmaError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] SmaError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(SmaError::Io(e))
    }
}

impl CliError {
    /// 2 for configuration, 3 for violated preconditions, 1 for numerical
    /// or I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                SmaError::InvalidParameter(_)
                | SmaError::Support(_)
                | SmaError::AmbiguousEdge(_)
                | SmaError::DimensionMismatch { .. }
                | SmaError::Coverage(_)
                | SmaError::Unsupported(_) => 3,
                SmaError::SingularCovariance { .. } | SmaError::Factorization { .. } | SmaError::Format(_) | SmaError::Io(_) => 1,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(SmaError::Coverage("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(SmaError::SingularCovariance { det: 0.0 }).exit_code(), 1);
        assert_eq!(CliError::Core(SmaError::Factorization { pivot: 2 }).exit_code(), 1);
    }
}
