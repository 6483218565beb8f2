use floc_core::Error;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, flags or input data.
    #[error("{0}")]
    Validation(String),
    /// Failure while computing or writing results.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            code: i32,
            message: String,
        }
        serde_json::to_string(&Line {
            error: self.kind(),
            code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error serializes")
    }
}

fn is_runtime(e: &Error) -> bool {
    match e {
        Error::Step { source, .. } => is_runtime(source),
        Error::Io(_)
        | Error::AllZero
        | Error::EmptyGraph
        | Error::EmptyCluster(_)
        | Error::NormalizationUnderflow(_) => true,
        _ => false,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if is_runtime(&e) {
            CliError::Runtime(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let v: CliError = Error::LengthMismatch { expected: 2, found: 1 }.into();
        assert_eq!(v.exit_code(), 2);
        let r: CliError = Error::AllZero.into();
        assert_eq!(r.exit_code(), 3);
        let nested: CliError = Error::Step { step: 3, source: Box::new(Error::AllZero) }.into();
        assert_eq!(nested.exit_code(), 3);
        assert!(!v.to_json().contains('\n'));
    }
}
