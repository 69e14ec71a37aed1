use thiserror::Error;

/// Failures surfaced by the command-line tool, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(kindling::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Usage errors reported by the argument parser.
pub const EXIT_USAGE: i32 = 2;

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  runtime error in a tensor, module or optimizer
  2  invalid command line
  3  invalid configuration value
  4  dataset missing or malformed
  5  allocation trace missing or malformed
  6  file system error";

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Trace(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<kindling::Error> for CliError {
    fn from(e: kindling::Error) -> Self {
        use kindling::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Data(m) => CliError::Data(m),
            E::Trace { index, message } => CliError::Trace(format!("event {index}: {message}")),
            E::Io(m) => CliError::Io(std::io::Error::other(m)),
            other => CliError::Runtime(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let errors = [
            CliError::Runtime(kindling::Error::TapeConsumed),
            CliError::Config(String::new()),
            CliError::Data(String::new()),
            CliError::Trace(String::new()),
            CliError::Io(std::io::Error::other("x")),
        ];
        let mut codes: Vec<i32> = errors.iter().map(|e| e.exit_code()).collect();
        codes.push(EXIT_USAGE);
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 6);
        assert!(!codes.contains(&0));
    }

    #[test]
    fn library_errors_keep_their_category() {
        assert_eq!(CliError::from(kindling::Error::Data("gone".into())).exit_code(), 4);
        assert_eq!(CliError::from(kindling::Error::Config("bad".into())).exit_code(), 3);
    }
}
