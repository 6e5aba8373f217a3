use std::fmt;
use std::path::PathBuf;

/// Error type shared by every module in this crate.
#[derive(Debug)]
pub enum Error {
    /// I/O failure tagged with the path we were touching.
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed input file. `line` is 1-based; 0 means "whole file".
    Parse { path: String, line: usize, msg: String },
    /// A caller or data contract was violated (bad arguments, missing
    /// artifacts, dimension mismatches, unknown ids).
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::Parse { path, line, msg } => {
                if *line == 0 {
                    write!(f, "{path}: {msg}")
                } else {
                    write!(f, "{path}:{line}: {msg}")
                }
            }
            Error::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl fmt::Display, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.to_string(), line, msg: msg.into() }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
