use std::fmt::Display;
use std::path::{Path, PathBuf};

use precipnet::Error;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const TRAINING: u8 = 3;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl Display) -> Self {
        Failure {
            code: USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl Display) -> Self {
        Failure {
            code: DATA,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn training(msg: impl Display) -> Self {
        Failure {
            code: TRAINING,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn context(mut self, msg: impl Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(msg);
        self
    }
}

fn code_of(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => USAGE,
        Error::NonFiniteGradient(_) | Error::Diverged(_) => TRAINING,
        Error::InvalidShape(_)
        | Error::ShapeMismatch { .. }
        | Error::Format { .. }
        | Error::Dataset(_)
        | Error::Io { .. }
        | Error::Json { .. } => DATA,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: code_of(&e),
            error: e.into(),
        }
    }
}

/// Adds a context line to library errors while keeping their exit code.
pub trait Context<T> {
    fn with(self, msg: impl Display + Send + Sync + 'static) -> Result<T, Failure>;
}

impl<T> Context<T> for precipnet::Result<T> {
    fn with(self, msg: impl Display + Send + Sync + 'static) -> Result<T, Failure> {
        self.map_err(|e| Failure::from(e).context(msg))
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn with(self, msg: impl Display + Send + Sync + 'static) -> Result<T, Failure> {
        self.map_err(|e| Failure::data(e).context(msg))
    }
}

/// `--out` if given, else `$PRECIPNET_OUT/<default_name>`.
pub fn output_dir(out: Option<PathBuf>, default_name: &str) -> Result<PathBuf, Failure> {
    if let Some(out) = out {
        return Ok(out);
    }
    match std::env::var_os("PRECIPNET_OUT") {
        Some(root) if !root.is_empty() => Ok(Path::new(&root).join(default_name)),
        _ => Err(Failure::usage("no --out given and PRECIPNET_OUT is not set")),
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::data)?;
    std::fs::write(path, text + "\n").with(format!("cannot write {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).with(format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(e).context(format!("malformed {}", path.display())))
}
