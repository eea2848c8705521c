use std::fmt;
use std::path::Path;

/// Exit code for bad input: unreadable files, malformed CSV, inconsistent dimensions.
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Problem with user-supplied input; always exit code 2.
    Input(String),
    /// A library failure, optionally tagged with the pipeline stage that raised it.
    Core { stage: Option<&'static str>, source: mtl_rmt::Error },
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Core { source, .. } => source.exit_code(),
        }
    }

    /// Tags a library error with the stage name.
    pub fn at(stage: &'static str) -> impl FnOnce(mtl_rmt::Error) -> CliError {
        move |source| CliError::Core { stage: Some(stage), source }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "{msg}"),
            CliError::Core { stage: Some(stage), source } => write!(f, "{stage}: {source}"),
            CliError::Core { stage: None, source } => write!(f, "{source}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mtl_rmt::Error> for CliError {
    fn from(source: mtl_rmt::Error) -> Self {
        CliError::Core { stage: None, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
