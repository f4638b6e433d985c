//! Harness around the projector core: run configs and presets, fixture
//! synthesis, independent reference implementations, verification suites,
//! cost sweeps, and the projection command.

pub mod dltn_io;
pub mod fixtures;
pub mod oracle;
pub mod presets;
pub mod project_cmd;
pub mod runconfig;
pub mod sweep;
pub mod verify;

/// Command-level failure, split by exit code: usage errors exit 2,
/// everything else exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn failed(msg: impl Into<String>) -> CliError {
    CliError::Failed(msg.into())
}
