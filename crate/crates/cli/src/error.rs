use std::fmt;

/// The two failure classes the exit-code contract distinguishes: `Usage`
/// exits 1 (bad flags, bad config, unreadable or misaligned inputs),
/// `Partial` exits 2 (the run completed but some sessions aborted).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Partial(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Partial(msg) => f.write_str(msg),
        }
    }
}

/// Shorthand for wrapping a library error into the usage class.
pub fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}
