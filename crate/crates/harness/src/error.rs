use std::fmt;

/// Failure of a harness run, mapped onto the process exit codes.
#[derive(Debug)]
pub enum HarnessError {
    /// Unparseable or invalid configuration; one entry per offending key.
    Config(Vec<String>),
    Numerical(bdsde::Error),
    Io(std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) | Self::Io(_) => 3,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(p) => write!(f, "invalid configuration:\n  {}", p.join("\n  ")),
            Self::Numerical(e) => write!(f, "numerical error: {e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<bdsde::Error> for HarnessError {
    fn from(e: bdsde::Error) -> Self {
        use bdsde::Error as E;
        match e {
            // Parameters the user can fix in the config file.
            E::InvalidArgument(m) | E::Precondition(m) => Self::Config(vec![m]),
            E::Io(io) => Self::Io(io),
            other => Self::Numerical(other),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(std::io::Error::other(e))
    }
}
