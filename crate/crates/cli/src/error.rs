use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        source: wargame_core::Error,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime { .. } | CliError::Io(_) => 3,
        }
    }

    pub fn runtime(context: impl Into<String>) -> impl FnOnce(wargame_core::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Runtime { context, source }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
