use thiserror::Error;

pub type Result<T, E = D2cError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum D2cError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    /// Artifacts stamped with a different config hash.
    #[error("{0} (pass --force to override)")]
    Mismatch(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: d2c_core::Error,
    },
}

impl D2cError {
    pub fn stage(stage: &'static str) -> impl FnOnce(d2c_core::Error) -> Self {
        move |source| D2cError::Stage { stage, source }
    }

    /// 1 for usage, config and file problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            D2cError::Stage { source, .. } if source.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for D2cError {
    fn from(e: std::io::Error) -> Self {
        D2cError::Io(e.to_string())
    }
}
