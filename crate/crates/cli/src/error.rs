use shimkit::eval::EvalError;
use shimkit::net::NetError;
use shimkit::opt::OptError;
use shimkit::sim::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<OptError> for CliError {
    fn from(e: OptError) -> Self {
        match e {
            OptError::Config(m) => CliError::Config(m),
            OptError::Field(f) => CliError::Config(f.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Diverged { .. } => CliError::Numeric(e.to_string()),
            NetError::Io(m) => CliError::Io(m),
            NetError::Checkpoint(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Net(n) => n.into(),
            EvalError::Opt(o) => o.into(),
            EvalError::Io(m) => CliError::Io(m),
            other => CliError::Config(other.to_string()),
        }
    }
}
