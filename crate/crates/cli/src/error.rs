use quadfault::discriminator::DiscError;
use quadfault::eval::EvalError;
use quadfault::nets::NetError;
use quadfault::policy::PolicyError;
use quadfault::ppo::PpoError;
use thiserror::Error;

/// Every failure the binary can report. Each maps to a stable code printed
/// as `error[CODE]: message`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    MissingBaseline(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Port(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Config(_) => "E_CONFIG",
            CliError::Io(_) => "E_IO",
            CliError::Checkpoint(_) => "E_CHECKPOINT",
            CliError::Mismatch(_) => "E_MISMATCH",
            CliError::MissingBaseline(_) => "E_BASELINE",
            CliError::Diverged(_) => "E_DIVERGED",
            CliError::Parse(_) => "E_PARSE",
            CliError::Port(_) => "E_PORT",
            CliError::Runtime(_) => "E_RUNTIME",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            _ => 1,
        }
    }

    /// The one-line form printed on stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.code(), msg.trim())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Checkpoint(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Checkpoint(e.to_string())
    }
}

impl From<DiscError> for CliError {
    fn from(e: DiscError) -> Self {
        match e {
            DiscError::ClassBalance(_) | DiscError::EmptyDataset => CliError::Config(e.to_string()),
            other => CliError::Checkpoint(other.to_string()),
        }
    }
}

impl From<PpoError> for CliError {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::Diverged(m) => CliError::Diverged(format!("training diverged: {m}")),
            PpoError::Config(m) => CliError::Config(m),
            PpoError::Io(e) => CliError::Io(e.to_string()),
            PpoError::Policy(e) => CliError::Checkpoint(e.to_string()),
            PpoError::Net(e) => CliError::Checkpoint(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => CliError::Config(m),
            EvalError::Mismatch(m) => CliError::Mismatch(m),
            EvalError::Io(e) => CliError::Io(e.to_string()),
            EvalError::Csv(e) => CliError::Io(e.to_string()),
            EvalError::Policy(e) => CliError::Checkpoint(e.to_string()),
            EvalError::Net(e) => CliError::Checkpoint(e.to_string()),
            EvalError::Discriminator(e) => e.into(),
            EvalError::Env(e) => CliError::Config(e.to_string()),
        }
    }
}
