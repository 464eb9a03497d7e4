use std::fmt;

use greenwave::datasetgen::DatasetError;
use greenwave::gaopt::GaError;
use greenwave::microsim::SimError;
use greenwave::roadnet::NetError;
use greenwave::signalplan::SettingError;
use greenwave::surrogates::SurrogateError;
use greenwave::trainer::MetricsError;
use serde::Serialize;

pub const EXIT_CODES: &str = "Exit codes:
  0  success
  2  usage error (unknown flag, missing argument)
  3  io error (missing or unreadable file)
  4  parse error (malformed JSON, TOML, CSV or OSM)
  5  contract violation (invalid setting, config or network)
  6  simulation failure
  7  training or prediction failure
  8  gradient check above tolerance

Errors are printed to stderr as a single JSON line:
  {\"error\":{\"kind\":\"io\",\"code\":3,\"message\":\"...\"}}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Usage,
    Io,
    Parse,
    Contract,
    Sim,
    Train,
    Gradcheck,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Parse => 4,
            Kind::Contract => 5,
            Kind::Sim => 6,
            Kind::Train => 7,
            Kind::Gradcheck => 8,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Self::new(Kind::Contract, message)
    }

    /// Prefixes the message with context such as a file path.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    /// The single-line machine-readable form printed on stderr.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: Kind,
            code: i32,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        let message = self.message.replace(['\n', '\r'], " ");
        let w = Wrapper { error: Body { kind: self.kind, code: self.kind.code(), message: &message } };
        serde_json::to_string(&w).expect("error serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Kind::Io, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(Kind::Parse, e.to_string())
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        Self::new(Kind::Parse, e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new(Kind::Parse, e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        let kind = match e {
            NetError::Xml { .. } | NetError::Format(_) => Kind::Parse,
            NetError::Empty | NetError::Invalid(_) => Kind::Contract,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<SettingError> for CliError {
    fn from(e: SettingError) -> Self {
        Self::new(Kind::Contract, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let kind = match e {
            SimError::SettingLength { .. } | SimError::Config(_) => Kind::Contract,
            SimError::Safety { .. } => Kind::Sim,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let kind = match &e {
            DatasetError::Simulation { source, .. } => match source {
                SimError::Safety { .. } => Kind::Sim,
                _ => Kind::Contract,
            },
            DatasetError::Csv(_) => Kind::Parse,
            DatasetError::Pool(_) => Kind::Io,
            DatasetError::Setting { .. }
            | DatasetError::ZeroStd { .. }
            | DatasetError::TooSmall { .. }
            | DatasetError::Meta(_) => Kind::Contract,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<SurrogateError> for CliError {
    fn from(e: SurrogateError) -> Self {
        let kind = match &e {
            SurrogateError::Io(_) => Kind::Io,
            SurrogateError::Json(_) | SurrogateError::Manifest(_) => Kind::Parse,
            SurrogateError::KMismatch { .. }
            | SurrogateError::Setting(_)
            | SurrogateError::Token(_)
            | SurrogateError::Adjacency { .. }
            | SurrogateError::MissingAdjacency { .. }
            | SurrogateError::TokenOutOfVocab { .. }
            | SurrogateError::SequenceTooLong { .. }
            | SurrogateError::Config(_)
            | SurrogateError::DegenerateTargets(_) => Kind::Contract,
            SurrogateError::Autodiff(_) | SurrogateError::Diverged { .. } | SurrogateError::Metrics(_) => Kind::Train,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::new(Kind::Contract, e.to_string())
    }
}

impl From<GaError> for CliError {
    fn from(e: GaError) -> Self {
        let kind = match &e {
            GaError::Config(_) | GaError::KMismatch { .. } => Kind::Contract,
            GaError::Simulation(_) => Kind::Sim,
            GaError::Fitness { .. } => Kind::Train,
            GaError::Io(_) => Kind::Io,
        };
        Self::new(kind, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
