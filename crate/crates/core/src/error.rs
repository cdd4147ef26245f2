use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// One or more parameters violate a domain invariant. Every violation is
    /// listed, keyed by parameter name.
    #[error("invalid parameters: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error("{name} = {value} is outside its domain: {reason}")]
    Domain { name: &'static str, value: f64, reason: &'static str },

    #[error("spend {spend} exceeds battery level {level}")]
    InsufficientEnergy { level: f64, spend: f64 },

    #[error("{name} = {value} is not a multiple of the energy quantum {quantum}")]
    OffGrid { name: String, value: f64, quantum: f64 },

    #[error("state space of {states} states exceeds the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("power iteration did not converge in {iterations} iterations (last change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("chain never completes a packet: outage ratio is undefined")]
    NoCompletedPackets,

    #[error("root is not bracketed on [{lo}, {hi}]")]
    NotBracketed { lo: f64, hi: f64 },

    #[error("no closed form available: {0}")]
    NoClosedForm(&'static str),

    #[error("threshold scan failed at every grid point: {0}")]
    ScanFailed(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid(_) => "invalid",
            Error::Domain { .. } => "domain",
            Error::InsufficientEnergy { .. } => "insufficient_energy",
            Error::OffGrid { .. } => "off_grid",
            Error::StateSpaceTooLarge { .. } => "state_space",
            Error::NotConverged { .. } => "not_converged",
            Error::NoCompletedPackets => "no_packets",
            Error::NotBracketed { .. } => "not_bracketed",
            Error::NoClosedForm(_) => "no_closed_form",
            Error::ScanFailed(_) => "scan_failed",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
