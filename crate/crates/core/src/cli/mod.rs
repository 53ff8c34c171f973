//! Everything behind the `hetm` binary: the walkthrough demo, the seller and
//! buyer processes, the extraction experiment, and the byte formats and
//! transports they share.
//!
//! Failures are reported as a single `error[kind]: message` line; the kind
//! determines the exit code.

pub mod demo;
pub mod envelope;
pub mod party;
pub mod transport;

use std::fmt;

pub use demo::{run_demo, DemoOptions, DemoReport};
pub use party::{buyer_main, extract_main, seller_main, BuyerOptions, ExtractOptions, SellerOptions, TransportSpec};

use crate::ckks::CkksError;
use crate::protocol::ProtocolError;
use envelope::EnvelopeError;
use transport::TransportError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROTOCOL: i32 = 2;
pub const EXIT_CHEATED: i32 = 3;
pub const EXIT_TRANSPORT: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Protocol,
    /// A result failed its check: a CHEATED delivery or a demo outside tolerance.
    Verify,
    Transport,
    Config,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Protocol => EXIT_PROTOCOL,
            ErrorKind::Verify => EXIT_CHEATED,
            ErrorKind::Transport => EXIT_TRANSPORT,
            ErrorKind::Config => EXIT_CONFIG,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Protocol => "protocol",
            ErrorKind::Verify => "verify",
            ErrorKind::Transport => "transport",
            ErrorKind::Config => "config",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn config(e: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, e.to_string())
    }

    /// A protocol failure tied to the walkthrough step it happened in.
    pub fn at_step(step: u32, e: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Protocol, format!("step {step}: {e}"))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "error[{}]: {}", self.kind, one_line)
    }
}

impl std::error::Error for CliError {}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        Self::new(ErrorKind::Transport, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Transport, e.to_string())
    }
}

impl From<EnvelopeError> for CliError {
    fn from(e: EnvelopeError) -> Self {
        Self::new(ErrorKind::Protocol, e.to_string())
    }
}

impl From<CkksError> for CliError {
    fn from(e: CkksError) -> Self {
        Self::config(e)
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::BadConfig(_) | ProtocolError::BadModel(_) | ProtocolError::Ckks(_) => Self::config(e),
            _ => Self::new(ErrorKind::Protocol, e.to_string()),
        }
    }
}

/// Step of the walkthrough in which a message is produced.
pub fn message_step(label: &str) -> u32 {
    match label {
        "params" | "announcement" => 2,
        "query" => 5,
        "result" | "refusal" => 7,
        "payment" | "decline" => 9,
        "delivery" => 10,
        _ => 0,
    }
}
