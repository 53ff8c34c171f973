//! Two-party model trading: the seller announces parameters, the buyer sends
//! encrypted test records, the seller scores them under encryption, the buyer
//! pays and receives the model, then checks it against the scores it kept.
//!
//! Both sides are explicit state machines; any message arriving out of order
//! is rejected with [`ProtocolError::StateError`].

mod budget;
mod buyer;
mod messages;
mod seller;
mod verify;

pub use budget::{format_amount, parse_amount, QueryBudget};
pub use buyer::{BuyerEvent, BuyerPolicy, BuyerSession, BuyerState, CheckReport};
pub use messages::{
    hex, BudgetTerms, Decline, EncodingSpec, EvalResult, ModelDelivery, ParamsAnnouncement, PaymentNotice, Refusal,
    RefusalReason, TestQuery, TradeMessage,
};
pub use seller::{SellerConfig, SellerSession, SellerState};
pub use verify::{
    check_params, compatible_check, verify_delivery, CompatVerdict, ModelKind, ParamsVerdict, SecurityPolicy,
    VerificationReport, Verdict, DEFAULT_TOLERANCE,
};

use thiserror::Error;

use crate::ckks::CkksError;
use crate::inference::InferenceError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("unexpected {message} in state {state}")]
    StateError { state: String, message: &'static str },
    #[error("query budget exhausted ({spent} of {max} used)")]
    BudgetExceeded { spent: u32, max: u32 },
    #[error("{count} records outside the per-query cap of {cap}")]
    RecordCapExceeded { count: usize, cap: usize },
    #[error("parameter digest mismatch")]
    DigestMismatch,
    #[error("message belongs to another session")]
    SessionMismatch,
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("paid {paid}, price is {price}")]
    Underpaid { paid: String, price: String },
    #[error("next query costs {price}, above the buyer's limit")]
    PriceTooHigh { price: String },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Ckks(#[from] CkksError),
}
