use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::budget::QueryBudget;
use super::messages::*;
use super::verify::{check_params, verify_delivery, ParamsVerdict, SecurityPolicy, VerificationReport, DEFAULT_TOLERANCE};
use super::ProtocolError;
use crate::ckks::{CkksContext, GaloisKeys, SecretKey};
use crate::inference::{block_scores, pack_records, predict_label, rotation_steps, InferenceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuyerState {
    AwaitParams,
    Keyed,
    Queried,
    Checked,
    Paid,
    Verified,
    /// Parameters rejected or the buyer declined.
    Closed,
}

impl fmt::Display for BuyerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug)]
pub struct BuyerPolicy {
    pub security: SecurityPolicy,
    /// Largest per-query price the buyer will pay.
    pub max_price: Option<BigRational>,
    pub tolerance: f64,
    pub seed: u64,
}

impl BuyerPolicy {
    pub fn new(security: SecurityPolicy, max_price: Option<BigRational>, tolerance: f64, seed: u64) -> Result<Self, ProtocolError> {
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(ProtocolError::BadConfig(format!("tolerance {tolerance} must be finite and positive")));
        }
        Ok(Self { security, max_price, tolerance, seed })
    }
}

impl Default for BuyerPolicy {
    fn default() -> Self {
        Self { security: SecurityPolicy::Standard, max_price: None, tolerance: DEFAULT_TOLERANCE, seed: 0 }
    }
}

/// Scores and labels recovered from one result.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// `(correct, total)` against expected labels, when given.
    pub accuracy: Option<(usize, usize)>,
}

/// What the buyer made of an incoming message.
#[derive(Clone, Debug, PartialEq)]
pub enum BuyerEvent {
    Params(ParamsVerdict),
    Checked(CheckReport),
    Refused(RefusalReason),
    Verified(VerificationReport),
}

struct Keys {
    ctx: Arc<CkksContext>,
    sk: SecretKey,
    gk: GaloisKeys,
}

pub struct BuyerSession {
    policy: BuyerPolicy,
    rng: ChaCha20Rng,
    state: BuyerState,
    /// State to fall back to when a query is refused.
    before_query: BuyerState,
    announcement: Option<ParamsAnnouncement>,
    keys: Option<Keys>,
    prices: Option<QueryBudget>,
    pending: Vec<Vec<f64>>,
    records: Vec<Vec<f64>>,
    scores: Vec<f64>,
    charged: BigRational,
}

impl fmt::Debug for BuyerSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BuyerSession")
            .field("state", &self.state)
            .field("retained", &self.records.len())
            .finish_non_exhaustive()
    }
}

impl BuyerSession {
    pub fn new(policy: BuyerPolicy) -> Self {
        let rng = ChaCha20Rng::seed_from_u64(policy.seed);
        Self {
            policy,
            rng,
            state: BuyerState::AwaitParams,
            before_query: BuyerState::Keyed,
            announcement: None,
            keys: None,
            prices: None,
            pending: Vec::new(),
            records: Vec::new(),
            scores: Vec::new(),
            charged: BigRational::from_integer(0.into()),
        }
    }

    pub fn state(&self) -> BuyerState {
        self.state
    }

    pub fn policy(&self) -> &BuyerPolicy {
        &self.policy
    }

    pub fn announcement(&self) -> Option<&ParamsAnnouncement> {
        self.announcement.as_ref()
    }

    pub fn context(&self) -> Option<&Arc<CkksContext>> {
        self.keys.as_ref().map(|k| &k.ctx)
    }

    /// Records whose encrypted scores are held for the delivery check.
    pub fn retained_records(&self) -> &[Vec<f64>] {
        &self.records
    }

    pub fn retained_scores(&self) -> &[f64] {
        &self.scores
    }

    /// Sum of the prices of all answered queries.
    pub fn charged(&self) -> &BigRational {
        &self.charged
    }

    fn reject(&self, message: &'static str) -> ProtocolError {
        ProtocolError::StateError { state: self.state.to_string(), message }
    }

    fn ann(&self) -> &ParamsAnnouncement {
        self.announcement.as_ref().expect("announcement is set once keyed")
    }

    fn pin(&self, digest: &[u8; 32], session_id: u64) -> Result<(), ProtocolError> {
        let ann = self.ann();
        if digest != ann.digest() {
            return Err(ProtocolError::DigestMismatch);
        }
        if session_id != ann.session_id {
            return Err(ProtocolError::SessionMismatch);
        }
        Ok(())
    }

    /// Vets the parameters and, if acceptable, generates keys. A rejected
    /// announcement closes the session.
    pub fn receive_announcement(&mut self, ann: &ParamsAnnouncement) -> Result<ParamsVerdict, ProtocolError> {
        if self.state != BuyerState::AwaitParams {
            return Err(self.reject("announcement"));
        }
        let verdict = check_params(ann, self.policy.security);
        self.announcement = Some(ann.clone());
        if !verdict.accepted {
            self.state = BuyerState::Closed;
            return Ok(verdict);
        }
        let ctx = CkksContext::new(ann.params.clone())?;
        let sk = ctx.keygen(&mut self.rng);
        let gk = ctx.galois_keygen(&sk, &rotation_steps(ann.encoding.block_size), &mut self.rng)?;
        self.prices = Some(QueryBudget::new(
            ann.terms.max_queries,
            ann.terms.price_base.clone(),
            ann.terms.price_growth.clone(),
        )?);
        self.keys = Some(Keys { ctx, sk, gk });
        self.state = BuyerState::Keyed;
        Ok(verdict)
    }

    /// Price the seller will charge for the next query.
    pub fn next_price(&self) -> Option<BigRational> {
        self.prices.as_ref().map(QueryBudget::next_price)
    }

    /// Whether the next query is within the buyer's price limit.
    pub fn affordable(&self) -> bool {
        match (&self.policy.max_price, self.next_price()) {
            (Some(max), Some(p)) => p <= *max,
            _ => true,
        }
    }

    /// Packs and encrypts `records` into one query.
    pub fn prepare_query(&mut self, records: &[Vec<f64>]) -> Result<TestQuery, ProtocolError> {
        if !matches!(self.state, BuyerState::Keyed | BuyerState::Checked) {
            return Err(self.reject("prepare query"));
        }
        let ann = self.ann().clone();
        let d = ann.encoding.feature_names.len();
        if records.is_empty() {
            return Err(InferenceError::BadRecordLength { index: 0, expected: d, got: 0 }.into());
        }
        if !self.affordable() {
            return Err(ProtocolError::PriceTooHigh {
                price: self.next_price().map(|p| p.to_string()).unwrap_or_default(),
            });
        }
        let keys = self.keys.as_ref().expect("keyed");
        let slots = keys.ctx.params().slot_count();
        let batch = pack_records(records, d, ann.encoding.block_size, slots)?;
        let pt = keys.ctx.encode_default(&batch.slot_vector)?;
        let ct = keys.ctx.encrypt_symmetric(&pt, &keys.sk, &mut self.rng)?;
        self.pending = records.to_vec();
        self.before_query = self.state;
        self.state = BuyerState::Queried;
        Ok(TestQuery {
            digest: *ann.digest(),
            session_id: ann.session_id,
            record_count: records.len(),
            galois_keys: keys.gk.clone(),
            ciphertext: ct,
        })
    }

    /// Decrypts a result, keeps the scores for the delivery check and
    /// thresholds them into labels.
    pub fn check_result(&mut self, result: &EvalResult, expected_labels: Option<&[u8]>) -> Result<CheckReport, ProtocolError> {
        if self.state != BuyerState::Queried {
            return Err(self.reject("result"));
        }
        self.pin(&result.digest, result.session_id)?;
        let keys = self.keys.as_ref().expect("keyed");
        if result.ciphertext.digest() != keys.ctx.digest() {
            return Err(ProtocolError::DigestMismatch);
        }
        let pt = keys.ctx.decrypt(&result.ciphertext, &keys.sk)?;
        let slots = keys.ctx.decode(&pt);
        let scores = block_scores(&slots, self.ann().encoding.block_size, self.pending.len());
        let labels: Vec<u8> = scores.iter().map(|&s| predict_label(s)).collect();
        let accuracy = expected_labels.map(|want| {
            let correct = labels.iter().zip(want).filter(|(a, b)| a == b).count();
            (correct, want.len())
        });
        self.records.append(&mut self.pending);
        self.scores.extend_from_slice(&scores);
        if let Some(p) = self.prices.as_mut() {
            let _ = p.charge();
        }
        self.charged += &result.price;
        self.state = BuyerState::Checked;
        Ok(CheckReport { scores, labels, accuracy })
    }

    /// A refused query is dropped and the session returns to where it was.
    pub fn receive_refusal(&mut self, refusal: &Refusal) -> Result<RefusalReason, ProtocolError> {
        if self.state != BuyerState::Queried {
            return Err(self.reject("refusal"));
        }
        self.pin(&refusal.digest, refusal.session_id)?;
        self.pending.clear();
        self.state = self.before_query;
        Ok(refusal.reason)
    }

    pub fn pay(&mut self) -> Result<PaymentNotice, ProtocolError> {
        if self.state != BuyerState::Checked {
            return Err(self.reject("pay"));
        }
        let ann = self.ann();
        let notice = PaymentNotice {
            digest: *ann.digest(),
            session_id: ann.session_id,
            amount: ann.terms.model_price.clone(),
        };
        self.state = BuyerState::Paid;
        Ok(notice)
    }

    pub fn verify(&mut self, delivery: &ModelDelivery) -> Result<VerificationReport, ProtocolError> {
        if self.state != BuyerState::Paid {
            return Err(self.reject("delivery"));
        }
        self.pin(&delivery.digest, delivery.session_id)?;
        let report = verify_delivery(&self.records, &self.scores, &delivery.model, self.policy.tolerance);
        self.state = BuyerState::Verified;
        Ok(report)
    }

    /// Walks away from the trade.
    pub fn decline(&mut self, reason: &str) -> Result<Decline, ProtocolError> {
        if !matches!(self.state, BuyerState::AwaitParams | BuyerState::Keyed | BuyerState::Checked | BuyerState::Closed) {
            return Err(self.reject("decline"));
        }
        let ann = self.announcement.as_ref().ok_or_else(|| self.reject("decline"))?;
        let decline = Decline { digest: *ann.digest(), session_id: ann.session_id, reason: reason.to_string() };
        self.state = BuyerState::Closed;
        Ok(decline)
    }

    pub fn on_message(&mut self, msg: &TradeMessage) -> Result<BuyerEvent, ProtocolError> {
        match (self.state, msg) {
            (BuyerState::AwaitParams, TradeMessage::Announcement(a)) => {
                self.receive_announcement(a).map(BuyerEvent::Params)
            }
            (BuyerState::Queried, TradeMessage::Result(r)) => self.check_result(r, None).map(BuyerEvent::Checked),
            (BuyerState::Queried, TradeMessage::Refusal(r)) => self.receive_refusal(r).map(BuyerEvent::Refused),
            (BuyerState::Paid, TradeMessage::Delivery(d)) => self.verify(d).map(BuyerEvent::Verified),
            (_, m) => Err(self.reject(m.name())),
        }
    }
}
