use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::budget::QueryBudget;
use super::messages::*;
use super::ProtocolError;
use crate::ckks::{CkksContext, CkksError, CkksParams, DEFAULT_FLOOD_BITS};
use crate::inference::{encrypted_linear_eval, LinearModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SellerState {
    Announced,
    Serving,
    AwaitPayment,
    Delivered,
    /// The buyer declined; nothing further is accepted.
    Closed,
}

impl fmt::Display for SellerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug)]
pub struct SellerConfig {
    pub terms: BudgetTerms,
    pub flood_bits: u32,
    pub session_id: u64,
    pub seed: u64,
    /// Shift added to the first weight of the delivered model. Honest
    /// sellers leave this at `None`.
    pub cheat: Option<f64>,
}

impl Default for SellerConfig {
    fn default() -> Self {
        Self { terms: BudgetTerms::default(), flood_bits: DEFAULT_FLOOD_BITS, session_id: 1, seed: 0, cheat: None }
    }
}

pub struct SellerSession {
    ctx: Arc<CkksContext>,
    model: LinearModel,
    announcement: ParamsAnnouncement,
    budget: QueryBudget,
    flood_bits: u32,
    cheat: Option<f64>,
    rng: ChaCha20Rng,
    state: SellerState,
    earned: BigRational,
}

impl fmt::Debug for SellerSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SellerSession")
            .field("state", &self.state)
            .field("spent", &self.budget.spent())
            .finish_non_exhaustive()
    }
}

impl SellerSession {
    /// Sets up a session and the announcement to send first.
    pub fn create(
        model: LinearModel,
        params: CkksParams,
        config: SellerConfig,
    ) -> Result<(Self, ParamsAnnouncement), ProtocolError> {
        let slots = params.slot_count();
        if slots % model.block_size() != 0 {
            return Err(ProtocolError::BadModel(format!(
                "block size {} does not divide {slots} slots",
                model.block_size()
            )));
        }
        if config.terms.record_cap == 0 || config.terms.record_cap > slots / model.block_size() {
            return Err(ProtocolError::BadConfig(format!(
                "record cap {} outside 1..={}",
                config.terms.record_cap,
                slots / model.block_size()
            )));
        }
        if params.max_level() == 0 {
            return Err(ProtocolError::BadConfig("evaluation needs at least two primes".into()));
        }
        let ctx = CkksContext::new(params.clone())?;
        let scale = params.default_scale();
        let final_scale = scale * scale * scale / params.primes()[params.max_level()] as f64;
        if config.flood_bits > 62 || ctx.flood_slot_bound(config.flood_bits, final_scale) > crate::ckks::FLOOD_SLOT_BUDGET {
            return Err(CkksError::FloodOverflow {
                bits: config.flood_bits,
                max_bits: ctx.max_flood_bits(final_scale),
            }
            .into());
        }
        let budget = QueryBudget::new(
            config.terms.max_queries,
            config.terms.price_base.clone(),
            config.terms.price_growth.clone(),
        )?;
        let announcement = ParamsAnnouncement {
            params,
            encoding: EncodingSpec::of(&model),
            terms: config.terms,
            session_id: config.session_id,
        };
        let session = Self {
            ctx,
            model,
            announcement: announcement.clone(),
            budget,
            flood_bits: config.flood_bits,
            cheat: config.cheat,
            rng: ChaCha20Rng::seed_from_u64(config.seed),
            state: SellerState::Announced,
            earned: BigRational::from_integer(0.into()),
        };
        Ok((session, announcement))
    }

    pub fn state(&self) -> SellerState {
        self.state
    }

    pub fn budget(&self) -> &QueryBudget {
        &self.budget
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn announcement(&self) -> &ParamsAnnouncement {
        &self.announcement
    }

    /// Query charges plus any payment received.
    pub fn earned(&self) -> &BigRational {
        &self.earned
    }

    fn pin(&self, digest: &[u8; 32], session_id: u64) -> Result<(), ProtocolError> {
        if digest != self.announcement.digest() {
            return Err(ProtocolError::DigestMismatch);
        }
        if session_id != self.announcement.session_id {
            return Err(ProtocolError::SessionMismatch);
        }
        Ok(())
    }

    fn reject(&self, message: &'static str) -> ProtocolError {
        ProtocolError::StateError { state: self.state.to_string(), message }
    }

    /// Scores one encrypted batch. Only successful evaluations are charged.
    pub fn handle_query(&mut self, q: &TestQuery) -> Result<EvalResult, ProtocolError> {
        if !matches!(self.state, SellerState::Announced | SellerState::Serving) {
            return Err(self.reject("query"));
        }
        self.pin(&q.digest, q.session_id)?;
        if q.ciphertext.digest() != self.announcement.digest() || q.galois_keys.digest() != self.announcement.digest() {
            return Err(ProtocolError::DigestMismatch);
        }
        if self.budget.remaining() == 0 {
            return Err(ProtocolError::BudgetExceeded { spent: self.budget.spent(), max: self.budget.max_queries() });
        }
        let cap = self.announcement.terms.record_cap;
        if q.record_count == 0 || q.record_count > cap {
            return Err(ProtocolError::RecordCapExceeded { count: q.record_count, cap });
        }
        let out = encrypted_linear_eval(&self.ctx, &q.ciphertext, &self.model, q.record_count, &q.galois_keys)?;
        let out = self.ctx.noise_flood(&out, self.flood_bits, &mut self.rng)?;
        let query_index = self.budget.spent();
        let price = self.budget.charge()?;
        self.earned += &price;
        self.state = SellerState::Serving;
        Ok(EvalResult {
            digest: *self.announcement.digest(),
            session_id: self.announcement.session_id,
            query_index,
            flood_bits: self.flood_bits,
            price,
            ciphertext: out,
        })
    }

    /// Stops serving queries; the next step is payment.
    pub fn close_queries(&mut self) -> Result<(), ProtocolError> {
        if self.state != SellerState::Serving {
            return Err(self.reject("close"));
        }
        self.state = SellerState::AwaitPayment;
        Ok(())
    }

    pub fn deliver(&mut self, notice: &PaymentNotice) -> Result<ModelDelivery, ProtocolError> {
        if self.state != SellerState::AwaitPayment {
            return Err(self.reject("payment"));
        }
        self.pin(&notice.digest, notice.session_id)?;
        if notice.amount < self.announcement.terms.model_price {
            return Err(ProtocolError::Underpaid {
                paid: notice.amount.to_string(),
                price: self.announcement.terms.model_price.to_string(),
            });
        }
        self.earned += &notice.amount;
        self.state = SellerState::Delivered;
        let model = match self.cheat {
            Some(delta) => self.model.shift_weight(0, delta),
            None => self.model.clone(),
        };
        Ok(ModelDelivery { digest: *self.announcement.digest(), session_id: self.announcement.session_id, model })
    }

    /// Dispatches an incoming message and returns the reply, if any.
    /// Budget, cap and missing-key problems become a [`Refusal`] reply;
    /// anything else aborts with an error.
    pub fn on_message(&mut self, msg: &TradeMessage) -> Result<Option<TradeMessage>, ProtocolError> {
        match (self.state, msg) {
            (SellerState::Announced | SellerState::Serving, TradeMessage::Query(q)) => match self.handle_query(q) {
                Ok(r) => Ok(Some(TradeMessage::Result(r))),
                Err(e) => match refusal_reason(&e) {
                    Some(reason) => Ok(Some(TradeMessage::Refusal(Refusal {
                        digest: *self.announcement.digest(),
                        session_id: self.announcement.session_id,
                        reason,
                        detail: e.to_string(),
                    }))),
                    None => Err(e),
                },
            },
            (SellerState::Serving | SellerState::AwaitPayment, TradeMessage::Payment(p)) => {
                self.pin(&p.digest, p.session_id)?;
                if self.state == SellerState::Serving {
                    self.close_queries()?;
                }
                Ok(Some(TradeMessage::Delivery(self.deliver(p)?)))
            }
            (SellerState::Announced | SellerState::Serving | SellerState::AwaitPayment, TradeMessage::Decline(d)) => {
                self.pin(&d.digest, d.session_id)?;
                self.state = SellerState::Closed;
                Ok(None)
            }
            (_, m) => Err(self.reject(m.name())),
        }
    }
}

fn refusal_reason(e: &ProtocolError) -> Option<RefusalReason> {
    match e {
        ProtocolError::BudgetExceeded { .. } => Some(RefusalReason::BudgetExceeded),
        ProtocolError::RecordCapExceeded { .. } => Some(RefusalReason::RecordCapExceeded),
        ProtocolError::Inference(crate::inference::InferenceError::Ckks(CkksError::MissingGaloisKey(_))) => {
            Some(RefusalReason::MissingGaloisKey)
        }
        _ => None,
    }
}
