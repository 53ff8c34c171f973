//! Equation-solving extraction of a linear model through the trading
//! protocol, and a harness measuring when the query budget stops it.
//!
//! A linear score has `d + 1` unknowns, so `d + 1` affine probes pin it down:
//! the zero record gives the bias and `s·e_j` gives `s·w_j + bias`.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use num_rational::BigRational;
use rand::Rng;

use crate::ckks::{CkksContext, CkksParams};
use crate::cli::envelope::{message_from_bytes, message_to_bytes};
use crate::inference::LinearModel;
use crate::protocol::{
    compatible_check, format_amount, BudgetTerms, BuyerEvent, BuyerPolicy, BuyerSession, ModelKind, ProtocolError,
    RefusalReason, SellerConfig, SellerSession, TradeMessage,
};

pub const DEFAULT_PROBE_SCALE: f64 = 100.0;
/// Largest weight error counted as a successful extraction.
pub const RECOVERY_TOLERANCE: f64 = 2e-2;

/// Anything that scores plaintext records, possibly refusing.
pub trait QueryOracle {
    fn feature_names(&self) -> Vec<String>;
    /// Most records accepted in one query.
    fn record_cap(&self) -> usize;
    fn query(&mut self, records: &[Vec<f64>]) -> Result<Vec<f64>, RefusalReason>;
    /// Total charged so far.
    fn cost(&self) -> BigRational;
}

/// A buyer and seller talking through serialized envelopes, exactly as two
/// processes would.
pub struct ProtocolOracle {
    seller: SellerSession,
    buyer: BuyerSession,
    ctx: Arc<CkksContext>,
    cap: usize,
}

impl ProtocolOracle {
    pub fn new(model: LinearModel, params: CkksParams, terms: BudgetTerms, seed: u64) -> Result<Self, ProtocolError> {
        let cap = terms.record_cap;
        let config = SellerConfig { terms, seed, ..SellerConfig::default() };
        let (seller, ann) = SellerSession::create(model, params, config)?;
        let ctx = Arc::clone(seller.context());
        let mut buyer = BuyerSession::new(BuyerPolicy { seed: seed ^ 0x5eed, ..BuyerPolicy::default() });
        let ann = wire(&TradeMessage::Announcement(ann), &ctx)?;
        match buyer.on_message(&ann)? {
            BuyerEvent::Params(v) if v.accepted => {}
            _ => return Err(ProtocolError::BadConfig("buyer rejected the parameters".into())),
        }
        Ok(Self { seller, buyer, ctx, cap })
    }

    pub fn buyer(&self) -> &BuyerSession {
        &self.buyer
    }

    pub fn seller(&self) -> &SellerSession {
        &self.seller
    }
}

fn wire(msg: &TradeMessage, ctx: &Arc<CkksContext>) -> Result<TradeMessage, ProtocolError> {
    message_from_bytes(&message_to_bytes(msg), Some(ctx)).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

impl QueryOracle for ProtocolOracle {
    fn feature_names(&self) -> Vec<String> {
        self.buyer.announcement().map(|a| a.encoding.feature_names.clone()).unwrap_or_default()
    }

    fn record_cap(&self) -> usize {
        self.cap
    }

    fn query(&mut self, records: &[Vec<f64>]) -> Result<Vec<f64>, RefusalReason> {
        let q = self.buyer.prepare_query(records).expect("probe records are well formed");
        let q = wire(&TradeMessage::Query(q), &self.ctx).expect("query survives the wire");
        let reply = self.seller.on_message(&q).expect("seller accepts a well-formed query");
        let reply = wire(&reply.expect("queries are always answered"), &self.ctx).expect("reply survives the wire");
        match self.buyer.on_message(&reply).expect("buyer accepts the reply") {
            BuyerEvent::Checked(report) => Ok(report.scores),
            BuyerEvent::Refused(reason) => Err(reason),
            other => unreachable!("unexpected buyer event {other:?}"),
        }
    }

    fn cost(&self) -> BigRational {
        self.buyer.charged().clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureReason {
    Budget,
    RecordCap,
    MissingKey,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::Budget => "BUDGET",
            FailureReason::RecordCap => "RECORD_CAP",
            FailureReason::MissingKey => "MISSING_KEY",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Recovery {
    Recovered(LinearModel),
    Failure(FailureReason),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackTranscript {
    /// Answered probe records, in order.
    pub probes: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    pub queries: u32,
    pub query_cost: BigRational,
    pub recovered: Recovery,
}

impl AttackTranscript {
    pub fn model(&self) -> Option<&LinearModel> {
        match &self.recovered {
            Recovery::Recovered(m) => Some(m),
            Recovery::Failure(_) => None,
        }
    }
}

/// The `d + 1` probe records: zero, then `probe_scale · e_j`.
pub fn probe_records(d: usize, probe_scale: f64) -> Vec<Vec<f64>> {
    let mut probes = vec![vec![0.0; d]];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = probe_scale;
        probes.push(e);
    }
    probes
}

/// Sends the probes in batches of at most the oracle's record cap and
/// solves for weights and bias by substitution.
pub fn attack_linear<O: QueryOracle>(oracle: &mut O, d: usize, probe_scale: f64) -> AttackTranscript {
    let probes = probe_records(d, probe_scale);
    let batch = oracle.record_cap().max(1);
    let mut answered = Vec::new();
    let mut responses = Vec::new();
    let mut queries = 0;
    let mut failure = None;
    for chunk in probes.chunks(batch) {
        match oracle.query(chunk) {
            Ok(scores) => {
                queries += 1;
                answered.extend_from_slice(chunk);
                responses.extend(scores);
            }
            Err(reason) => {
                failure = Some(match reason {
                    RefusalReason::BudgetExceeded => FailureReason::Budget,
                    RefusalReason::RecordCapExceeded => FailureReason::RecordCap,
                    RefusalReason::MissingGaloisKey => FailureReason::MissingKey,
                });
                break;
            }
        }
    }
    let recovered = match failure {
        Some(reason) => Recovery::Failure(reason),
        None => {
            let bias = responses[0];
            let weights: Vec<f64> = responses[1..].iter().map(|s| (s - bias) / probe_scale).collect();
            let names = oracle.feature_names();
            let block = LinearModel::natural_block_size(d);
            match LinearModel::new(names, weights, bias, block) {
                Ok(m) => Recovery::Recovered(m),
                Err(_) => Recovery::Failure(FailureReason::Budget),
            }
        }
    };
    AttackTranscript { probes: answered, responses, queries, query_cost: oracle.cost(), recovered }
}

/// Largest absolute difference over weights and bias.
pub fn max_weight_error(a: &LinearModel, b: &LinearModel) -> f64 {
    a.weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| (x - y).abs())
        .chain([(a.bias() - b.bias()).abs()])
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefenseReport {
    pub d: usize,
    pub k: u32,
    pub record_cap: usize,
    pub trials: usize,
    /// Trials in which the attack produced any model.
    pub recovered: usize,
    /// Trials whose model was within [`RECOVERY_TOLERANCE`].
    pub successes: usize,
    pub mean_queries: f64,
    pub mean_cost: BigRational,
    pub max_weight_error: f64,
    /// Probe records the budget admits: `k · record_cap`.
    pub capacity: u64,
    /// The query limit alone would stop the attack, the record cap does not.
    pub cap_binding: bool,
    /// Compatibility ratio counting each record as a query.
    pub strict_ratio: f64,
}

impl DefenseReport {
    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    /// `key=value` lines; the same text serves as the summary file.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("d", self.d.to_string());
        kv("k", self.k.to_string());
        kv("record_cap", self.record_cap.to_string());
        kv("capacity", self.capacity.to_string());
        kv("trials", self.trials.to_string());
        kv("recovered", self.recovered.to_string());
        kv("successes", self.successes.to_string());
        kv("success_rate", format!("{}", self.success_rate()));
        kv("mean_queries", format!("{}", self.mean_queries));
        kv("mean_cost", format_amount(&self.mean_cost));
        kv("max_weight_error", format!("{:e}", self.max_weight_error));
        kv("strict_ratio", format!("{}", self.strict_ratio));
        kv("cap_binding", self.cap_binding.to_string());
        if self.cap_binding {
            kv(
                "note",
                format!(
                    "record cap is the binding defense: k={} < d+1={} but k*record_cap={} >= d+1",
                    self.k,
                    self.d + 1,
                    self.capacity
                ),
            );
        }
        out
    }
}

/// Runs the attack against `trials` random models with `d` features behind
/// sessions allowing `k` queries of at most `record_cap` records.
pub fn evaluate_defense<R: Rng + ?Sized>(
    d: usize,
    k: u32,
    record_cap: usize,
    trials: usize,
    rng: &mut R,
) -> Result<DefenseReport, ProtocolError> {
    let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let block = LinearModel::natural_block_size(d);
    let mut successes = 0;
    let mut recovered = 0;
    let mut total_queries = 0u64;
    let mut total_cost = BigRational::from_integer(0.into());
    let mut worst = 0f64;
    for _ in 0..trials {
        let weights = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = LinearModel::new(names.clone(), weights, rng.gen_range(-5.0..5.0), block)?;
        let terms = BudgetTerms { max_queries: k, record_cap, ..BudgetTerms::default() };
        let mut oracle = ProtocolOracle::new(model.clone(), CkksParams::demo(), terms, rng.gen())?;
        let t = attack_linear(&mut oracle, d, DEFAULT_PROBE_SCALE);
        total_queries += u64::from(t.queries);
        total_cost += &t.query_cost;
        if let Some(m) = t.model() {
            recovered += 1;
            let err = max_weight_error(m, &model);
            worst = worst.max(err);
            if err <= RECOVERY_TOLERANCE {
                successes += 1;
            }
        }
    }
    let capacity = u64::from(k) * record_cap as u64;
    let probes_needed = d as u64 + 1;
    let n = trials.max(1);
    Ok(DefenseReport {
        d,
        k,
        record_cap,
        trials,
        recovered,
        successes,
        mean_queries: total_queries as f64 / n as f64,
        mean_cost: total_cost / BigRational::from_integer(n.into()),
        max_weight_error: worst,
        capacity,
        cap_binding: u64::from(k) < probes_needed && capacity >= probes_needed,
        strict_ratio: compatible_check(d as u64, capacity, ModelKind::Linear, 1.0).ratio,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::inference::DEFAULT_FEATURES;

    fn int(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    fn oracle(model: LinearModel, k: u32, cap: usize) -> ProtocolOracle {
        let terms = BudgetTerms { max_queries: k, record_cap: cap, ..BudgetTerms::default() };
        ProtocolOracle::new(model, CkksParams::demo(), terms, 9).unwrap()
    }

    #[test]
    fn probes_layout() {
        let p = probe_records(3, 100.0);
        assert_eq!(p, vec![vec![0.0; 3], vec![100.0, 0.0, 0.0], vec![0.0, 100.0, 0.0], vec![0.0, 0.0, 100.0]]);
    }

    #[test]
    fn batched_probes_recover_appendix_model() {
        let truth = LinearModel::appendix();
        let mut o = oracle(truth.clone(), 1, 7);
        let t = attack_linear(&mut o, 6, DEFAULT_PROBE_SCALE);
        let m = t.model().expect("recovered");
        assert!(max_weight_error(m, &truth) <= RECOVERY_TOLERANCE);
        assert!((m.bias() + 5.329).abs() <= RECOVERY_TOLERANCE);
        assert_eq!(m.feature_names(), truth.feature_names());
        assert_eq!(t.queries, 1);
        assert_eq!(t.probes.len(), 7);
        assert_eq!(t.query_cost, int(1));
    }

    #[test]
    fn one_record_per_query_runs_out_of_budget() {
        let mut o = oracle(LinearModel::appendix(), 4, 1);
        let t = attack_linear(&mut o, 6, DEFAULT_PROBE_SCALE);
        assert_eq!(t.recovered, Recovery::Failure(FailureReason::Budget));
        assert_eq!(t.probes.len(), 4);
        assert_eq!(t.queries, 4);
        assert_eq!(t.query_cost, int(15));
    }

    #[test]
    fn zero_model_recovers_as_zero() {
        let names = DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect();
        let zero = LinearModel::new(names, vec![0.0; 6], 0.0, 8).unwrap();
        let t = attack_linear(&mut oracle(zero.clone(), 1, 256), 6, DEFAULT_PROBE_SCALE);
        assert!(max_weight_error(t.model().unwrap(), &zero) <= RECOVERY_TOLERANCE);
    }

    #[test]
    fn defense_outcomes() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let r = evaluate_defense(6, 3, 1, 2, &mut rng).unwrap();
        assert_eq!((r.recovered, r.successes), (0, 0));
        assert!(!r.cap_binding);
        let r = evaluate_defense(6, 7, 1, 2, &mut rng).unwrap();
        assert_eq!(r.successes, 2);
        assert_eq!(r.mean_cost, int(127));
        assert_eq!(r.mean_queries, 7.0);
        let r = evaluate_defense(6, 1, 256, 2, &mut rng).unwrap();
        assert_eq!(r.successes, 2);
        assert_eq!(r.mean_cost, int(1));
        assert!(r.cap_binding);
        assert!(r.to_text().contains("cap_binding=true\nnote=record cap is the binding defense"));
    }
}
