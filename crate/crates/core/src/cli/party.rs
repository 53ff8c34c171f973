//! The two processes of a trade, plus the extraction experiment.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::envelope::{message_from_bytes, message_label, message_to_bytes};
use super::transport::{Channel, DirChannel, Recorded, SocketChannel, DEFAULT_TIMEOUT};
use super::{message_step, CliError, ErrorKind, EXIT_OK};
use crate::ckks::{CkksContext, CkksParams, DEFAULT_FLOOD_BITS};
use crate::extraction::{attack_linear, evaluate_defense, max_weight_error, ProtocolOracle, Recovery, DEFAULT_PROBE_SCALE};
use crate::inference::{LinearModel, APPENDIX_LABELS, APPENDIX_RECORDS};
use crate::protocol::{
    format_amount, BudgetTerms, BuyerEvent, BuyerPolicy, BuyerSession, BuyerState, SecurityPolicy, SellerConfig,
    SellerSession, TradeMessage, Verdict, DEFAULT_TOLERANCE,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportSpec {
    Dir(PathBuf),
    Listen(String),
    Connect(String),
}

#[derive(Clone, Debug)]
pub struct SellerOptions {
    pub transport: TransportSpec,
    pub seed: u64,
    pub terms: BudgetTerms,
    pub flood_bits: u32,
    pub cheat: Option<f64>,
    /// Model file in the `feature`/`bias` text format; the reference model
    /// when absent.
    pub model: Option<PathBuf>,
    pub timeout: Duration,
    pub transcript: Option<PathBuf>,
}

impl SellerOptions {
    pub fn new(transport: TransportSpec) -> Self {
        Self {
            transport,
            seed: 0,
            terms: BudgetTerms::default(),
            flood_bits: DEFAULT_FLOOD_BITS,
            cheat: None,
            model: None,
            timeout: DEFAULT_TIMEOUT,
            transcript: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuyerOptions {
    pub transport: TransportSpec,
    pub seed: u64,
    pub security: SecurityPolicy,
    pub max_price: Option<BigRational>,
    pub tolerance: f64,
    /// Test queries to send before paying.
    pub queries: u32,
    pub timeout: Duration,
    pub transcript: Option<PathBuf>,
}

impl BuyerOptions {
    pub fn new(transport: TransportSpec) -> Self {
        Self {
            transport,
            seed: 0,
            security: SecurityPolicy::Standard,
            max_price: None,
            tolerance: DEFAULT_TOLERANCE,
            queries: 1,
            timeout: DEFAULT_TIMEOUT,
            transcript: None,
        }
    }
}

fn open_channel(spec: &TransportSpec, timeout: Duration, transcript: Option<&PathBuf>) -> Result<Box<dyn Channel>, CliError> {
    let inner: Box<dyn Channel> = match spec {
        TransportSpec::Dir(dir) => Box::new(DirChannel::new(dir, timeout)?),
        TransportSpec::Listen(addr) => Box::new(SocketChannel::listen(addr, timeout)?),
        TransportSpec::Connect(addr) => Box::new(SocketChannel::connect(addr, timeout)?),
    };
    Ok(match transcript {
        Some(dir) => Box::new(Recorded::new(inner, dir, message_label)?),
        None => inner,
    })
}

impl Channel for Box<dyn Channel> {
    fn send(&mut self, name: &str, bytes: &[u8]) -> Result<(), super::transport::TransportError> {
        (**self).send(name, bytes)
    }

    fn recv(&mut self) -> Result<Vec<u8>, super::transport::TransportError> {
        (**self).recv()
    }
}

fn send(ch: &mut dyn Channel, msg: &TradeMessage) -> Result<(), CliError> {
    let bytes = message_to_bytes(msg);
    ch.send(message_label(&bytes), &bytes)?;
    Ok(())
}

fn recv(ch: &mut dyn Channel, ctx: Option<&Arc<CkksContext>>) -> Result<TradeMessage, CliError> {
    let bytes = ch.recv()?;
    let label = message_label(&bytes);
    message_from_bytes(&bytes, ctx).map_err(|e| CliError::at_step(message_step(label), e))
}

fn banner(out: &mut dyn Write, company: char, step: &str) -> Result<(), CliError> {
    writeln!(out, "\n============Company {company}============\n\n{step}\n")?;
    Ok(())
}

/// Serves one buyer until the model is delivered or the buyer declines.
pub fn seller_main(opts: &SellerOptions, out: &mut dyn Write) -> Result<i32, CliError> {
    let model = match &opts.model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            LinearModel::parse(&text).map_err(CliError::config)?
        }
        None => LinearModel::appendix(),
    };
    let config = SellerConfig {
        terms: opts.terms.clone(),
        flood_bits: opts.flood_bits,
        seed: opts.seed,
        cheat: opts.cheat,
        ..SellerConfig::default()
    };
    if let TransportSpec::Dir(dir) = &opts.transport {
        let stale = fs::read_dir(dir)
            .map(|entries| entries.flatten().any(|e| e.file_name().to_string_lossy().starts_with("msg-")))
            .unwrap_or(false);
        if stale {
            return Err(CliError::config(format!("{} holds messages from an earlier run", dir.display())));
        }
    }
    let (mut session, ann) = SellerSession::create(model, CkksParams::demo(), config)?;
    let ctx = Arc::clone(session.context());
    banner(out, 'A', "Step 1. Parameter Setting")?;
    write!(out, "{}", ann.to_text())?;

    let mut ch = open_channel(&opts.transport, opts.timeout, opts.transcript.as_ref())?;
    writeln!(out, "\nStep 2. Send B parameters & data encoding format")?;
    send(&mut *ch, &TradeMessage::Announcement(ann))?;

    loop {
        let msg = recv(&mut *ch, Some(&ctx))?;
        let step = message_step(msg.name());
        match &msg {
            TradeMessage::Query(q) => banner(
                out,
                'A',
                &format!("Step 6. Compute the ML Algorithm Homomorphically on {} Encrypted Records", q.record_count),
            )?,
            TradeMessage::Payment(p) => {
                banner(out, 'A', &format!("Step 10. Send the Model to B (paid {})", format_amount(&p.amount)))?
            }
            _ => {}
        }
        let reply = session.on_message(&msg).map_err(|e| CliError::at_step(step, e))?;
        match reply {
            Some(reply) => {
                match &reply {
                    TradeMessage::Result(r) => writeln!(
                        out,
                        "\nStep 7. Send B the Result (query {}, price {}, flood {} bits)",
                        r.query_index,
                        format_amount(&r.price),
                        r.flood_bits
                    )?,
                    TradeMessage::Refusal(r) => writeln!(out, " refused: {} ({})", r.reason, r.detail)?,
                    _ => {}
                }
                send(&mut *ch, &reply)?;
                if matches!(reply, TradeMessage::Delivery(_)) {
                    writeln!(out, " model delivered, earned {}", format_amount(session.earned()))?;
                    return Ok(EXIT_OK);
                }
            }
            None => {
                if let TradeMessage::Decline(d) = &msg {
                    writeln!(out, " buyer declined: {}", d.reason)?;
                }
                return Ok(EXIT_OK);
            }
        }
    }
}

/// Runs the buyer side. A delivered model that fails the check against the
/// retained scores is a verify error, exit code [`super::EXIT_CHEATED`].
pub fn buyer_main(opts: &BuyerOptions, out: &mut dyn Write) -> Result<i32, CliError> {
    let policy = BuyerPolicy::new(opts.security, opts.max_price.clone(), opts.tolerance, opts.seed)?;
    let mut buyer = BuyerSession::new(policy);
    let mut ch = open_channel(&opts.transport, opts.timeout, opts.transcript.as_ref())?;

    let ann = recv(&mut *ch, None)?;
    banner(out, 'B', "Step 3. Key Generation")?;
    let verdict = match buyer.on_message(&ann).map_err(|e| CliError::at_step(2, e))? {
        BuyerEvent::Params(v) => v,
        other => unreachable!("announcement produced {other:?}"),
    };
    writeln!(out, " parameters: {}", verdict.reason)?;
    if !verdict.accepted {
        let decline = buyer.decline(&verdict.reason)?;
        send(&mut *ch, &TradeMessage::Decline(decline))?;
        return Err(CliError::at_step(3, format!("parameters rejected: {}", verdict.reason)));
    }
    let ctx = Arc::clone(buyer.context().expect("keyed after accepted parameters"));

    let records: Vec<Vec<f64>> = APPENDIX_RECORDS.iter().map(|r| r.to_vec()).collect();
    for _ in 0..opts.queries {
        if !buyer.affordable() {
            let price = buyer.next_price().map(|p| format_amount(&p)).unwrap_or_default();
            if buyer.state() == BuyerState::Checked {
                writeln!(out, " next query costs {price}, above the limit; no more queries")?;
                break;
            }
            let reason = format!("next query costs {price}, above the limit");
            let decline = buyer.decline(&reason)?;
            send(&mut *ch, &TradeMessage::Decline(decline))?;
            writeln!(out, "DECLINED: {reason}")?;
            return Ok(EXIT_OK);
        }
        writeln!(out, "\nStep 4. Encode & Encrypt Test Data")?;
        let query = buyer.prepare_query(&records).map_err(|e| CliError::at_step(4, e))?;
        writeln!(out, "\nStep 5. Send A Evaluation Keys & Encrypted Test Data")?;
        send(&mut *ch, &TradeMessage::Query(query))?;

        let reply = recv(&mut *ch, Some(&ctx))?;
        let step = message_step(reply.name());
        match &reply {
            TradeMessage::Result(r) => {
                banner(out, 'B', "Step 8. Decrypt the Result & Check the Quality of the Model")?;
                let report = buyer.check_result(r, Some(&APPENDIX_LABELS)).map_err(|e| CliError::at_step(step, e))?;
                let scores: Vec<String> = report.scores.iter().map(f64::to_string).collect();
                let labels: Vec<String> = report.labels.iter().map(u8::to_string).collect();
                writeln!(out, "Results: {}", scores.join("   &   "))?;
                writeln!(out, "Predicted Labels: {}", labels.join("   &   "))?;
                writeln!(out, "True Labels: {}   &   {}", APPENDIX_LABELS[0], APPENDIX_LABELS[1])?;
                if let Some((ok, total)) = report.accuracy {
                    writeln!(out, "Accuracy: {ok}/{total}")?;
                }
            }
            TradeMessage::Refusal(_) => {
                let reason = match buyer.on_message(&reply).map_err(|e| CliError::at_step(step, e))? {
                    BuyerEvent::Refused(r) => r,
                    other => unreachable!("refusal produced {other:?}"),
                };
                writeln!(out, " query refused: {reason}")?;
                break;
            }
            other => return Err(CliError::at_step(step, format!("unexpected {} while awaiting a result", other.name()))),
        }
    }
    if buyer.state() != BuyerState::Checked {
        let decline = buyer.decline("no query was answered")?;
        send(&mut *ch, &TradeMessage::Decline(decline))?;
        return Err(CliError::at_step(7, "no query was answered"));
    }

    writeln!(out, "\nStep 9. If the Quality seems Okay, Send Money to A.")?;
    let payment = buyer.pay()?;
    send(&mut *ch, &TradeMessage::Payment(payment))?;

    let delivery = recv(&mut *ch, Some(&ctx))?;
    banner(out, 'B', "Step 11. Compute the true result and check if A really gave a promised model")?;
    let report = match buyer.on_message(&delivery).map_err(|e| CliError::at_step(10, e))? {
        BuyerEvent::Verified(r) => r,
        other => unreachable!("delivery produced {other:?}"),
    };
    write!(out, "{}", report.to_text())?;
    writeln!(out, "{}", report.verdict)?;
    match report.verdict {
        Verdict::Honest => Ok(EXIT_OK),
        Verdict::Cheated => Err(CliError::new(
            ErrorKind::Verify,
            format!(
                "step 11: CHEATED, max deviation {} exceeds tolerance {}",
                report.max_deviation(),
                report.tolerance
            ),
        )),
    }
}

#[derive(Clone, Debug)]
pub struct ExtractOptions {
    pub seed: u64,
    pub queries: u32,
    pub record_cap: usize,
    pub trials: usize,
    pub summary: Option<PathBuf>,
}

/// Attacks the reference model once, then measures the defense over random
/// models with the same shape.
pub fn extract_main(opts: &ExtractOptions, out: &mut dyn Write) -> Result<i32, CliError> {
    if opts.record_cap == 0 {
        return Err(CliError::config("record cap must be positive"));
    }
    let truth = LinearModel::appendix();
    let d = truth.dimension();
    let terms = BudgetTerms { max_queries: opts.queries, record_cap: opts.record_cap, ..BudgetTerms::default() };
    let mut oracle = ProtocolOracle::new(truth.clone(), CkksParams::demo(), terms, opts.seed)?;
    let t = attack_linear(&mut oracle, d, DEFAULT_PROBE_SCALE);
    writeln!(out, "attack queries={} probes={} cost={}", t.queries, t.probes.len(), format_amount(&t.query_cost))?;
    match t.model() {
        Some(m) => {
            writeln!(out, "attack RECOVERED max_weight_error={:e}", max_weight_error(m, &truth))?;
            write!(out, "{}", m.to_text())?;
        }
        None => {
            if let Recovery::Failure(reason) = &t.recovered {
                writeln!(out, "attack FAILURE {reason}")?;
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let report = evaluate_defense(d, opts.queries, opts.record_cap, opts.trials, &mut rng)?;
    let text = report.to_text();
    write!(out, "{text}")?;
    if let Some(path) = &opts.summary {
        fs::write(path, &text).map_err(|e| CliError::new(ErrorKind::Config, format!("{}: {e}", path.display())))?;
    }
    Ok(EXIT_OK)
}
