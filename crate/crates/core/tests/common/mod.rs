#![allow(dead_code)]

use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::Duration;

use hetrade::ckks::CkksParams;
use hetrade::inference::{LinearModel, APPENDIX_RECORDS};
use hetrade::protocol::*;

pub fn appendix_records() -> Vec<Vec<f64>> {
    APPENDIX_RECORDS.iter().map(|r| r.to_vec()).collect()
}

pub fn seller(model: LinearModel, config: SellerConfig) -> (SellerSession, ParamsAnnouncement) {
    SellerSession::create(model, CkksParams::demo(), config).unwrap()
}

pub fn keyed_buyer(ann: &ParamsAnnouncement, seed: u64) -> BuyerSession {
    let mut b = BuyerSession::new(BuyerPolicy { seed, ..BuyerPolicy::default() });
    assert!(b.receive_announcement(ann).unwrap().accepted);
    b
}

pub struct Trade {
    pub seller: SellerSession,
    pub buyer: BuyerSession,
}

/// Runs one answered query so both sides can move on to payment.
pub fn trade_until_checked(model: LinearModel, records: &[Vec<f64>], seed: u64) -> Trade {
    let (mut seller, ann) = seller(model, SellerConfig { seed, ..SellerConfig::default() });
    let mut buyer = keyed_buyer(&ann, seed);
    let q = buyer.prepare_query(records).unwrap();
    let r = seller.handle_query(&q).unwrap();
    buyer.check_result(&r, None).unwrap();
    Trade { seller, buyer }
}

/// One instance of every message kind, all from one session.
pub struct Samples {
    pub ann: ParamsAnnouncement,
    pub all: Vec<TradeMessage>,
}

pub fn samples() -> Samples {
    let mut t = trade_until_checked(LinearModel::appendix(), &appendix_records(), 7);
    let ann = t.seller.announcement().clone();
    let q = t.buyer.prepare_query(&appendix_records()[..1]).unwrap();
    let result = t.seller.handle_query(&q).unwrap();
    t.buyer.check_result(&result, None).unwrap();
    let refusal = Refusal {
        digest: *ann.digest(),
        session_id: ann.session_id,
        reason: RefusalReason::BudgetExceeded,
        detail: String::new(),
    };
    let pay = t.buyer.pay().unwrap();
    t.seller.close_queries().unwrap();
    let delivery = t.seller.deliver(&pay).unwrap();
    let decline = Decline { digest: *ann.digest(), session_id: ann.session_id, reason: "no".into() };
    Samples {
        ann: ann.clone(),
        all: vec![
            TradeMessage::Announcement(ann),
            TradeMessage::Query(q),
            TradeMessage::Result(result),
            TradeMessage::Refusal(refusal),
            TradeMessage::Payment(pay),
            TradeMessage::Delivery(delivery),
            TradeMessage::Decline(decline),
        ],
    }
}

pub const SELLER_STATES: [SellerState; 5] = [
    SellerState::Announced,
    SellerState::Serving,
    SellerState::AwaitPayment,
    SellerState::Delivered,
    SellerState::Closed,
];

pub const BUYER_STATES: [BuyerState; 7] = [
    BuyerState::AwaitParams,
    BuyerState::Keyed,
    BuyerState::Queried,
    BuyerState::Checked,
    BuyerState::Paid,
    BuyerState::Verified,
    BuyerState::Closed,
];

pub fn seller_allows(state: SellerState, msg: &str) -> bool {
    use SellerState::*;
    matches!(
        (state, msg),
        (Announced | Serving, "query") | (Serving | AwaitPayment, "payment") | (Announced | Serving | AwaitPayment, "decline")
    )
}

pub fn buyer_allows(state: BuyerState, msg: &str) -> bool {
    use BuyerState::*;
    matches!((state, msg), (AwaitParams, "announcement") | (Queried, "result" | "refusal") | (Paid, "delivery"))
}

pub fn seller_in(state: SellerState, samples: &Samples) -> SellerSession {
    let (mut s, _) = seller(LinearModel::appendix(), SellerConfig::default());
    let query = &samples.all[1];
    match state {
        SellerState::Announced => {}
        SellerState::Serving => {
            s.on_message(query).unwrap();
        }
        SellerState::AwaitPayment => {
            s.on_message(query).unwrap();
            s.close_queries().unwrap();
        }
        SellerState::Delivered => {
            s.on_message(query).unwrap();
            s.on_message(&samples.all[4]).unwrap();
        }
        SellerState::Closed => {
            s.on_message(&samples.all[6]).unwrap();
        }
    }
    assert_eq!(s.state(), state);
    s
}

pub fn buyer_in(state: BuyerState, samples: &Samples) -> BuyerSession {
    let mut b = BuyerSession::new(BuyerPolicy::default());
    let ann = &samples.ann;
    let record = appendix_records()[..1].to_vec();
    let to_query = |b: &mut BuyerSession| {
        b.receive_announcement(ann).unwrap();
        b.prepare_query(&record).unwrap();
    };
    match state {
        BuyerState::AwaitParams => {}
        BuyerState::Keyed => {
            b.receive_announcement(ann).unwrap();
        }
        BuyerState::Queried => to_query(&mut b),
        BuyerState::Checked | BuyerState::Paid | BuyerState::Verified => {
            to_query(&mut b);
            b.on_message(&samples.all[2]).unwrap();
            if state != BuyerState::Checked {
                b.pay().unwrap();
            }
            if state == BuyerState::Verified {
                b.on_message(&samples.all[5]).unwrap();
            }
        }
        BuyerState::Closed => {
            b.receive_announcement(ann).unwrap();
            b.decline("test").unwrap();
        }
    }
    assert_eq!(b.state(), state);
    b
}

// ---- the binary ----

pub fn hetm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hetm"))
}

pub fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

pub struct PairOutput {
    pub seller: Output,
    pub buyer: Output,
}

impl PairOutput {
    pub fn buyer_stdout(&self) -> String {
        String::from_utf8_lossy(&self.buyer.stdout).into_owned()
    }

    pub fn buyer_stderr(&self) -> String {
        String::from_utf8_lossy(&self.buyer.stderr).into_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    Files,
    Socket,
}

/// Runs a seller and a buyer as two processes. The seller listens and the
/// buyer connects in socket mode; both share `work/exchange` in file mode.
pub fn run_pair(link: Link, work: &Path, seller_args: &[&str], buyer_args: &[&str]) -> PairOutput {
    let exchange = work.join("exchange");
    let addr = free_addr();
    let (seller_link, buyer_link): (Vec<String>, Vec<String>) = match link {
        Link::Files => {
            let d = exchange.to_string_lossy().into_owned();
            (vec!["--dir".into(), d.clone()], vec!["--dir".into(), d])
        }
        Link::Socket => (vec!["--listen".into(), addr.clone()], vec!["--connect".into(), addr]),
    };
    let seller = hetm()
        .arg("seller")
        .args(&seller_link)
        .args(seller_args)
        .args(["--timeout", "60"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn seller");
    if link == Link::Socket {
        thread::sleep(Duration::from_millis(50));
    }
    let buyer = hetm()
        .arg("buyer")
        .args(&buyer_link)
        .args(buyer_args)
        .args(["--timeout", "60"])
        .stdin(Stdio::null())
        .output()
        .expect("run buyer");
    let seller = seller.wait_with_output().expect("seller output");
    PairOutput { seller, buyer }
}

/// Value of `key=` in key=value output.
pub fn field(text: &str, key: &str) -> Option<String> {
    let prefix = format!("{key}=");
    text.lines().find_map(|l| l.strip_prefix(&prefix)).map(str::to_string)
}
