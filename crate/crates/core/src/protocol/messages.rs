use std::fmt::Write as _;

use num_rational::BigRational;

use super::budget::{format_amount, parse_amount};
use super::ProtocolError;
use crate::ckks::{Ciphertext, CkksParams, GaloisKeys, ParamsDigest};
use crate::inference::LinearModel;

/// How buyers must lay out records: feature order and block size. Results
/// are always masked to the first slot of each block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingSpec {
    pub feature_names: Vec<String>,
    pub block_size: usize,
}

impl EncodingSpec {
    pub fn of(model: &LinearModel) -> Self {
        Self { feature_names: model.feature_names().to_vec(), block_size: model.block_size() }
    }
}

/// Commercial terms the seller commits to up front.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetTerms {
    pub max_queries: u32,
    pub record_cap: usize,
    pub price_base: BigRational,
    pub price_growth: BigRational,
    pub model_price: BigRational,
}

impl Default for BudgetTerms {
    fn default() -> Self {
        Self {
            max_queries: 4,
            record_cap: 256,
            price_base: BigRational::from_integer(1.into()),
            price_growth: BigRational::from_integer(2.into()),
            model_price: BigRational::from_integer(100.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsAnnouncement {
    pub params: CkksParams,
    pub encoding: EncodingSpec,
    pub terms: BudgetTerms,
    pub session_id: u64,
}

impl ParamsAnnouncement {
    pub fn digest(&self) -> &ParamsDigest {
        self.params.digest()
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let bits: Vec<String> = p.prime_bit_lens().iter().map(u32::to_string).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("n", p.degree().to_string());
        kv("prime_bits", bits.join(","));
        kv("scale_log2", p.scale_log2().to_string());
        kv("sigma", p.sigma().to_string());
        kv("ks_base_log", p.ks_base_log().to_string());
        kv("block", self.encoding.block_size.to_string());
        kv("features", self.encoding.feature_names.join(","));
        kv("digest", hex(p.digest()));
        kv("session", self.session_id.to_string());
        kv("queries", self.terms.max_queries.to_string());
        kv("record_cap", self.terms.record_cap.to_string());
        kv("price_base", format_amount(&self.terms.price_base));
        kv("price_growth", format_amount(&self.terms.price_growth));
        kv("model_price", format_amount(&self.terms.model_price));
        out
    }

    /// Parses [`to_text`](Self::to_text) output; the digest line must match
    /// the parameters it describes.
    pub fn from_text(text: &str) -> Result<Self, ProtocolError> {
        let map = parse_kv(text)?;
        let get = |k: &str| {
            map.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| ProtocolError::Malformed(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<u64, ProtocolError> {
            get(k)?.parse().map_err(|_| ProtocolError::Malformed(format!("bad value for {k}")))
        };
        let amount = |k: &str| {
            parse_amount(get(k)?).ok_or_else(|| ProtocolError::Malformed(format!("bad amount for {k}")))
        };
        let bits = get("prime_bits")?
            .split(',')
            .map(|b| b.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ProtocolError::Malformed("bad prime_bits".into()))?;
        let scale_log2: i32 =
            get("scale_log2")?.parse().map_err(|_| ProtocolError::Malformed("bad scale_log2".into()))?;
        let sigma: f64 = get("sigma")?.parse().map_err(|_| ProtocolError::Malformed("bad sigma".into()))?;
        let params = CkksParams::new(num("n")? as usize, &bits, scale_log2, sigma, num("ks_base_log")? as u32)?;
        if hex(params.digest()) != get("digest")? {
            return Err(ProtocolError::DigestMismatch);
        }
        let features = get("features")?;
        let encoding = EncodingSpec {
            feature_names: features.split(',').map(str::to_string).collect(),
            block_size: num("block")? as usize,
        };
        if !encoding.block_size.is_power_of_two() || features.is_empty() {
            return Err(ProtocolError::Malformed("bad encoding spec".into()));
        }
        Ok(Self {
            params,
            encoding,
            terms: BudgetTerms {
                max_queries: num("queries")? as u32,
                record_cap: num("record_cap")? as usize,
                price_base: amount("price_base")?,
                price_growth: amount("price_growth")?,
                model_price: amount("model_price")?,
            },
            session_id: num("session")?,
        })
    }
}

pub(crate) fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ProtocolError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| ProtocolError::Malformed(format!("not a key=value line: {l:?}")))
        })
        .collect()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Encrypted records plus the rotation keys needed to score them.
#[derive(Clone, Debug, PartialEq)]
pub struct TestQuery {
    pub digest: ParamsDigest,
    pub session_id: u64,
    pub record_count: usize,
    pub galois_keys: GaloisKeys,
    pub ciphertext: Ciphertext,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub digest: ParamsDigest,
    pub session_id: u64,
    pub query_index: u32,
    pub flood_bits: u32,
    pub price: BigRational,
    pub ciphertext: Ciphertext,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefusalReason {
    BudgetExceeded,
    RecordCapExceeded,
    MissingGaloisKey,
}

impl RefusalReason {
    pub fn code(self) -> u8 {
        match self {
            RefusalReason::BudgetExceeded => 1,
            RefusalReason::RecordCapExceeded => 2,
            RefusalReason::MissingGaloisKey => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(RefusalReason::BudgetExceeded),
            2 => Some(RefusalReason::RecordCapExceeded),
            3 => Some(RefusalReason::MissingGaloisKey),
            _ => None,
        }
    }
}

impl std::fmt::Display for RefusalReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RefusalReason::BudgetExceeded => "BUDGET",
            RefusalReason::RecordCapExceeded => "RECORD_CAP",
            RefusalReason::MissingGaloisKey => "MISSING_KEY",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refusal {
    pub digest: ParamsDigest,
    pub session_id: u64,
    pub reason: RefusalReason,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaymentNotice {
    pub digest: ParamsDigest,
    pub session_id: u64,
    pub amount: BigRational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelDelivery {
    pub digest: ParamsDigest,
    pub session_id: u64,
    pub model: LinearModel,
}

/// The buyer walks away, e.g. over price or parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Decline {
    pub digest: ParamsDigest,
    pub session_id: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TradeMessage {
    Announcement(ParamsAnnouncement),
    Query(TestQuery),
    Result(EvalResult),
    Refusal(Refusal),
    Payment(PaymentNotice),
    Delivery(ModelDelivery),
    Decline(Decline),
}

impl TradeMessage {
    pub fn name(&self) -> &'static str {
        match self {
            TradeMessage::Announcement(_) => "announcement",
            TradeMessage::Query(_) => "query",
            TradeMessage::Result(_) => "result",
            TradeMessage::Refusal(_) => "refusal",
            TradeMessage::Payment(_) => "payment",
            TradeMessage::Delivery(_) => "delivery",
            TradeMessage::Decline(_) => "decline",
        }
    }

    pub fn digest(&self) -> &ParamsDigest {
        match self {
            TradeMessage::Announcement(m) => m.digest(),
            TradeMessage::Query(m) => &m.digest,
            TradeMessage::Result(m) => &m.digest,
            TradeMessage::Refusal(m) => &m.digest,
            TradeMessage::Payment(m) => &m.digest,
            TradeMessage::Delivery(m) => &m.digest,
            TradeMessage::Decline(m) => &m.digest,
        }
    }

    pub fn session_id(&self) -> u64 {
        match self {
            TradeMessage::Announcement(m) => m.session_id,
            TradeMessage::Query(m) => m.session_id,
            TradeMessage::Result(m) => m.session_id,
            TradeMessage::Refusal(m) => m.session_id,
            TradeMessage::Payment(m) => m.session_id,
            TradeMessage::Delivery(m) => m.session_id,
            TradeMessage::Decline(m) => m.session_id,
        }
    }
}
