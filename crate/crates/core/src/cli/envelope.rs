//! Binary framing for everything that crosses a process boundary.
//!
//! ```text
//! "HETM" | version u8 | kind u8 | digest [32] | payload_len u64 LE | payload
//! ```
//!
//! Integers are little-endian. Polynomials are written prime-major, one u64
//! per coefficient. Reals are split into an odd mantissa (u64) and a binary
//! exponent (i32). Nested objects (keys and ciphertexts inside protocol
//! messages) are embedded as complete envelopes with a u64 length prefix.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::ckks::{join_real, split_real, Ciphertext, CkksContext, CkksParams, GaloisKey, GaloisKeys, ParamsDigest};
use crate::inference::LinearModel;
use crate::protocol::{
    format_amount, parse_amount, Decline, EvalResult, ModelDelivery, ParamsAnnouncement, PaymentNotice, Refusal,
    RefusalReason, TestQuery, TradeMessage,
};
use crate::ring::{Domain, RingPoly};

pub const MAGIC: [u8; 4] = *b"HETM";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 32 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Params = 0x01,
    GaloisKeys = 0x02,
    Ciphertext = 0x03,
    Model = 0x04,
    Message = 0x05,
}

impl Kind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Kind::Params,
            0x02 => Kind::GaloisKeys,
            0x03 => Kind::Ciphertext,
            0x04 => Kind::Model,
            0x05 => Kind::Message,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("expected kind {expected:#04x}, found {found:#04x}")]
    KindMismatch { expected: u8, found: u8 },
    #[error("parameter digest mismatch")]
    DigestMismatch,
    #[error("truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("malformed payload: {0}")]
    Malformed(String),
}

fn malformed(e: impl std::fmt::Display) -> EnvelopeError {
    EnvelopeError::Malformed(e.to_string())
}

pub fn wrap(kind: Kind, digest: &ParamsDigest, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(kind as u8);
    out.extend_from_slice(digest);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Header fields of an envelope whose framing has been validated.
#[derive(Debug, PartialEq)]
pub struct Opened<'a> {
    pub kind: Kind,
    pub digest: ParamsDigest,
    pub payload: &'a [u8],
}

/// Validates framing in order: magic, version, kind, digest (when
/// `expected_digest` is given), then length. Trailing bytes are rejected.
pub fn open<'a>(
    bytes: &'a [u8],
    expected_kind: Kind,
    expected_digest: Option<&ParamsDigest>,
) -> Result<Opened<'a>, EnvelopeError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(EnvelopeError::Truncated { needed: n, available: bytes.len() })
        } else {
            Ok(())
        }
    };
    need(4)?;
    if bytes[..4] != MAGIC {
        return Err(EnvelopeError::BadMagic);
    }
    need(5)?;
    if bytes[4] != VERSION {
        return Err(EnvelopeError::BadVersion(bytes[4]));
    }
    need(6)?;
    if bytes[5] != expected_kind as u8 {
        return Err(EnvelopeError::KindMismatch { expected: expected_kind as u8, found: bytes[5] });
    }
    need(38)?;
    let digest: ParamsDigest = bytes[6..38].try_into().expect("32 bytes");
    if expected_digest.is_some_and(|d| *d != digest) {
        return Err(EnvelopeError::DigestMismatch);
    }
    need(HEADER_LEN)?;
    let len = u64::from_le_bytes(bytes[38..46].try_into().expect("8 bytes"));
    let total = usize::try_from(len).ok().and_then(|l| l.checked_add(HEADER_LEN)).unwrap_or(usize::MAX);
    need(total)?;
    if bytes.len() > total {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - total)));
    }
    Ok(Opened { kind: expected_kind, digest, payload: &bytes[HEADER_LEN..total] })
}

/// Kind byte of an envelope, without further validation.
pub fn peek_kind(bytes: &[u8]) -> Option<Kind> {
    bytes.get(5).copied().and_then(Kind::from_byte)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], EnvelopeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(EnvelopeError::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, EnvelopeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, EnvelopeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, EnvelopeError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EnvelopeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_u64(&mut self) -> Result<usize, EnvelopeError> {
        usize::try_from(self.u64()?).map_err(malformed)
    }

    fn text(&mut self) -> Result<String, EnvelopeError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(malformed)
    }

    fn finish(self) -> Result<(), EnvelopeError> {
        if self.pos != self.buf.len() {
            return Err(malformed(format!("{} unread bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_nested(out: &mut Vec<u8>, env: &[u8]) {
    out.extend_from_slice(&(env.len() as u64).to_le_bytes());
    out.extend_from_slice(env);
}

fn put_poly(out: &mut Vec<u8>, p: &RingPoly) {
    for limb in p.limbs() {
        for c in limb {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
}

fn read_poly(r: &mut Reader, ctx: &CkksContext, level: usize, domain: Domain) -> Result<RingPoly, EnvelopeError> {
    let n = ctx.params().degree();
    let mut limbs = Vec::with_capacity(level + 1);
    for _ in 0..=level {
        let raw = r.take(8 * n)?;
        limbs.push(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    RingPoly::from_limbs(ctx.ring(), limbs, domain).map_err(malformed)
}

// ---- parameters ----

pub fn params_to_bytes(p: &CkksParams) -> Vec<u8> {
    wrap(Kind::Params, p.digest(), &p.canonical_bytes())
}

/// The digest in the header must equal the digest of the decoded parameters.
pub fn params_from_bytes(bytes: &[u8]) -> Result<CkksParams, EnvelopeError> {
    let env = open(bytes, Kind::Params, None)?;
    let p = CkksParams::from_canonical_bytes(env.payload).map_err(malformed)?;
    if *p.digest() != env.digest {
        return Err(EnvelopeError::DigestMismatch);
    }
    Ok(p)
}

// ---- ciphertexts ----

pub fn ciphertext_payload_len(degree: usize, level: usize) -> usize {
    16 + 2 * (level + 1) * degree * 8
}

pub fn ciphertext_to_bytes(ct: &Ciphertext) -> Vec<u8> {
    let mut p = Vec::with_capacity(ciphertext_payload_len(ct.c0().degree(), ct.level()));
    p.extend_from_slice(&(ct.level() as u32).to_le_bytes());
    let (m, e) = split_real(ct.scale());
    p.extend_from_slice(&m.to_le_bytes());
    p.extend_from_slice(&e.to_le_bytes());
    put_poly(&mut p, ct.c0());
    put_poly(&mut p, ct.c1());
    wrap(Kind::Ciphertext, ct.digest(), &p)
}

pub fn ciphertext_from_bytes(bytes: &[u8], ctx: &CkksContext) -> Result<Ciphertext, EnvelopeError> {
    let env = open(bytes, Kind::Ciphertext, Some(ctx.digest()))?;
    let mut r = Reader::new(env.payload);
    let level = r.u32()? as usize;
    if level > ctx.params().max_level() {
        return Err(malformed(format!("level {level} above the chain")));
    }
    let scale = join_real(r.u64()?, r.i32()?);
    let c0 = read_poly(&mut r, ctx, level, Domain::Coeff)?;
    let c1 = read_poly(&mut r, ctx, level, Domain::Coeff)?;
    r.finish()?;
    Ciphertext::from_parts(ctx, c0, c1, scale).map_err(malformed)
}

// ---- galois keys ----

pub fn galois_keys_to_bytes(gk: &GaloisKeys) -> Vec<u8> {
    let mut p = Vec::new();
    p.extend_from_slice(&(gk.len() as u32).to_le_bytes());
    for key in gk.iter() {
        p.extend_from_slice(&(key.step() as u32).to_le_bytes());
        p.extend_from_slice(&(key.element() as u32).to_le_bytes());
        p.extend_from_slice(&(key.digits_per_limb().len() as u32).to_le_bytes());
        for &d in key.digits_per_limb() {
            p.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for (a, b) in key.parts() {
            put_poly(&mut p, a);
            put_poly(&mut p, b);
        }
    }
    wrap(Kind::GaloisKeys, gk.digest(), &p)
}

pub fn galois_keys_from_bytes(bytes: &[u8], ctx: &CkksContext) -> Result<GaloisKeys, EnvelopeError> {
    let env = open(bytes, Kind::GaloisKeys, Some(ctx.digest()))?;
    let mut r = Reader::new(env.payload);
    let top = ctx.params().max_level();
    let count = r.u32()? as usize;
    let mut keys = BTreeMap::new();
    for _ in 0..count {
        let step = r.u32()? as usize;
        let element = r.u32()? as usize;
        if step == 0 || step >= ctx.params().slot_count() {
            return Err(malformed(format!("rotation step {step}")));
        }
        if element != crate::ckks::galois_element(step, ctx.params().degree()) {
            return Err(malformed(format!("galois element {element} does not match step {step}")));
        }
        let limbs = r.u32()? as usize;
        let digits: Vec<usize> = (0..limbs).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
        if digits != crate::ckks::digits_for(ctx) {
            return Err(malformed("decomposition does not match parameters"));
        }
        let total: usize = digits.iter().sum();
        let mut parts = Vec::with_capacity(total);
        for _ in 0..total {
            let a = read_poly(&mut r, ctx, top, Domain::Eval)?;
            let b = read_poly(&mut r, ctx, top, Domain::Eval)?;
            parts.push((a, b));
        }
        if keys.insert(step, GaloisKey { step, element, digits, parts }).is_some() {
            return Err(malformed(format!("duplicate step {step}")));
        }
    }
    r.finish()?;
    Ok(GaloisKeys { keys, digest: *ctx.digest() })
}

// ---- models ----

/// Block size then the line-based model text.
pub fn model_to_bytes(m: &LinearModel, digest: &ParamsDigest) -> Vec<u8> {
    let mut p = Vec::new();
    p.extend_from_slice(&(m.block_size() as u32).to_le_bytes());
    put_text(&mut p, &m.to_text());
    wrap(Kind::Model, digest, &p)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(LinearModel, ParamsDigest), EnvelopeError> {
    let env = open(bytes, Kind::Model, None)?;
    let mut r = Reader::new(env.payload);
    let block = r.u32()? as usize;
    let parsed = LinearModel::parse(&r.text()?).map_err(malformed)?;
    r.finish()?;
    let m = LinearModel::new(parsed.feature_names().to_vec(), parsed.weights().to_vec(), parsed.bias(), block)
        .map_err(malformed)?;
    Ok((m, env.digest))
}

// ---- protocol messages ----

const TAG_ANNOUNCEMENT: u8 = 1;
const TAG_QUERY: u8 = 2;
const TAG_RESULT: u8 = 3;
const TAG_REFUSAL: u8 = 4;
const TAG_PAYMENT: u8 = 5;
const TAG_DELIVERY: u8 = 6;
const TAG_DECLINE: u8 = 7;

pub fn message_to_bytes(msg: &TradeMessage) -> Vec<u8> {
    let mut p = Vec::new();
    let session = msg.session_id().to_le_bytes();
    match msg {
        TradeMessage::Announcement(a) => {
            p.push(TAG_ANNOUNCEMENT);
            put_text(&mut p, &a.to_text());
        }
        TradeMessage::Query(q) => {
            p.push(TAG_QUERY);
            p.extend_from_slice(&session);
            p.extend_from_slice(&(q.record_count as u64).to_le_bytes());
            put_nested(&mut p, &galois_keys_to_bytes(&q.galois_keys));
            put_nested(&mut p, &ciphertext_to_bytes(&q.ciphertext));
        }
        TradeMessage::Result(r) => {
            p.push(TAG_RESULT);
            p.extend_from_slice(&session);
            p.extend_from_slice(&r.query_index.to_le_bytes());
            p.extend_from_slice(&r.flood_bits.to_le_bytes());
            put_text(&mut p, &format_amount(&r.price));
            put_nested(&mut p, &ciphertext_to_bytes(&r.ciphertext));
        }
        TradeMessage::Refusal(r) => {
            p.push(TAG_REFUSAL);
            p.extend_from_slice(&session);
            p.push(r.reason.code());
            put_text(&mut p, &r.detail);
        }
        TradeMessage::Payment(pay) => {
            p.push(TAG_PAYMENT);
            p.extend_from_slice(&session);
            put_text(&mut p, &format_amount(&pay.amount));
        }
        TradeMessage::Delivery(d) => {
            p.push(TAG_DELIVERY);
            p.extend_from_slice(&session);
            put_nested(&mut p, &model_to_bytes(&d.model, &d.digest));
        }
        TradeMessage::Decline(d) => {
            p.push(TAG_DECLINE);
            p.extend_from_slice(&session);
            put_text(&mut p, &d.reason);
        }
    }
    wrap(Kind::Message, msg.digest(), &p)
}

/// Short label of an encoded message, read from its tag without parsing the
/// rest. Used for file names.
pub fn message_label(bytes: &[u8]) -> &'static str {
    match bytes.get(HEADER_LEN).copied() {
        Some(TAG_ANNOUNCEMENT) => "params",
        Some(TAG_QUERY) => "query",
        Some(TAG_RESULT) => "result",
        Some(TAG_REFUSAL) => "refusal",
        Some(TAG_PAYMENT) => "payment",
        Some(TAG_DELIVERY) => "delivery",
        Some(TAG_DECLINE) => "decline",
        _ => "unknown",
    }
}

/// Decodes a protocol message. Everything but an announcement needs the
/// session's context, whose digest the envelope must carry.
pub fn message_from_bytes(bytes: &[u8], ctx: Option<&Arc<CkksContext>>) -> Result<TradeMessage, EnvelopeError> {
    let env = open(bytes, Kind::Message, ctx.map(|c| c.digest()))?;
    let digest = env.digest;
    let mut r = Reader::new(env.payload);
    let tag = r.u8()?;
    if tag == TAG_ANNOUNCEMENT {
        let a = ParamsAnnouncement::from_text(&r.text()?).map_err(malformed)?;
        r.finish()?;
        if *a.digest() != digest {
            return Err(EnvelopeError::DigestMismatch);
        }
        return Ok(TradeMessage::Announcement(a));
    }
    let ctx = ctx.ok_or_else(|| malformed("message before parameters were agreed"))?;
    let session_id = r.u64()?;
    let amount = |s: String| parse_amount(&s).ok_or_else(|| malformed(format!("bad amount {s:?}")));
    let msg = match tag {
        TAG_QUERY => {
            let record_count = r.len_u64()?;
            let n = r.len_u64()?;
            let galois_keys = galois_keys_from_bytes(r.take(n)?, ctx)?;
            let n = r.len_u64()?;
            let ciphertext = ciphertext_from_bytes(r.take(n)?, ctx)?;
            TradeMessage::Query(TestQuery { digest, session_id, record_count, galois_keys, ciphertext })
        }
        TAG_RESULT => {
            let query_index = r.u32()?;
            let flood_bits = r.u32()?;
            let price = amount(r.text()?)?;
            let n = r.len_u64()?;
            let ciphertext = ciphertext_from_bytes(r.take(n)?, ctx)?;
            TradeMessage::Result(EvalResult { digest, session_id, query_index, flood_bits, price, ciphertext })
        }
        TAG_REFUSAL => {
            let code = r.u8()?;
            let reason = RefusalReason::from_code(code).ok_or_else(|| malformed(format!("refusal code {code}")))?;
            TradeMessage::Refusal(Refusal { digest, session_id, reason, detail: r.text()? })
        }
        TAG_PAYMENT => TradeMessage::Payment(PaymentNotice { digest, session_id, amount: amount(r.text()?)? }),
        TAG_DELIVERY => {
            let n = r.len_u64()?;
            let (model, inner) = model_from_bytes(r.take(n)?)?;
            if inner != digest {
                return Err(EnvelopeError::DigestMismatch);
            }
            TradeMessage::Delivery(ModelDelivery { digest, session_id, model })
        }
        TAG_DECLINE => TradeMessage::Decline(Decline { digest, session_id, reason: r.text()? }),
        other => return Err(malformed(format!("unknown message tag {other}"))),
    };
    r.finish()?;
    Ok(msg)
}
