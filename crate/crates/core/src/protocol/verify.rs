use std::fmt::{self, Write as _};

use super::messages::ParamsAnnouncement;
use crate::ckks::{SecurityLevel, SECURITY_TABLE};
use crate::inference::{oracle_linear, LinearModel};

/// Default step-9 tolerance: twice the calibrated evaluation error.
pub const DEFAULT_TOLERANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Honest,
    Cheated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Honest => "HONEST",
            Verdict::Cheated => "CHEATED",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    /// `|f(m) − f'(m)|` per retained record, in query order.
    pub deviations: Vec<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().fold(0.0, |m, &d| if d.is_nan() || d > m { d } else { m })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "verdict={}", self.verdict).unwrap();
        writeln!(out, "records={}", self.deviations.len()).unwrap();
        writeln!(out, "max_deviation={}", self.max_deviation()).unwrap();
        writeln!(out, "tolerance={}", self.tolerance).unwrap();
        out
    }
}

/// Compares the scores obtained under encryption with the delivered model
/// applied in the clear to the same records. A delivered model of the wrong
/// shape is CHEATED outright.
pub fn verify_delivery(
    records: &[Vec<f64>],
    scores: &[f64],
    delivered: &LinearModel,
    tolerance: f64,
) -> VerificationReport {
    let deviations: Vec<f64> = records
        .iter()
        .zip(scores)
        .map(|(r, s)| {
            if r.len() == delivered.dimension() {
                (s - oracle_linear(r, delivered)).abs()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let honest = deviations.iter().all(|&d| d <= tolerance);
    VerificationReport {
        deviations,
        tolerance,
        verdict: if honest { Verdict::Honest } else { Verdict::Cheated },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecurityPolicy {
    Standard,
    ReducedOk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsVerdict {
    pub accepted: bool,
    pub level: SecurityLevel,
    pub reason: String,
}

pub fn check_params(ann: &ParamsAnnouncement, policy: SecurityPolicy) -> ParamsVerdict {
    let p = &ann.params;
    let bits = p.total_modulus_bits();
    let level = p.security_level();
    let limit = SECURITY_TABLE.iter().find(|(n, _)| *n == p.degree()).map(|&(_, b)| b);
    let (accepted, reason) = match (level, policy, limit) {
        (SecurityLevel::Standard, _, Some(max)) => (true, format!("{bits} modulus bits within {max} for N={}", p.degree())),
        (_, _, None) => (false, format!("no security table entry for N={}", p.degree())),
        (SecurityLevel::Reduced, SecurityPolicy::ReducedOk, Some(max)) => {
            (true, format!("reduced: {bits} modulus bits exceed {max} for N={}", p.degree()))
        }
        (SecurityLevel::Reduced, SecurityPolicy::Standard, Some(max)) => {
            (false, format!("{bits} modulus bits exceed {max} for N={}", p.degree()))
        }
    };
    ParamsVerdict { accepted, level, reason }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Multiclass { classes: u64 },
    Neural,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompatVerdict {
    /// Parameter count over the query-derived requirement.
    pub ratio: f64,
    pub required: u64,
    pub pass: bool,
}

/// Whether a model with `d` parameters resists extraction under `k` allowed
/// queries. Passes when `d / requirement` strictly exceeds `margin`, with
/// the requirement `k+1` (linear), `c(k+1)` (multiclass) or `100k` (neural).
pub fn compatible_check(d: u64, k: u64, kind: ModelKind, margin: f64) -> CompatVerdict {
    let required = match kind {
        ModelKind::Linear => k + 1,
        ModelKind::Multiclass { classes } => classes * (k + 1),
        ModelKind::Neural => 100 * k,
    };
    let ratio = if required == 0 { f64::INFINITY } else { d as f64 / required as f64 };
    CompatVerdict { ratio, required, pass: ratio > margin }
}
