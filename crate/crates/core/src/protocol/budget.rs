use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::ProtocolError;

/// Per-session query allowance with geometrically escalating prices.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBudget {
    max_queries: u32,
    price_base: BigRational,
    price_growth: BigRational,
    spent: u32,
}

impl QueryBudget {
    pub fn new(max_queries: u32, price_base: BigRational, price_growth: BigRational) -> Result<Self, ProtocolError> {
        if price_base.is_negative() {
            return Err(ProtocolError::BadConfig(format!("negative price base {price_base}")));
        }
        if price_growth < BigRational::one() {
            return Err(ProtocolError::BadConfig(format!("price growth {price_growth} below 1")));
        }
        Ok(Self { max_queries, price_base, price_growth, spent: 0 })
    }

    pub fn max_queries(&self) -> u32 {
        self.max_queries
    }

    pub fn spent(&self) -> u32 {
        self.spent
    }

    pub fn remaining(&self) -> u32 {
        self.max_queries - self.spent
    }

    pub fn price_base(&self) -> &BigRational {
        &self.price_base
    }

    pub fn price_growth(&self) -> &BigRational {
        &self.price_growth
    }

    /// Price of the query with zero-based index `i`.
    pub fn price(&self, i: u32) -> BigRational {
        &self.price_base * pow(&self.price_growth, i)
    }

    pub fn next_price(&self) -> BigRational {
        self.price(self.spent)
    }

    /// Total charged for the first `q` queries.
    pub fn cumulative_cost(&self, q: u32) -> BigRational {
        (0..q).map(|i| self.price(i)).fold(BigRational::zero(), |acc, p| acc + p)
    }

    /// Consumes one query and returns its price.
    pub fn charge(&mut self) -> Result<BigRational, ProtocolError> {
        if self.spent >= self.max_queries {
            return Err(ProtocolError::BudgetExceeded { spent: self.spent, max: self.max_queries });
        }
        let price = self.next_price();
        self.spent += 1;
        Ok(price)
    }
}

fn pow(x: &BigRational, e: u32) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

/// Parses an amount written as an integer, a decimal (`1.25`) or a fraction
/// (`5/4`), exactly.
pub fn parse_amount(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        return (!d.is_zero()).then(|| BigRational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("0{int}{frac}").parse().ok()?;
    let denom = BigInt::from(10u32).pow(frac.len() as u32);
    let v = BigRational::new(digits, denom);
    Some(if neg { -v } else { v })
}

/// Decimal rendering when the amount has a short terminating expansion,
/// otherwise `n/d`.
pub fn format_amount(x: &BigRational) -> String {
    if x.is_integer() {
        return x.to_integer().to_string();
    }
    let mut d = x.denom().clone();
    let (mut twos, mut fives) = (0u32, 0u32);
    let two = BigInt::from(2u32);
    let five = BigInt::from(5u32);
    while (&d % &two).is_zero() {
        d /= &two;
        twos += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        fives += 1;
    }
    let places = twos.max(fives);
    if !d.is_one() || places > 30 {
        return x.to_string();
    }
    let scaled = (x * BigRational::from_integer(BigInt::from(10u32).pow(places))).to_integer();
    let neg = scaled.is_negative();
    let digits = scaled.abs().to_string();
    let digits = format!("{:0>width$}", digits, width = places as usize + 1);
    let (int, frac) = digits.split_at(digits.len() - places as usize);
    format!("{}{int}.{frac}", if neg { "-" } else { "" })
}
