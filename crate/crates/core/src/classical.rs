//! Finite classical SCOT protocols as probability tables.
//!
//! A protocol is fully described by `P(ḡ | x₀, x₁, b)` over communication
//! events `ḡ = (g, g₀, g₁)` and by honest Bob's success probability
//! `P_B^h(x_i | ḡ, x₀, x₁, i)`. Every quantity is an exact finite sum, so the
//! module is generic over the scalar type: use `f64` for speed or
//! [`BigRational`] when identities must hold to the last digit.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassicalError {
    #[error("distribution for inputs ({x0}, {x1}) and b={b} sums to {sum}")]
    NotNormalized { x0: u64, x1: u64, b: usize, sum: f64 },
    #[error("negative probability in distribution for inputs ({x0}, {x1})")]
    Negative { x0: u64, x1: u64 },
    #[error("decoder value {value} outside [0, 1]")]
    DecoderRange { value: f64 },
    #[error("table shape mismatch: {0}")]
    Shape(String),
    #[error("table parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, ClassicalError>;

/// Field of probabilities: `f64` or exact rationals.
pub trait Scalar: Clone + PartialOrd + Num + Signed + fmt::Debug + Send + Sync {
    fn from_f64_value(v: f64) -> Option<Self>;
    fn to_f64_value(&self) -> f64;
    /// Decimal (`0.125`) or fraction (`1/8`) literal.
    fn parse_literal(s: &str) -> Option<Self>;
    /// Allowed deviation of a distribution's sum from 1.
    fn sum_tolerance() -> Self;

    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }

    fn from_count(v: usize) -> Self {
        (0..v).fold(Self::zero(), |acc, _| acc + Self::one())
    }
}

impl Scalar for f64 {
    fn from_f64_value(v: f64) -> Option<Self> {
        v.is_finite().then_some(v)
    }
    fn to_f64_value(&self) -> f64 {
        *self
    }
    fn parse_literal(s: &str) -> Option<Self> {
        match s.split_once('/') {
            Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
            None => s.trim().parse().ok(),
        }
    }
    fn sum_tolerance() -> Self {
        1e-10
    }
    fn from_count(v: usize) -> Self {
        v as f64
    }
}

impl Scalar for BigRational {
    fn from_f64_value(v: f64) -> Option<Self> {
        BigRational::from_f64(v)
    }
    fn to_f64_value(&self) -> f64 {
        self.to_f64()
            .unwrap_or_else(|| self.numer().to_f64().unwrap_or(f64::NAN) / self.denom().to_f64().unwrap_or(f64::NAN))
    }
    fn parse_literal(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let (a, b) = (a.trim().parse::<BigInt>().ok()?, b.trim().parse::<BigInt>().ok()?);
            return (!b.is_zero()).then(|| BigRational::new(a, b));
        }
        let (neg, body) = s.strip_prefix('-').map_or((false, s), |rest| (true, rest));
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        let digits: BigInt = format!("{int}{frac}").parse().ok()?;
        let value = BigRational::new(digits, num_traits::pow(BigInt::from(10), frac.len()));
        Some(if neg { -value } else { value })
    }
    fn sum_tolerance() -> Self {
        BigRational::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSizes {
    pub g: usize,
    pub g0: usize,
    pub g1: usize,
}

impl EventSizes {
    pub fn total(&self) -> usize {
        self.g * self.g0 * self.g1
    }

    /// `(g, g₀, g₁)` of a flat event index, with `g₁` varying fastest.
    pub fn unflatten(&self, e: usize) -> (usize, usize, usize) {
        (e / (self.g0 * self.g1), (e / self.g1) % self.g0, e % self.g1)
    }
}

/// A finite classical protocol. Inputs are indexed by `x₀ + 2ⁿ x₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalProtocol<T> {
    n: usize,
    sizes: EventSizes,
    /// `dist[x][b][e] = P(ḡ_e | x₀, x₁, b)`.
    dist: Vec<[Vec<T>; 2]>,
    /// `decoder[x][i][e] = P_B^h(x_i | ḡ_e, x₀, x₁, i)`.
    decoder: Vec<[Vec<T>; 2]>,
}

impl<T: Scalar> ClassicalProtocol<T> {
    pub fn new(n: usize, sizes: EventSizes, dist: Vec<[Vec<T>; 2]>, decoder: Vec<[Vec<T>; 2]>) -> Result<Self> {
        let inputs = 1usize << (2 * n);
        let events = sizes.total();
        let shape_ok =
            |t: &Vec<[Vec<T>; 2]>| t.len() == inputs && t.iter().all(|p| p.iter().all(|v| v.len() == events));
        if events == 0 || !shape_ok(&dist) || !shape_ok(&decoder) {
            return Err(ClassicalError::Shape(format!("expected {inputs} input pairs × 2 × {events} events")));
        }
        let p = ClassicalProtocol { n, sizes, dist, decoder };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        for x in 0..self.inputs() {
            let (x0, x1) = self.split(x);
            for b in 0..2 {
                let row = &self.dist[x][b];
                if row.iter().any(|p| p.is_negative()) {
                    return Err(ClassicalError::Negative { x0, x1 });
                }
                let sum = row.iter().cloned().fold(T::zero(), |a, v| a + v);
                if (sum.clone() - T::one()).abs() > T::sum_tolerance() {
                    return Err(ClassicalError::NotNormalized { x0, x1, b, sum: sum.to_f64_value() });
                }
                for v in &self.decoder[x][b] {
                    if v.is_negative() || *v > T::one() {
                        return Err(ClassicalError::DecoderRange { value: v.to_f64_value() });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sizes(&self) -> EventSizes {
        self.sizes
    }

    pub fn inputs(&self) -> usize {
        1 << (2 * self.n)
    }

    fn index(&self, x0: u64, x1: u64) -> usize {
        (x0 + (x1 << self.n)) as usize
    }

    fn split(&self, x: usize) -> (u64, u64) {
        let mask = (1u64 << self.n) - 1;
        (x as u64 & mask, x as u64 >> self.n)
    }

    pub fn prob(&self, x0: u64, x1: u64, b: usize, e: usize) -> &T {
        &self.dist[self.index(x0, x1)][b][e]
    }

    pub fn decode(&self, x0: u64, x1: u64, i: usize, e: usize) -> &T {
        &self.decoder[self.index(x0, x1)][i][e]
    }

    /// Applies `f` to every entry, e.g. to move between scalar types.
    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> Result<ClassicalProtocol<U>> {
        let conv = |t: &Vec<[Vec<T>; 2]>| -> Vec<[Vec<U>; 2]> {
            t.iter().map(|[a, b]| [a.iter().map(&f).collect(), b.iter().map(&f).collect()]).collect()
        };
        ClassicalProtocol::new(self.n, self.sizes, conv(&self.dist), conv(&self.decoder))
    }

    /// `Σ_ḡ |P(ḡ|x₀,x₁,0) − P(ḡ|x₀,x₁,1)|`.
    pub fn tvd_sum(&self, x0: u64, x1: u64) -> T {
        let x = self.index(x0, x1);
        self.dist[x][0].iter().zip(&self.dist[x][1]).fold(T::zero(), |acc, (a, b)| acc + (a.clone() - b.clone()).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AliceAttack<T> {
    /// Success of guessing `b = i` whenever `ḡ` falls in the set where
    /// `b = i` is at least as likely (ties go to `0`).
    pub partition: T,
    /// `½ + ¼ Σ_ḡ |P(ḡ|x₀,x₁,0) − P(ḡ|x₀,x₁,1)|`.
    pub closed_form: T,
    pub tvd_sum: T,
}

pub fn alice_attack<T: Scalar>(p: &ClassicalProtocol<T>, x0: u64, x1: u64) -> AliceAttack<T> {
    let x = p.index(x0, x1);
    let (d0, d1) = (&p.dist[x][0], &p.dist[x][1]);
    let mass = d0.iter().zip(d1).fold(T::zero(), |acc, (a, b)| acc + if a >= b { a.clone() } else { b.clone() });
    let tvd = p.tvd_sum(x0, x1);
    let quarter = T::half() * T::half();
    AliceAttack { partition: T::half() * mass, closed_form: T::half() + quarter * tvd.clone(), tvd_sum: tvd }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpossibilityReport<T> {
    /// `max_{x₀,x₁} P_A^c − ½`.
    pub delta: T,
    /// `1 − min_i P_B^{h,i}`.
    pub epsilon: T,
    /// `max_{x₀,x₁} Σ_ḡ |ΔP|`.
    pub tvd_max: T,
    /// `P_B^{h,i}` for `i = 0, 1`.
    pub p_honest: [T; 2],
    /// `P_B^{ī}`: the copied run decoding `x_ī` from events drawn with `b = i`.
    pub p_copied: [T; 2],
    /// `2^{−2n} Σ_{x,ḡ} |ΔP|`.
    pub mean_tvd: T,
    /// `max_i (P_B^{ī} + P_B^{h,i} − 1)`, floored at zero.
    pub p_b_cheat: T,
    /// `1 − 2ε − 4δ`.
    pub bound_rhs: T,
    /// `P_B^{ī} ≥ P_B^{h,ī} − mean_tvd ≥ P_B^{h,ī} − 4δ` for both `i`.
    pub chain_holds: bool,
    pub bound_holds: bool,
}

/// Bob runs honestly with `b = i` and replays copies of the communication
/// with `b = ī`; evaluated exactly by enumeration.
pub fn bob_double_run_attack<T: Scalar>(p: &ClassicalProtocol<T>) -> ImpossibilityReport<T> {
    let events = p.sizes.total();
    let norm = T::from_count(p.inputs());
    let mut honest = [T::zero(), T::zero()];
    let mut copied = [T::zero(), T::zero()];
    let mut abs_delta = T::zero();
    let mut delta = -T::half();
    let mut tvd_max = T::zero();
    for x in 0..p.inputs() {
        let (x0, x1) = p.split(x);
        for i in 0..2 {
            for e in 0..events {
                honest[i] = honest[i].clone() + p.decoder[x][i][e].clone() * p.dist[x][i][e].clone();
                copied[i] = copied[i].clone() + p.decoder[x][1 - i][e].clone() * p.dist[x][i][e].clone();
            }
        }
        let attack = alice_attack(p, x0, x1);
        abs_delta = abs_delta + attack.tvd_sum.clone();
        if attack.tvd_sum > tvd_max {
            tvd_max = attack.tvd_sum;
        }
        let adv = attack.partition - T::half();
        if adv > delta {
            delta = adv;
        }
    }
    let honest = honest.map(|v| v / norm.clone());
    let copied = copied.map(|v| v / norm.clone());
    let mean_tvd = abs_delta / norm;
    let four = T::from_count(4);
    let epsilon = T::one() - if honest[0] < honest[1] { honest[0].clone() } else { honest[1].clone() };
    let cheat =
        (0..2)
            .map(|i| copied[i].clone() + honest[i].clone() - T::one())
            .fold(T::zero(), |a, v| if v > a { v } else { a });
    let bound_rhs = T::one() - T::from_count(2) * epsilon.clone() - four.clone() * delta.clone();
    let slack = T::sum_tolerance();
    let chain_holds = (0..2).all(|i| {
        let mid = honest[1 - i].clone() - mean_tvd.clone();
        copied[i].clone() + slack.clone() >= mid
            && mid + slack.clone() >= honest[1 - i].clone() - four.clone() * delta.clone()
    });
    let bound_holds = cheat.clone() + slack >= bound_rhs;
    ImpossibilityReport {
        delta,
        epsilon,
        tvd_max,
        p_honest: honest,
        p_copied: copied,
        mean_tvd,
        p_b_cheat: cheat,
        bound_rhs,
        chain_holds,
        bound_holds,
    }
}

/// Random protocol: distributions uniform on the simplex, decoder values
/// Beta(4, 1) so honest Bob mostly succeeds.
pub fn random_protocol<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    sizes: EventSizes,
) -> Result<ClassicalProtocol<T>> {
    let events = sizes.total();
    let beta = Beta::new(4.0, 1.0).expect("valid Beta parameters");
    let inputs = 1usize << (2 * n);
    let mut dist = Vec::with_capacity(inputs);
    let mut decoder = Vec::with_capacity(inputs);
    let lit = |v: f64| T::from_f64_value(v).expect("finite sample");
    for _ in 0..inputs {
        let mut simplex = || {
            let w: Vec<T> = (0..events).map(|_| lit(Exp1.sample(rng))).collect();
            let total = w.iter().cloned().fold(T::zero(), |a, v| a + v);
            w.into_iter().map(|v| v / total.clone()).collect::<Vec<T>>()
        };
        dist.push([simplex(), simplex()]);
        let mut dec = || (0..events).map(|_| lit(beta.sample(rng))).collect::<Vec<T>>();
        decoder.push([dec(), dec()]);
    }
    ClassicalProtocol::new(n, sizes, dist, decoder)
}

/// One-bit family with `|𝒢| = 2`: `g = b` with probability `1 − θ/2`;
/// honest Bob decodes perfectly when `g = i` and with probability `θ`
/// otherwise. `θ = 0` reveals `b`, `θ = 1` hides it.
pub fn tradeoff_family<T: Scalar>(theta: T) -> Result<ClassicalProtocol<T>> {
    let sizes = EventSizes { g: 2, g0: 1, g1: 1 };
    let hit = T::one() - T::half() * theta.clone();
    let miss = T::half() * theta.clone();
    let row = |b: usize| if b == 0 { vec![hit.clone(), miss.clone()] } else { vec![miss.clone(), hit.clone()] };
    let dec = |i: usize| (0..2).map(|g| if g == i { T::one() } else { theta.clone() }).collect::<Vec<T>>();
    let dist = (0..4).map(|_| [row(0), row(1)]).collect();
    let decoder = (0..4).map(|_| [dec(0), dec(1)]).collect();
    ClassicalProtocol::new(1, sizes, dist, decoder)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub theta: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub p_b_cheat: f64,
}

pub const TRADEOFF_CSV_HEADER: &str = "theta,delta,epsilon,p_b_cheat";

impl TradeoffPoint {
    pub fn csv_row(&self) -> String {
        [self.theta, self.delta, self.epsilon, self.p_b_cheat].map(crate::protocol::fmt_sig12).join(",")
    }
}

/// Evaluates the family at `θ = k/steps`, `k = 0..=steps`, exactly.
pub fn tradeoff_scan(steps: usize) -> Vec<TradeoffPoint> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|k| {
            let theta = BigRational::new(BigInt::from(k), BigInt::from(steps));
            let report = bob_double_run_attack(&tradeoff_family(theta.clone()).expect("valid family"));
            TradeoffPoint {
                theta: theta.to_f64_value(),
                delta: report.delta.to_f64_value(),
                epsilon: report.epsilon.to_f64_value(),
                p_b_cheat: report.p_b_cheat.to_f64_value(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Text tables

impl<T: Scalar + fmt::Display> ClassicalProtocol<T> {
    /// Header `n |G| |G0| |G1|`, then `x0 x1 b g g0 g1 prob` lines, then
    /// `x0 x1 i g g0 g1 value` decoder lines, all in enumeration order.
    pub fn to_table(&self) -> String {
        let s = self.sizes;
        let mut out = format!("{} {} {} {}\n", self.n, s.g, s.g0, s.g1);
        for table in [&self.dist, &self.decoder] {
            for (x, rows) in table.iter().enumerate() {
                let (x0, x1) = self.split(x);
                for (b, row) in rows.iter().enumerate() {
                    for (e, value) in row.iter().enumerate() {
                        let (g, g0, g1) = s.unflatten(e);
                        out.push_str(&format!("{x0} {x1} {b} {g} {g0} {g1} {value}\n"));
                    }
                }
            }
        }
        out
    }
}

/// Parses [`ClassicalProtocol::to_table`] output; `#` starts a comment line.
pub fn parse_table<T: Scalar>(text: &str) -> Result<ClassicalProtocol<T>> {
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let err = |line: usize, reason: &str| ClassicalError::Parse { line, reason: reason.to_string() };
    let (hl, header) = lines.next().ok_or_else(|| err(0, "empty table"))?;
    let dims: Vec<usize> =
        header.split_whitespace().map(|t| t.parse().map_err(|_| err(hl, "bad header"))).collect::<Result<_>>()?;
    let [n, g, g0, g1] = dims[..] else {
        return Err(err(hl, "header needs n |G| |G0| |G1|"));
    };
    if n > 8 {
        return Err(err(hl, "n too large"));
    }
    let sizes = EventSizes { g, g0, g1 };
    let inputs = 1usize << (2 * n);
    let mut tables: [Vec<[Vec<T>; 2]>; 2] = [Vec::new(), Vec::new()];
    for table in tables.iter_mut() {
        for x in 0..inputs {
            let mut pair: [Vec<T>; 2] = [Vec::new(), Vec::new()];
            for (b, row) in pair.iter_mut().enumerate() {
                for e in 0..sizes.total() {
                    let (ln, line) = lines.next().ok_or_else(|| err(0, "table truncated"))?;
                    let f: Vec<&str> = line.split_whitespace().collect();
                    if f.len() != 7 {
                        return Err(err(ln, "expected 7 fields"));
                    }
                    let (gg, gg0, gg1) = sizes.unflatten(e);
                    let expected =
                        [x as u64 & ((1 << n) - 1), x as u64 >> n, b as u64, gg as u64, gg0 as u64, gg1 as u64];
                    for (k, want) in expected.iter().enumerate() {
                        if f[k].parse::<u64>().ok() != Some(*want) {
                            return Err(err(ln, "entries out of enumeration order"));
                        }
                    }
                    row.push(T::parse_literal(f[6]).ok_or_else(|| err(ln, "bad probability"))?);
                }
            }
            table.push(pair);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "trailing lines"));
    }
    let [dist, decoder] = tables;
    ClassicalProtocol::new(n, sizes, dist, decoder)
}
