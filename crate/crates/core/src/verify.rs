//! Desk-scale reproduction checks, shared by the acceptance test target and
//! the `verify-all` command.
//!
//! Each check returns a [`CriterionOutcome`]. Quick mode shrinks sample
//! counts and enumeration depth; thresholds stay unchanged.

use std::fmt::Display;
use std::time::Instant;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, Acceptance, EvalMode};
use crate::bits::BitString;
use crate::bounds;
use crate::classical::{self, ClassicalProtocol, EventSizes};
use crate::optimizer::{self, Mu0Variables, OptimizerSettings, MU0_MAX};
use crate::protocol::{self, HonestBob, ProtocolInputs, RunOptions};
use crate::qsim::{self, Basis, StateVector};
use crate::spacetime::{validate_geometry, ProtocolGeometry, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    /// Wall-clock allowance; `None` when the criterion has none.
    pub budget_seconds: Option<f64>,
}

pub const CRITERIA: [(u8, &str, Option<f64>); 10] = [
    (1, "honest correctness", Some(30.0)),
    (2, "breidbart tightness", Some(60.0)),
    (3, "random-guess baseline", None),
    (4, "bound compliance", None),
    (5, "cloning sum", None),
    (6, "optimizer reproduction", Some(300.0)),
    (7, "error tolerance", None),
    (8, "classical impossibility", Some(60.0)),
    (9, "timelike relay", None),
    (10, "numerical hygiene", None),
];

type Check = std::result::Result<String, String>;

fn err<E: Display>(e: E) -> String {
    e.to_string()
}

pub fn run_criterion(id: u8, quick: bool) -> Option<CriterionOutcome> {
    let &(_, title, budget) = CRITERIA.iter().find(|c| c.0 == id)?;
    let start = Instant::now();
    let check = match id {
        1 => honest_correctness(quick),
        2 => breidbart_tightness(quick),
        3 => random_guess_baseline(),
        4 => bound_compliance(quick),
        5 => cloning_sum(),
        6 => optimizer_reproduction(quick),
        7 => error_tolerance(),
        8 => classical_impossibility(quick),
        9 => timelike_relay(),
        _ => numerical_hygiene(quick),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match check {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(limit) = budget {
        if seconds > limit {
            passed = false;
            detail = format!("{detail}; took {seconds:.1}s, limit {limit}s");
        }
    }
    Some(CriterionOutcome { id, title: title.to_string(), passed, detail, seconds, budget_seconds: budget })
}

pub fn run_all(quick: bool) -> Vec<CriterionOutcome> {
    CRITERIA.iter().filter_map(|c| run_criterion(c.0, quick)).collect()
}

/// One line per criterion: `[PASS] 3 random-guess baseline (0.00s): ...`.
pub fn outcome_line(o: &CriterionOutcome) -> String {
    format!("[{}] {:>2} {} ({:.2}s): {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.title, o.seconds, o.detail)
}

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn honest_correctness(quick: bool) -> Check {
    let max_n = if quick { 4 } else { 6 };
    let (h, v, delta) = (1.0, 0.1, 0.1);
    let mut runs = 0usize;
    for n in 1..=max_n {
        for geometry in [ProtocolGeometry::main_slab(h, v, n), ProtocolGeometry::per_bit(h, delta, n)] {
            let report = validate_geometry(&geometry).map_err(err)?;
            if !report.passed {
                return Err(format!("geometry rejected at n={n}: {}", report.condition));
            }
            let size = 1u64 << n;
            let cases: Vec<(u64, u64, Side)> =
                (0..size).flat_map(|a| (0..size).flat_map(move |b| [(a, b, Side::Zero), (a, b, Side::One)])).collect();
            let failures: Vec<String> = cases
                .par_iter()
                .filter_map(|&(a, b, side)| {
                    let x0 = BitString::from_u64(a, n);
                    let x1 = BitString::from_u64(b, n);
                    let inputs = ProtocolInputs::new(x0, x1, side);
                    let seed = (a << 32) ^ (b << 8) ^ (side.index() as u64) ^ ((n as u64) << 56);
                    let mut bob = HonestBob::new(side, n, 0.0);
                    let t = match protocol::run_protocol(&geometry, &inputs, seed, &mut bob, &RunOptions::default()) {
                        Ok(t) => t,
                        Err(e) => return Some(format!("n={n} run error: {e}")),
                    };
                    if t.output_string(side).as_ref() != Some(inputs.x(side)) {
                        return Some(format!("n={n} x0={a} x1={b} b={}: wrong output", side.index()));
                    }
                    let check = protocol::validate_transcript(&t);
                    (!check.passed()).then(|| format!("n={n} x0={a} x1={b}: {:?}", check.violations.first()))
                })
                .collect();
            if let Some(first) = failures.first() {
                return Err(format!("{} failures; first: {first}", failures.len()));
            }
            runs += cases.len();
        }
    }
    Ok(format!("{runs} runs over n<={max_n}, both layouts, 0 failures, all transcripts valid"))
}

fn breidbart_tightness(quick: bool) -> Check {
    let strategy = adversary::strategy_breidbart();
    let mut worst = 0.0f64;
    for n in 1..=20 {
        let r = adversary::evaluate_exact(&strategy, n).map_err(err)?;
        let expected = (0.5 + 1.0 / (2.0 * 2f64.sqrt())).powi(n as i32);
        worst = worst.max((r.p_n - expected).abs());
    }
    if worst >= 1e-12 {
        return Err(format!("exact error {worst:e}"));
    }
    let trials = if quick { 20_000 } else { 100_000 };
    let target = 0.728_553_390_6;
    let geometry = ProtocolGeometry::main_slab(1.0, 0.1, 2);
    let mc = adversary::evaluate_monte_carlo(&strategy, &geometry, trials, 2024, Acceptance::Exact).map_err(err)?;
    let sigma = (target * (1.0 - target) / trials as f64).sqrt();
    let z = (mc.p_n - target) / sigma;
    ensure(
        z.abs() <= adversary::SIGMA_BAND,
        format!("exact n=1..20 max error {worst:.1e}; MC n=2 p={:.6} over {trials} trials, z={z:+.2}", mc.p_n),
    )
}

fn random_guess_baseline() -> Check {
    let mut worst = 0.0f64;
    for side in [Side::Zero, Side::One] {
        let strategy = adversary::strategy_random_guess(side);
        for n in 1..=10 {
            let r = adversary::evaluate_exact(&strategy, n).map_err(err)?;
            worst = worst.max((r.p_n - 0.5f64.powi(n as i32)).abs());
        }
    }
    ensure(worst < 1e-12, format!("n=1..10 both sides, max error {worst:.1e}"))
}

fn bound_compliance(quick: bool) -> Check {
    let trials = if quick { 500 } else { 2_000 };
    let mut exact_cases = 0;
    let mut sampled = Vec::new();
    for name in adversary::BUILTIN_NAMES {
        let strategy = adversary::builtin(name).expect("known built-in").map_err(err)?;
        for n in 1..=6 {
            let r = adversary::evaluate_exact(&strategy, n).map_err(err)?;
            if !r.ok {
                return Err(format!("{name} n={n}: exact p={} above bound {}", r.p_n, r.bound));
            }
            exact_cases += 1;
            sampled.push((name, strategy.clone(), n));
        }
    }
    let results: Vec<_> = sampled
        .par_iter()
        .map(|(name, strategy, n)| {
            let geometry = ProtocolGeometry::main_slab(1.0, 0.1, *n);
            adversary::evaluate_monte_carlo(strategy, &geometry, trials, 31 + *n as u64, Acceptance::Exact)
                .map(|r| (*name, r))
        })
        .collect();
    for item in results {
        let (name, r) = item.map_err(err)?;
        debug_assert_eq!(r.mode, EvalMode::MonteCarlo);
        if !r.ok {
            return Err(format!("{name} n={}: sampled p={} above bound {} + 4 sigma", r.n, r.p_n, r.bound));
        }
    }
    for n in 1..=6 {
        if bounds::security_predicate(1.0, n, adversary::EXACT_SLACK).map_err(err)? {
            return Err(format!("fixture p=1 accepted at n={n}"));
        }
    }
    Ok(format!(
        "{exact_cases} exact and {} sampled ({trials} trials) cases within bound; p=1 fixture rejected for n=1..6",
        exact_cases
    ))
}

fn cloning_sum() -> Check {
    let target = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
    let clone = optimizer::strategy_sum(&adversary::strategy_cloning().map_err(err)?).map_err(err)?;
    let breid = optimizer::strategy_sum(&adversary::strategy_breidbart()).map_err(err)?;
    ensure(
        (clone - target).abs() < 1e-9 && (breid - target).abs() < 1e-9,
        format!("cloning {clone:.12}, breidbart {breid:.12}, target {target:.12}"),
    )
}

fn optimizer_reproduction(quick: bool) -> Check {
    let result = optimizer::maximize_mu0(&OptimizerSettings::default()).map_err(err)?;
    let in_range = (3.41411..=3.41422).contains(&result.best_value);
    let feasible = result.max_constraint_residual < 1e-8;
    let points = if quick { 10_000 } else { 100_000 };
    let worst = (0..points as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            rng.set_stream(i);
            optimizer::mu0_objective(&optimizer::random_feasible(&mut rng))
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "best {:.8} (residual {:.1e}, {} restarts); max over {points} random feasible points {worst:.6}",
        result.best_value, result.max_constraint_residual, result.restarts_used
    );
    ensure(in_range && feasible && worst <= MU0_MAX + 1e-6, detail)
}

fn error_tolerance() -> Check {
    let below = bounds::noisy_bound(0.015, 1).map_err(err)?;
    let above = bounds::noisy_bound(0.02, 1).map_err(err)?;
    let root = bounds::max_tolerable_gamma(1e-9).map_err(err)?;
    let mut monotone = true;
    let mut prev = below;
    for n in 2..=200 {
        let next = bounds::noisy_bound(0.015, n).map_err(err)?;
        monotone &= next < prev;
        prev = next;
    }
    ensure(
        below < 1.0 && above > 1.0 && root > 0.0150 && root < 0.0160 && monotone,
        format!("bound(0.015,1)={below:.6}, bound(0.02,1)={above:.6}, root={root:.6}, decreasing to n=200: {monotone}"),
    )
}

fn classical_impossibility(quick: bool) -> Check {
    let tables = if quick { 200 } else { 1000 };
    let failures: Vec<String> = (0..tables as u64)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xc1a5);
            rng.set_stream(k);
            let n = rng.random_range(1..=2usize);
            let sizes =
                EventSizes { g: rng.random_range(1..=3), g0: rng.random_range(1..=3), g1: rng.random_range(1..=3) };
            let p: ClassicalProtocol<BigRational> = match classical::random_protocol(&mut rng, n, sizes) {
                Ok(p) => p,
                Err(e) => return Some(format!("table {k}: {e}")),
            };
            for x0 in 0..(1u64 << n) {
                for x1 in 0..(1u64 << n) {
                    let a = classical::alice_attack(&p, x0, x1);
                    if a.partition != a.closed_form {
                        return Some(format!("table {k}: identity fails at ({x0},{x1})"));
                    }
                }
            }
            let r = classical::bob_double_run_attack(&p);
            (!r.bound_holds).then(|| format!("table {k}: cheating bound violated"))
        })
        .collect();
    if let Some(first) = failures.first() {
        return Err(format!("{} failing tables; first: {first}", failures.len()));
    }
    let fixture = perfect_decoder_fixture().map_err(err)?;
    let r = classical::bob_double_run_attack(&fixture);
    let one = BigRational::from_integer(1.into());
    ensure(
        r.p_b_cheat == one,
        format!("{tables} exact random tables pass identity and bound; b-independent fixture P_B^c = {}", r.p_b_cheat),
    )
}

/// Two-bit protocol whose event distribution ignores `b` and whose decoder
/// always succeeds.
fn perfect_decoder_fixture() -> classical::Result<ClassicalProtocol<BigRational>> {
    let n = 2;
    let sizes = EventSizes { g: 3, g0: 1, g1: 2 };
    let events = sizes.total();
    let mut dist = Vec::new();
    let mut decoder = Vec::new();
    for x in 0..(1usize << (2 * n)) {
        let weights: Vec<BigRational> =
            (0..events).map(|e| BigRational::from_integer((1 + (x + e) % 3).into())).collect();
        let total = weights.iter().fold(BigRational::from_integer(0.into()), |a, w| a + w);
        let row: Vec<BigRational> = weights.into_iter().map(|w| w / total.clone()).collect();
        dist.push([row.clone(), row]);
        let ones = vec![BigRational::from_integer(1.into()); events];
        decoder.push([ones.clone(), ones]);
    }
    ClassicalProtocol::new(n, sizes, dist, decoder)
}

fn timelike_relay() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x0 = BitString::random(4, &mut rng);
    let x1 = BitString::random(4, &mut rng);
    let mut relaxed_ok = true;
    for seed in 0..20 {
        let demo = adversary::timelike_relay_demo(1.0, 0.1, &x0, &x1, seed, true).map_err(err)?;
        relaxed_ok &= demo.success;
    }
    let original = adversary::timelike_relay_demo(1.0, 0.1, &x0, &x1, 0, false).map_err(err)?;
    let rejected = !original.report.passed();
    ensure(
        relaxed_ok && rejected,
        format!(
            "relaxed region: both strings correct and valid in 20/20 runs: {relaxed_ok}; original region rejects relay with {} violation(s)",
            original.report.violations.len()
        ),
    )
}

fn numerical_hygiene(quick: bool) -> Check {
    let trials: u32 = if quick { 20_000 } else { 100_000 };
    let mut cases: Vec<(StateVector, usize, Basis)> = Vec::new();
    for (r, s) in [(false, false), (true, false), (false, true), (true, true)] {
        for basis in [Basis::Computational, Basis::Hadamard, Basis::Breidbart] {
            cases.push((qsim::bb84_state(r, s), 0, basis));
        }
    }
    let pair = qsim::tensor(&qsim::bb84_state(true, true), &qsim::bb84_state(false, false));
    let entangled = qsim::apply_unitary(&pair, &qsim::UnitaryMatrix::cnot_01(), &[0, 1]).map_err(err)?;
    for basis in [Basis::Computational, Basis::Hadamard, Basis::Breidbart] {
        cases.push((entangled.clone(), 1, basis));
        cases.push((qsim::bell_phi_plus(), 0, basis));
    }
    let mut worst_z = 0.0f64;
    for (k, (state, qubit, basis)) in cases.iter().enumerate() {
        let p1 = qsim::born_probability(state, *qubit, *basis, true).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let mut ones = 0u32;
        for _ in 0..trials {
            ones += qsim::measure(state, *qubit, *basis, &mut rng).map_err(err)?.0 as u32;
        }
        let freq = ones as f64 / trials as f64;
        let sigma = (p1 * (1.0 - p1) / trials as f64).sqrt();
        let z = if sigma < 1e-15 {
            if (freq - p1).abs() < 1e-15 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (freq - p1) / sigma
        };
        worst_z = worst_z.max(z.abs());
    }
    if worst_z > adversary::SIGMA_BAND {
        return Err(format!("Born statistics off by {worst_z:.2} sigma"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let step = 1e-6;
    let mut worst_rel = 0.0f64;
    for _ in 0..100 {
        let mut v = Mu0Variables::default();
        for xi in v.x.iter_mut() {
            *xi = rng.random_range(-1.0..1.0);
        }
        let (_, g) = optimizer::mu0_with_gradient(&v);
        let (mut diff, mut norm) = (0.0, 0.0);
        for (i, gi) in g.iter().enumerate() {
            let (mut p, mut m) = (v, v);
            p.x[i] += step;
            m.x[i] -= step;
            let fd = (optimizer::mu0_objective(&p) - optimizer::mu0_objective(&m)) / (2.0 * step);
            diff += (fd - gi).powi(2);
            norm += gi.powi(2);
        }
        worst_rel = worst_rel.max(diff.sqrt() / norm.sqrt().max(f64::MIN_POSITIVE));
    }
    ensure(
        worst_rel < 1e-5,
        format!(
            "{} Born cases at {trials} trials, max |z| {worst_z:.2}; gradient relative error {worst_rel:.1e} at 100 points",
            cases.len()
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_criteria_pass() {
        for id in [3, 5, 7, 9] {
            let o = run_criterion(id, true).unwrap();
            assert!(o.passed, "{}", outcome_line(&o));
        }
        assert!(run_criterion(11, true).is_none());
    }

    #[test]
    fn fixture_is_b_independent() {
        let p = perfect_decoder_fixture().unwrap();
        for x in 0..4u64 {
            assert_eq!(p.tvd_sum(x, 3 - x), BigRational::from_integer(0.into()));
        }
    }

    #[test]
    fn line_format() {
        let o = CriterionOutcome {
            id: 7,
            title: "error tolerance".into(),
            passed: false,
            detail: "x".into(),
            seconds: 0.5,
            budget_seconds: None,
        };
        assert_eq!(outcome_line(&o), "[FAIL]  7 error tolerance (0.50s): x");
    }
}
