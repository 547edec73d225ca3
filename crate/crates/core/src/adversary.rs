//! Cheating Bob: strategies, their evaluation, and the timelike-relay attack
//! against regions that are not spacelike separated.
//!
//! A [`Strategy`] is a preparation unitary on Alice's qubit(s) plus ancillas,
//! an assignment of the resulting qubits to `B0`/`B1`, and for each side a
//! family of measurements indexed by the basis string `s`. A measurement is
//! stored as a rotation `V`; its projectors are `V†|k⟩⟨k|V`.

use crate::bits::BitString;
use crate::bounds::{self, BoundsError};
use crate::protocol::{
    self, run_protocol, validate_transcript, AgentId, BobAgents, Channel, Message, Payload, ProtocolError,
    ProtocolInputs, QubitHandle, Run, RunOptions, Transcript, TranscriptReport,
};
use crate::qsim::{self, Basis, QsimError, StateVector, UnitaryMatrix, DEFAULT_QUBIT_BUDGET, MATRIX_TOL};
use crate::spacetime::{
    earliest_common_future, sample_region_separation, validate_geometry, Event, Layout, OutputRegion, ProtocolGeometry,
    Side, SpacetimeError,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

/// Slack for comparing exact probabilities against the bound.
pub const EXACT_SLACK: f64 = 1e-12;

/// Width of the statistical acceptance band, in standard deviations.
pub const SIGMA_BAND: f64 = 4.0;

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("malformed strategy: {0}")]
    Malformed(String),
    #[error("strategy signals from {from} to {to} after the handover")]
    Signalling { from: AgentId, to: AgentId },
    #[error("cloner fidelity {fidelity} for (r={r}, s={s}) differs from cos²(π/8)")]
    ClonerFidelity { r: bool, s: bool, fidelity: f64 },
    #[error("exact evaluation needs a product strategy; use Monte Carlo for '{0}'")]
    NotProduct(String),
    #[error("simulation needs {requested} qubits, budget is {budget}")]
    Budget { requested: usize, budget: usize },
    #[error("trial {trial} produced an invalid transcript: {violations:?}")]
    InvalidTranscript { trial: u64, violations: Vec<protocol::Violation> },
    #[error("geometry rejected: {0}")]
    Geometry(String),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Spacetime(#[from] SpacetimeError),
}

pub type Result<T> = std::result::Result<T, AdversaryError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyForm {
    /// The same single-qubit strategy applied to every qubit independently.
    Product,
    /// One unitary on all `n` qubits; needs every qubit at once.
    General,
}

/// A classical relay Bob's agents plan to make after receiving Alice's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relay {
    pub from: AgentId,
    pub to: AgentId,
}

#[derive(Debug, Clone)]
pub struct Strategy {
    pub name: String,
    pub form: StrategyForm,
    /// Qubits of Alice's system the preparation acts on (1 for product form).
    pub input_qubits: usize,
    pub ancilla_qubits: usize,
    /// Unitary on input ⊗ ancillas: local qubits `0..input_qubits` are
    /// Alice's, the rest are ancillas starting in `|0⟩`.
    pub prepare: UnitaryMatrix,
    /// Side receiving each local qubit.
    pub owner: Vec<Side>,
    /// `measurements[i][s]` rotates side `i`'s share (in local qubit order)
    /// before a computational readout; `s` is little-endian.
    pub measurements: [Vec<UnitaryMatrix>; 2],
    /// Positions within side `i`'s share read out as `r_i`, one per input qubit.
    pub readout: [Vec<usize>; 2],
    pub relays: Vec<Relay>,
}

impl Strategy {
    /// Validates dimensions, unitarity and the message plan.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        form: StrategyForm,
        input_qubits: usize,
        ancilla_qubits: usize,
        prepare: UnitaryMatrix,
        owner: Vec<Side>,
        measurements: [Vec<UnitaryMatrix>; 2],
        readout: [Vec<usize>; 2],
        relays: Vec<Relay>,
    ) -> Result<Self> {
        let malformed = |m: String| Err(AdversaryError::Malformed(m));
        let total = input_qubits + ancilla_qubits;
        if input_qubits == 0 || (form == StrategyForm::Product && input_qubits != 1) {
            return malformed(format!("{form:?} strategy with {input_qubits} input qubits"));
        }
        if prepare.qubits() != total || owner.len() != total {
            return malformed(format!("preparation or bipartition does not cover {total} qubits"));
        }
        if prepare.unitarity_error() > MATRIX_TOL {
            return Err(QsimError::NotUnitary(prepare.unitarity_error()).into());
        }
        for side in Side::BOTH {
            let share = owner.iter().filter(|&&o| o == side).count();
            let ms = &measurements[side.index()];
            if ms.len() != 1 << input_qubits {
                return malformed(format!("side {side} needs one measurement per basis string"));
            }
            for v in ms {
                if v.qubits() != share {
                    return malformed(format!(
                        "side {side} measurement acts on {} qubits, share is {share}",
                        v.qubits()
                    ));
                }
                if v.unitarity_error() > MATRIX_TOL {
                    return Err(QsimError::NotUnitary(v.unitarity_error()).into());
                }
            }
            let ro = &readout[side.index()];
            if ro.len() != input_qubits || ro.iter().any(|&k| k >= share) {
                return malformed(format!("side {side} readout {ro:?} invalid for share of {share}"));
            }
        }
        for r in &relays {
            if matches!(r.from, AgentId::B0 | AgentId::B1) {
                return Err(AdversaryError::Signalling { from: r.from, to: r.to });
            }
            if r.from.is_alice() || r.to.is_alice() {
                return malformed(format!("relay {:?} involves Alice", r));
            }
        }
        Ok(Strategy {
            name: name.to_string(),
            form,
            input_qubits,
            ancilla_qubits,
            prepare,
            owner,
            measurements,
            readout,
            relays,
        })
    }

    pub fn total_qubits(&self) -> usize {
        self.input_qubits + self.ancilla_qubits
    }

    /// Register qubits needed to simulate an `n`-bit run.
    pub fn register_qubits(&self, n: usize) -> usize {
        match self.form {
            StrategyForm::Product => n * self.total_qubits(),
            StrategyForm::General => n + self.ancilla_qubits,
        }
    }

    /// Local qubit indices forming side `i`'s share.
    pub fn share(&self, side: Side) -> Vec<usize> {
        (0..self.owner.len()).filter(|&k| self.owner[k] == side).collect()
    }

    /// Projectors `Π^m = V† D_m V` of `M_{i,s}` on side `i`'s share, where
    /// `D_m` selects share basis states whose readout bits spell `m`.
    pub fn projectors(&self, side: Side, s: usize) -> Vec<DMatrix<Complex64>> {
        let v = &self.measurements[side.index()][s];
        let readout = &self.readout[side.index()];
        let d = v.dim();
        let vm = DMatrix::from_fn(d, d, |r, c| v.entry(r, c));
        (0..1usize << readout.len())
            .map(|m| {
                let diag = DMatrix::from_fn(d, d, |r, c| {
                    let hit = r == c && readout.iter().enumerate().all(|(k, &q)| (r >> q) & 1 == (m >> k) & 1);
                    Complex64::new(if hit { 1.0 } else { 0.0 }, 0.0)
                });
                vm.adjoint() * diag * &vm
            })
            .collect()
    }
}

fn rotation_for(s: bool) -> UnitaryMatrix {
    if s {
        UnitaryMatrix::hadamard()
    } else {
        UnitaryMatrix::identity(2)
    }
}

/// Measure in the Breidbart basis and give the outcome to both agents, who
/// output it whatever `s` is.
pub fn strategy_breidbart() -> Strategy {
    let to_computational = Basis::Breidbart.change_of_basis().adjoint();
    let prepare = UnitaryMatrix::cnot_01()
        .compose(&UnitaryMatrix::identity(2).kron(&to_computational))
        .expect("two-qubit dimensions");
    let id = || vec![UnitaryMatrix::identity(2), UnitaryMatrix::identity(2)];
    Strategy::new(
        "breidbart",
        StrategyForm::Product,
        1,
        1,
        prepare,
        vec![Side::Zero, Side::One],
        [id(), id()],
        [vec![0], vec![0]],
        vec![],
    )
    .expect("valid built-in strategy")
}

/// Honest on side `b`; side `b̄` outputs a uniformly random bit per qubit.
pub fn strategy_random_guess(b: Side) -> Strategy {
    let prepare = UnitaryMatrix::hadamard().kron(&UnitaryMatrix::identity(2));
    let mut measurements = [Vec::new(), Vec::new()];
    measurements[b.index()] = vec![rotation_for(false), rotation_for(true)];
    measurements[b.other().index()] = vec![UnitaryMatrix::identity(2), UnitaryMatrix::identity(2)];
    Strategy::new(
        &format!("random_guess_{}", b.index()),
        StrategyForm::Product,
        1,
        1,
        prepare,
        vec![b, b.other()],
        measurements,
        [vec![0], vec![0]],
        vec![],
    )
    .expect("valid built-in strategy")
}

/// Rotation by π/2 about the x axis, taking the xz great circle of the Bloch
/// sphere onto the equator.
fn xz_to_equator() -> UnitaryMatrix {
    let a = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let b = Complex64::new(0.0, FRAC_1_SQRT_2);
    UnitaryMatrix::new(2, vec![a, b, b, a]).expect("unitary")
}

/// Economical phase-covariant 1→2 cloner, completed to a unitary.
/// Local qubit 0 is the input, qubit 1 the blank.
fn phase_covariant_cloner() -> UnitaryMatrix {
    let r = FRAC_1_SQRT_2;
    // Columns are images of |q1 q0⟩ = |00⟩, |01⟩ (input 1), |10⟩ (blank 1), |11⟩.
    #[rustfmt::skip]
    let m = [
        1.0, 0.0, 0.0, 0.0,
        0.0, r,   r,   0.0,
        0.0, r,  -r,   0.0,
        0.0, 0.0, 0.0, 1.0,
    ];
    UnitaryMatrix::from_real(4, &m).expect("unitary")
}

/// Symmetric cloning of the BB84 states; each agent measures its clone in
/// `𝒟_s`. Fails if any clone's fidelity differs from `cos²(π/8)`.
pub fn strategy_cloning() -> Result<Strategy> {
    let w = xz_to_equator();
    let wd = w.adjoint();
    let prepare = wd.kron(&wd).compose(&phase_covariant_cloner())?.compose(&UnitaryMatrix::identity(2).kron(&w))?;
    let m = || vec![rotation_for(false), rotation_for(true)];
    let strategy = Strategy::new(
        "cloning",
        StrategyForm::Product,
        1,
        1,
        prepare,
        vec![Side::Zero, Side::One],
        [m(), m()],
        [vec![0], vec![0]],
        vec![],
    )?;
    for (r, s) in BB84_PAIRS {
        let (q0, q1, _) = qubit_success(&strategy, r, s)?;
        for fidelity in [q0, q1] {
            if (fidelity - bounds::P_BAR_1).abs() > 1e-9 {
                return Err(AdversaryError::ClonerFidelity { r, s, fidelity });
            }
        }
    }
    Ok(strategy)
}

pub fn builtin(name: &str) -> Option<Result<Strategy>> {
    match name {
        "breidbart" => Some(Ok(strategy_breidbart())),
        "random_guess" | "random_guess_0" => Some(Ok(strategy_random_guess(Side::Zero))),
        "random_guess_1" => Some(Ok(strategy_random_guess(Side::One))),
        "cloning" => Some(strategy_cloning()),
        _ => None,
    }
}

pub const BUILTIN_NAMES: [&str; 4] = ["breidbart", "random_guess_0", "random_guess_1", "cloning"];

const BB84_PAIRS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

/// `(P[r_0 = r], P[r_1 = r], P[both])` for one qubit prepared as `|ψ_r^s⟩`.
fn qubit_success(strategy: &Strategy, r: bool, s: bool) -> Result<(f64, f64, f64)> {
    let mut state = qsim::tensor(&StateVector::zero(strategy.ancilla_qubits), &qsim::bb84_state(r, s));
    state = qsim::apply_unitary(&state, &strategy.prepare, &(0..strategy.total_qubits()).collect::<Vec<_>>())?;
    let mut readout = Vec::new();
    for side in Side::BOTH {
        let share = strategy.share(side);
        if !share.is_empty() {
            state = qsim::apply_unitary(&state, &strategy.measurements[side.index()][s as usize], &share)?;
        }
        readout.push(share[strategy.readout[side.index()][0]]);
    }
    let q0 = qsim::readout_probability(&state, &readout[..1], &[r]);
    let q1 = qsim::readout_probability(&state, &readout[1..], &[r]);
    let both = qsim::readout_probability(&state, &readout, &[r, r]);
    Ok((q0, q1, both))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Exact,
    MonteCarlo,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Exact => "exact",
            EvalMode::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub strategy: String,
    pub n: usize,
    pub mode: EvalMode,
    pub p_n: f64,
    pub q0: f64,
    pub q1: f64,
    pub trials: u64,
    pub stderr: f64,
    pub bound: f64,
    pub ok: bool,
}

impl AttackResult {
    pub const CSV_HEADER: &'static str = "strategy,n,mode,p_n,q0,q1,trials,stderr,bound,ok";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.strategy,
            self.n,
            self.mode.as_str(),
            protocol::fmt_sig12(self.p_n),
            protocol::fmt_sig12(self.q0),
            protocol::fmt_sig12(self.q1),
            self.trials,
            protocol::fmt_sig12(self.stderr),
            protocol::fmt_sig12(self.bound),
            self.ok
        )
    }
}

/// Exact `p_n`, `q_0`, `q_1` of a product strategy, averaging over uniform
/// `(r_j, s_j)`.
pub fn evaluate_exact(strategy: &Strategy, n: usize) -> Result<AttackResult> {
    if strategy.form != StrategyForm::Product {
        return Err(AdversaryError::NotProduct(strategy.name.clone()));
    }
    let bound = bounds::p_bar(n)?;
    let (mut q0, mut q1, mut p) = (0.0, 0.0, 0.0);
    for (r, s) in BB84_PAIRS {
        let (a, b, both) = qubit_success(strategy, r, s)?;
        q0 += a / 4.0;
        q1 += b / 4.0;
        p += both / 4.0;
    }
    let p_n = p.powi(n as i32);
    Ok(AttackResult {
        strategy: strategy.name.clone(),
        n,
        mode: EvalMode::Exact,
        p_n,
        q0: q0.powi(n as i32),
        q1: q1.powi(n as i32),
        trials: 0,
        stderr: 0.0,
        bound,
        ok: bounds::security_predicate(p_n, n, EXACT_SLACK)?,
    })
}

/// Drives `B`, `B0`, `B1` according to a [`Strategy`].
pub struct StrategyBob<'s> {
    strategy: &'s Strategy,
    n: usize,
    /// Register handles of each group's local qubits; a group is one input
    /// qubit (product form) or all of them (general form).
    groups: Vec<Vec<QubitHandle>>,
    arrived: [Vec<bool>; 2],
    keys: [HashMap<usize, (bool, bool)>; 2],
    decoded: [Vec<Option<bool>>; 2],
}

impl<'s> StrategyBob<'s> {
    pub fn new(strategy: &'s Strategy, n: usize) -> Self {
        StrategyBob {
            strategy,
            n,
            groups: Vec::new(),
            arrived: [Vec::new(), Vec::new()],
            keys: [HashMap::new(), HashMap::new()],
            decoded: [vec![None; n], vec![None; n]],
        }
    }

    fn prepare(&mut self, run: &mut Run<'_>, inputs: &[QubitHandle]) -> Result<()> {
        let st = self.strategy;
        let bits: Vec<Vec<QubitHandle>> = match st.form {
            StrategyForm::Product => inputs.iter().map(|&h| vec![h]).collect(),
            StrategyForm::General => {
                if inputs.len() != self.n || inputs.len() != st.input_qubits {
                    return Err(AdversaryError::Malformed(format!(
                        "general strategy on {} qubits received {}",
                        st.input_qubits,
                        inputs.len()
                    )));
                }
                vec![inputs.to_vec()]
            }
        };
        for input in bits {
            let mut local = input.clone();
            local.extend(run.alloc_qubits(st.ancilla_qubits)?);
            run.apply(&st.prepare, &local)?;
            for side in Side::BOTH {
                let share: Vec<QubitHandle> = st.share(side).into_iter().map(|k| local[k]).collect();
                if !share.is_empty() {
                    run.send(AgentId::bob(side), Payload::Qubits(share), Channel::BobQuantum);
                }
                self.arrived[side.index()].push(false);
            }
            self.groups.push(local);
        }
        Ok(())
    }

    fn try_measure(&mut self, run: &mut Run<'_>, side: Side) -> Result<()> {
        let st = self.strategy;
        let i = side.index();
        let mut ready = Vec::new();
        for (g, local) in self.groups.iter().enumerate() {
            let bits: Vec<usize> = local[..st.input_qubits].iter().map(|&h| h as usize).collect();
            let has_share = st.share(side).is_empty() || self.arrived[i][g];
            if self.decoded[i][bits[0]].is_some() || !has_share || !bits.iter().all(|j| self.keys[i].contains_key(j)) {
                continue;
            }
            let s_index = bits.iter().enumerate().map(|(k, j)| (self.keys[i][j].0 as usize) << k).sum::<usize>();
            let share: Vec<QubitHandle> = st.share(side).into_iter().map(|k| local[k]).collect();
            run.apply(&st.measurements[i][s_index], &share)?;
            for (k, &j) in bits.iter().enumerate() {
                let r = run.measure(share[st.readout[i][k]], Basis::Computational)?;
                self.decoded[i][j] = Some(r ^ self.keys[i][&j].1);
                ready.push(j);
            }
        }
        if run.geometry().is_per_bit() {
            for j in ready {
                run.output(side, j, BitString::new(vec![self.decoded[i][j].expect("decoded")]));
            }
        } else if !ready.is_empty() && self.decoded[i].iter().all(Option::is_some) {
            run.output(side, 0, self.decoded[i].iter().map(|b| b.expect("decoded")).collect());
        }
        Ok(())
    }
}

impl BobAgents for StrategyBob<'_> {
    fn on_receive(&mut self, run: &mut Run<'_>, msg: &Message) -> protocol::Result<()> {
        let to_protocol = |e: AdversaryError| match e {
            AdversaryError::Protocol(p) => p,
            other => ProtocolError::Strategy(other.to_string()),
        };
        match (run.agent(), &msg.payload) {
            (AgentId::B, Payload::Qubits(hs)) => self.prepare(run, hs).map_err(to_protocol),
            (agent @ (AgentId::B0 | AgentId::B1), payload) => {
                let side = agent.side().expect("side agent");
                match payload {
                    Payload::Qubits(hs) => {
                        if let Some(g) = self.groups.iter().position(|l| l.contains(&hs[0])) {
                            self.arrived[side.index()][g] = true;
                        }
                    }
                    Payload::Keys { first, s, t } => {
                        for k in 0..s.len() {
                            self.keys[side.index()].insert(first + k, (s.get(k), t.get(k)));
                        }
                    }
                    Payload::Bits(_) => {}
                }
                self.try_measure(run, side).map_err(to_protocol)
            }
            _ => Ok(()),
        }
    }
}

/// Derived per-trial seed.
fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Success criterion for a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Acceptance {
    Exact,
    /// Accept outputs within Hamming distance `γn`.
    Noisy {
        gamma: f64,
    },
}

impl Acceptance {
    fn accepts(self, y: Option<&BitString>, x: &BitString) -> bool {
        match (self, y) {
            (_, None) => false,
            (Acceptance::Exact, Some(y)) => y == x,
            (Acceptance::Noisy { gamma }, Some(y)) => protocol::password_accepted(y, x, gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    both: u64,
    zero: u64,
    one: u64,
}

/// Runs one sampled protocol execution against `strategy`.
pub fn run_attack(strategy: &Strategy, geometry: &ProtocolGeometry, seed: u64) -> Result<Transcript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let n = geometry.n;
    let inputs = ProtocolInputs {
        x0: BitString::random(n, &mut rng),
        x1: BitString::random(n, &mut rng),
        b: None,
        r: None,
        s: None,
    };
    let mut bob = StrategyBob::new(strategy, n);
    Ok(run_protocol(geometry, &inputs, seed, &mut bob, &RunOptions::default())?)
}

/// Monte Carlo estimate of `p_n`, `q_0`, `q_1` from full causally scheduled
/// runs. Every transcript is validated.
pub fn evaluate_monte_carlo(
    strategy: &Strategy,
    geometry: &ProtocolGeometry,
    trials: u64,
    seed: u64,
    acceptance: Acceptance,
) -> Result<AttackResult> {
    if trials == 0 {
        return Err(AdversaryError::NoTrials);
    }
    let n = geometry.n;
    let requested = strategy.register_qubits(n);
    if requested > DEFAULT_QUBIT_BUDGET {
        return Err(AdversaryError::Budget { requested, budget: DEFAULT_QUBIT_BUDGET });
    }
    if strategy.form == StrategyForm::General {
        if strategy.input_qubits != n {
            return Err(AdversaryError::Malformed(format!(
                "general strategy for {} qubits, run has {n}",
                strategy.input_qubits
            )));
        }
        if !matches!(geometry.layout, Layout::MainSlab { .. }) {
            return Err(AdversaryError::Malformed("general strategies need all qubits at one point".into()));
        }
    }
    let report = validate_geometry(geometry)?;
    if !report.passed {
        return Err(AdversaryError::Geometry(report.condition));
    }
    let tally = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Tally> {
            let t = run_attack(strategy, geometry, trial_seed(seed, trial))?;
            let check = validate_transcript(&t);
            if !check.passed() {
                return Err(AdversaryError::InvalidTranscript { trial, violations: check.violations });
            }
            let ok0 = acceptance.accepts(t.output_string(Side::Zero).as_ref(), &t.inputs.x0);
            let ok1 = acceptance.accepts(t.output_string(Side::One).as_ref(), &t.inputs.x1);
            Ok(Tally { both: (ok0 && ok1) as u64, zero: ok0 as u64, one: ok1 as u64 })
        })
        .try_reduce(Tally::default, |a, b| {
            Ok(Tally { both: a.both + b.both, zero: a.zero + b.zero, one: a.one + b.one })
        })?;
    let t = trials as f64;
    let p_n = tally.both as f64 / t;
    let bound = match acceptance {
        Acceptance::Exact => bounds::p_bar(n)?,
        Acceptance::Noisy { gamma } => bounds::noisy_bound(gamma, n)?.min(1.0),
    };
    let sigma_at_bound = (bound * (1.0 - bound) / t).sqrt();
    Ok(AttackResult {
        strategy: strategy.name.clone(),
        n,
        mode: EvalMode::MonteCarlo,
        p_n,
        q0: tally.zero as f64 / t,
        q1: tally.one as f64 / t,
        trials,
        stderr: (p_n * (1.0 - p_n) / t).sqrt(),
        bound,
        ok: p_n <= bound + SIGMA_BAND * sigma_at_bound,
    })
}

// ---------------------------------------------------------------------------
// Timelike relay

/// `B0` acts honestly for `b = 0` and relays `r`; `B1` relays `t_1`.
/// With `relaxed` the relays meet at `B` in the central lab, otherwise `r`
/// is sent on to `B1`.
struct RelayBob {
    relaxed: bool,
    qubits: Vec<QubitHandle>,
    keys0: Option<(BitString, BitString)>,
    r: Option<BitString>,
    t1: Option<BitString>,
}

impl RelayBob {
    fn finish(&mut self, run: &mut Run<'_>) {
        if let (Some(r), Some(t1)) = (&self.r, &self.t1) {
            let y = r ^ t1;
            run.output(Side::One, 0, y);
            self.r = None;
        }
    }
}

impl BobAgents for RelayBob {
    fn on_receive(&mut self, run: &mut Run<'_>, msg: &Message) -> protocol::Result<()> {
        let relay_target = if self.relaxed { AgentId::B } else { AgentId::B1 };
        match (run.agent(), &msg.payload) {
            (AgentId::B, Payload::Qubits(hs)) => {
                run.send(AgentId::B0, Payload::Qubits(hs.clone()), Channel::BobQuantum);
            }
            (AgentId::B0, Payload::Qubits(hs)) => self.qubits = hs.clone(),
            (AgentId::B0, Payload::Keys { s, t, .. }) => self.keys0 = Some((s.clone(), t.clone())),
            (AgentId::B1, Payload::Keys { t, .. }) => {
                if self.relaxed {
                    run.send(AgentId::B, Payload::Bits(t.clone()), Channel::BobClassical);
                } else {
                    self.t1 = Some(t.clone());
                    self.finish(run);
                }
            }
            (AgentId::B, Payload::Bits(bits)) | (AgentId::B1, Payload::Bits(bits)) => {
                if msg.sender == AgentId::B0 {
                    self.r = Some(bits.clone());
                } else {
                    self.t1 = Some(bits.clone());
                }
                self.finish(run);
            }
            _ => {}
        }
        if run.agent() == AgentId::B0 && !self.qubits.is_empty() {
            if let Some((s, t0)) = self.keys0.take() {
                let r: BitString = self
                    .qubits
                    .clone()
                    .into_iter()
                    .enumerate()
                    .map(|(j, h)| run.measure(h, Basis::bb84(s.get(j))))
                    .collect::<std::result::Result<_, _>>()?;
                run.output(Side::Zero, 0, &r ^ &t0);
                run.send(relay_target, Payload::Bits(r), Channel::BobClassical);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelayDemo {
    pub relaxed: bool,
    pub transcript: Transcript,
    pub report: TranscriptReport,
    /// Both outputs equal the inputs.
    pub outputs_correct: bool,
    /// Outputs correct and the transcript passes validation.
    pub success: bool,
    /// Arrival event of the relayed `r`.
    pub relay_arrival: Event,
    /// Sampled pairs between `R_0` and the declared side-1 region that are
    /// not spacelike separated.
    pub separation_violations: usize,
}

/// Runs the relay attack. `relaxed` declares side 1's region as a small
/// cone at `Q̄`, the earliest common future of `Q_0` and `Q_1`; otherwise the
/// original region `R_1` is kept.
pub fn timelike_relay_demo(
    h: f64,
    v: f64,
    x0: &BitString,
    x1: &BitString,
    seed: u64,
    relaxed: bool,
) -> Result<RelayDemo> {
    let n = x0.len();
    let geometry = ProtocolGeometry::main_slab(h, v, n);
    let report = validate_geometry(&geometry)?;
    if !report.passed {
        return Err(AdversaryError::Geometry(report.condition));
    }
    let r0 = geometry.regions(Side::Zero)?;
    let r1 = if relaxed {
        let q_bar = earliest_common_future(&geometry.q(Side::Zero), &geometry.q(Side::One))?;
        vec![OutputRegion::around(q_bar, v)?]
    } else {
        geometry.regions(Side::One)?
    };
    let (_, separation) = sample_region_separation(&r0, &r1, 12, 10);
    let options = RunOptions { regions: Some([r0, r1]), ..RunOptions::default() };
    let mut bob = RelayBob { relaxed, qubits: Vec::new(), keys0: None, r: None, t1: None };
    let inputs = ProtocolInputs { x0: x0.clone(), x1: x1.clone(), b: None, r: None, s: None };
    let transcript = run_protocol(&geometry, &inputs, seed, &mut bob, &options)?;
    let check = validate_transcript(&transcript);
    let relay_arrival = transcript
        .messages
        .iter()
        .find(|m| m.sender == AgentId::B0 && m.channel == Channel::BobClassical)
        .map(|m| m.receive_event)
        .ok_or_else(|| AdversaryError::Malformed("relay was never sent".into()))?;
    let outputs_correct = transcript.output_string(Side::Zero).as_ref() == Some(x0)
        && transcript.output_string(Side::One).as_ref() == Some(x1);
    Ok(RelayDemo {
        relaxed,
        success: outputs_correct && check.passed(),
        report: check,
        transcript,
        outputs_correct,
        relay_arrival,
        separation_violations: separation.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Violation;

    const P1: f64 = 0.853_553_390_593_273_8;

    #[test]
    fn breidbart_is_tight() {
        let one = evaluate_exact(&strategy_breidbart(), 1).unwrap();
        assert!((one.p_n - P1).abs() < 1e-12);
        assert!((one.q0 - P1).abs() < 1e-12 && (one.q1 - P1).abs() < 1e-12);
        let three = evaluate_exact(&strategy_breidbart(), 3).unwrap();
        assert!((three.p_n - 0.621_859_216_769).abs() < 1e-11);
        for n in 1..=6 {
            let r = evaluate_exact(&strategy_breidbart(), n).unwrap();
            assert!((r.p_n - bounds::p_bar(n).unwrap()).abs() < 1e-12);
            assert!(r.ok);
        }
    }

    #[test]
    fn random_guess_values() {
        for b in Side::BOTH {
            let r = evaluate_exact(&strategy_random_guess(b), 4).unwrap();
            assert!((r.p_n - 0.0625).abs() < 1e-12);
            let (qb, qo) = if b == Side::Zero { (r.q0, r.q1) } else { (r.q1, r.q0) };
            assert!((qb - 1.0).abs() < 1e-12 && (qo - 0.0625).abs() < 1e-12);
        }
        let two = evaluate_exact(&strategy_random_guess(Side::Zero), 2).unwrap();
        assert!((two.p_n - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cloning_values() {
        let c = strategy_cloning().unwrap();
        let r = evaluate_exact(&c, 1).unwrap();
        assert!((r.q0 + r.q1 - (1.0 + FRAC_1_SQRT_2)).abs() < 1e-12);
        assert!((r.q0 - r.q1).abs() < 1e-12);
        for (rr, s) in BB84_PAIRS {
            let (a, b, _) = qubit_success(&c, rr, s).unwrap();
            assert!((a - P1).abs() < 1e-12 && (b - P1).abs() < 1e-12);
        }
        assert!(r.p_n <= bounds::p_bar(1).unwrap() + EXACT_SLACK);
    }

    #[test]
    fn measurement_projectors_are_valid() {
        for st in [strategy_breidbart(), strategy_random_guess(Side::One), strategy_cloning().unwrap()] {
            for side in Side::BOTH {
                for s in 0..2 {
                    let ps = st.projectors(side, s);
                    let d = ps[0].nrows();
                    let sum = ps.iter().fold(DMatrix::zeros(d, d), |acc, p| acc + p);
                    assert!((sum - DMatrix::<Complex64>::identity(d, d)).norm() < 1e-9);
                    for (a, pa) in ps.iter().enumerate() {
                        assert!((pa - pa.adjoint()).norm() < 1e-9);
                        assert!((pa * pa - pa).norm() < 1e-9);
                        for pb in ps.iter().skip(a + 1) {
                            assert!((pa * pb).norm() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn exact_rejects_general_and_signalling_plans() {
        let mut general = strategy_breidbart();
        general.form = StrategyForm::General;
        assert!(matches!(evaluate_exact(&general, 1), Err(AdversaryError::NotProduct(_))));
        let b = strategy_breidbart();
        let err = Strategy::new(
            "leaky",
            StrategyForm::Product,
            1,
            1,
            b.prepare.clone(),
            b.owner.clone(),
            b.measurements.clone(),
            b.readout.clone(),
            vec![Relay { from: AgentId::B0, to: AgentId::B1 }],
        );
        assert!(matches!(err, Err(AdversaryError::Signalling { .. })));
    }

    #[test]
    fn product_strategies_are_monotone_in_n() {
        for st in [strategy_breidbart(), strategy_random_guess(Side::Zero), strategy_cloning().unwrap()] {
            let ps: Vec<f64> = (1..=8).map(|n| evaluate_exact(&st, n).unwrap().p_n).collect();
            assert!(ps.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn monte_carlo_matches_exact_small() {
        let g = ProtocolGeometry::main_slab(1.0, 0.1, 2);
        let r = evaluate_monte_carlo(&strategy_breidbart(), &g, 4000, 11, Acceptance::Exact).unwrap();
        let sigma = (0.7285533 * (1.0 - 0.7285533) / 4000.0f64).sqrt();
        assert!((r.p_n - 0.7285533).abs() < 4.0 * sigma, "{r:?}");
        assert!(r.ok);
        let again = evaluate_monte_carlo(&strategy_breidbart(), &g, 4000, 11, Acceptance::Exact).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn monte_carlo_per_bit_layout() {
        let g = ProtocolGeometry::per_bit(1.0, 0.2, 3);
        let r = evaluate_monte_carlo(&strategy_cloning().unwrap(), &g, 2000, 5, Acceptance::Exact).unwrap();
        assert!(r.ok);
        let rg = evaluate_monte_carlo(&strategy_random_guess(Side::One), &g, 500, 5, Acceptance::Exact).unwrap();
        assert_eq!(rg.q1, 1.0);
    }

    #[test]
    fn monte_carlo_budget_and_general_checks() {
        let g = ProtocolGeometry::main_slab(1.0, 0.1, 7);
        assert!(matches!(
            evaluate_monte_carlo(&strategy_breidbart(), &g, 10, 0, Acceptance::Exact),
            Err(AdversaryError::Budget { .. })
        ));
        let g2 = ProtocolGeometry::main_slab(1.0, 0.1, 2);
        assert!(matches!(
            evaluate_monte_carlo(&strategy_breidbart(), &g2, 0, 0, Acceptance::Exact),
            Err(AdversaryError::NoTrials)
        ));
    }

    /// Permutation unitary on `qubits` qubits mapping basis index `k` to `f(k)`.
    fn permutation(qubits: usize, f: impl Fn(usize) -> usize) -> UnitaryMatrix {
        let d = 1 << qubits;
        let mut m = vec![0.0; d * d];
        for k in 0..d {
            m[f(k) * d + k] = 1.0;
        }
        UnitaryMatrix::from_real(d, &m).unwrap()
    }

    /// Joint two-qubit strategy: Breidbart-rotate both qubits, copy each onto
    /// an ancilla, keep the originals on side 0 and the copies on side 1.
    fn joint_breidbart() -> Strategy {
        let b = Basis::Breidbart.change_of_basis().adjoint();
        let id2 = UnitaryMatrix::identity(2);
        let rotate = id2.kron(&id2).kron(&b.kron(&b));
        let copy = permutation(4, |k| k ^ ((k & 0b11) << 2));
        let id4 = UnitaryMatrix::identity(4);
        Strategy::new(
            "joint_breidbart",
            StrategyForm::General,
            2,
            2,
            copy.compose(&rotate).unwrap(),
            vec![Side::Zero, Side::Zero, Side::One, Side::One],
            [vec![id4.clone(); 4], vec![id4; 4]],
            [vec![0, 1], vec![0, 1]],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn general_strategy_runs_under_monte_carlo() {
        let st = joint_breidbart();
        assert!(matches!(evaluate_exact(&st, 2), Err(AdversaryError::NotProduct(_))));
        let g = ProtocolGeometry::main_slab(1.0, 0.1, 2);
        let trials = 4000;
        let r = evaluate_monte_carlo(&st, &g, trials, 9, Acceptance::Exact).unwrap();
        let p = bounds::p_bar(2).unwrap();
        assert!((r.p_n - p).abs() < 4.0 * (p * (1.0 - p) / trials as f64).sqrt(), "{r:?}");
        assert!(r.ok);
        let per_bit = ProtocolGeometry::per_bit(1.0, 0.1, 2);
        assert!(evaluate_monte_carlo(&st, &per_bit, 10, 0, Acceptance::Exact).is_err());
    }

    #[test]
    fn malformed_strategies_rejected() {
        let b = Basis::Breidbart.change_of_basis().adjoint();
        let id = UnitaryMatrix::identity(4);
        let empty_side = Strategy::new(
            "one_sided",
            StrategyForm::General,
            2,
            0,
            b.kron(&b),
            vec![Side::Zero, Side::Zero],
            [vec![id; 4], Vec::new()],
            [vec![0, 1], vec![]],
            vec![],
        );
        assert!(matches!(empty_side, Err(AdversaryError::Malformed(_))));
        let not_product = Strategy::new(
            "wide",
            StrategyForm::Product,
            2,
            0,
            b.kron(&b),
            vec![Side::Zero, Side::One],
            [vec![b.clone(); 4], vec![b.clone(); 4]],
            [vec![0], vec![0]],
            vec![],
        );
        assert!(matches!(not_product, Err(AdversaryError::Malformed(_))));
    }

    #[test]
    fn t_changes_do_not_change_measurement_statistics() {
        // Same seed, different x_1: side 0's raw outcomes r_0 = y_0 ⊕ t_0
        // must agree.
        let g = ProtocolGeometry::main_slab(1.0, 0.1, 3);
        let st = strategy_cloning().unwrap();
        for seed in 0..50 {
            let run = |x1: &str| {
                let inputs = ProtocolInputs {
                    x0: BitString::parse("010").unwrap(),
                    x1: BitString::parse(x1).unwrap(),
                    b: None,
                    r: None,
                    s: None,
                };
                let mut bob = StrategyBob::new(&st, 3);
                let t = run_protocol(&g, &inputs, seed, &mut bob, &RunOptions::default()).unwrap();
                let r = t.inputs.r.clone().unwrap();
                (
                    &t.output_string(Side::Zero).unwrap() ^ &(&r ^ &t.inputs.x0),
                    &t.output_string(Side::One).unwrap() ^ &(&r ^ &t.inputs.x1),
                )
            };
            let (a0, a1) = run("000");
            let (b0, b1) = run("111");
            assert_eq!(a0, b0);
            assert_eq!(a1, b1);
        }
    }

    #[test]
    fn relay_demo_relaxed_succeeds() {
        let x0 = BitString::parse("1011").unwrap();
        let x1 = BitString::parse("0110").unwrap();
        let d = timelike_relay_demo(1.0, 0.1, &x0, &x1, 3, true).unwrap();
        assert!(d.success, "{:?}", d.report);
        assert!((d.relay_arrival.t - 2.0).abs() < 1e-12 && d.relay_arrival.x.abs() < 1e-12);
        assert!(d.separation_violations > 0);
    }

    #[test]
    fn relay_demo_original_regions_rejected() {
        let x0 = BitString::parse("1011").unwrap();
        let x1 = BitString::parse("0110").unwrap();
        let d = timelike_relay_demo(1.0, 0.1, &x0, &x1, 3, false).unwrap();
        assert!(d.outputs_correct);
        assert!(!d.success);
        assert!(d.report.violations.iter().any(|v| matches!(v, Violation::OutsideRegion { side: Side::One, .. })));
        assert_eq!(d.separation_violations, 0);
        assert!((d.relay_arrival.t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_row_layout() {
        let r = evaluate_exact(&strategy_random_guess(Side::Zero), 2).unwrap();
        assert_eq!(AttackResult::CSV_HEADER.split(',').count(), r.csv_row().split(',').count());
        assert!(r.csv_row().starts_with("random_guess_0,2,exact,0.250000000000,"), "{}", r.csv_row());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"mode\":\"exact\""));
    }
}
