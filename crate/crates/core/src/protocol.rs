//! Causally scheduled execution of the SCOT protocol among six agents.
//!
//! Alice's agents `A`, `A0`, `A1` always follow the protocol. Bob's agents
//! `B`, `B0`, `B1` are driven by a [`BobAgents`] implementation: honest Bob
//! lives here, cheating strategies live in [`crate::adversary`].
//!
//! The scheduler is a priority queue on delivery time; ties are broken by
//! receiver and then by message sequence number. Local processing takes no
//! time and every message travels exactly at the speed of light between the
//! fixed laboratories.

use crate::bits::BitString;
use crate::qsim::{self, Basis, QsimError, StateVector, UnitaryMatrix, DEFAULT_QUBIT_BUDGET};
use crate::spacetime::{
    self, causal_relation, validate_geometry, Event, Layout, OutputRegion, ProtocolGeometry, Side, SpacetimeError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Spacetime(#[from] SpacetimeError),
    #[error("geometry rejected: {0}")]
    InvalidGeometry(String),
    #[error("input length mismatch: {0}")]
    LengthMismatch(String),
    #[error("flip probability {0} outside [0, 1/2]")]
    GammaOutOfRange(f64),
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error("strategy error: {0}")]
    Strategy(String),
    #[error("transcript parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentId {
    A,
    A0,
    A1,
    B,
    B0,
    B1,
}

impl AgentId {
    pub const ALL: [AgentId; 6] = [AgentId::A, AgentId::A0, AgentId::A1, AgentId::B, AgentId::B0, AgentId::B1];

    pub fn is_alice(self) -> bool {
        matches!(self, AgentId::A | AgentId::A0 | AgentId::A1)
    }

    /// The lab `L_i` the agent sits at, `None` for the central lab `L`.
    pub fn side(self) -> Option<Side> {
        match self {
            AgentId::A | AgentId::B => None,
            AgentId::A0 | AgentId::B0 => Some(Side::Zero),
            AgentId::A1 | AgentId::B1 => Some(Side::One),
        }
    }

    pub fn alice(side: Side) -> Self {
        match side {
            Side::Zero => AgentId::A0,
            Side::One => AgentId::A1,
        }
    }

    pub fn bob(side: Side) -> Self {
        match side {
            Side::Zero => AgentId::B0,
            Side::One => AgentId::B1,
        }
    }

    fn ordinal(self) -> u64 {
        self as u64
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentId::A => "A",
            AgentId::A0 => "A0",
            AgentId::A1 => "A1",
            AgentId::B => "B",
            AgentId::B0 => "B0",
            AgentId::B1 => "B1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AgentId::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// Alice's secure classical channels.
    AliceClassical,
    /// Bob's secure quantum channels.
    BobQuantum,
    /// Bob's classical links between his own labs.
    BobClassical,
    /// Handover between adjacent labs of Alice and Bob.
    CrossParty,
}

pub type QubitHandle = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Qubits(Vec<QubitHandle>),
    /// Basis bits `s` and pads `t_i` for bits `first..first + s.len()`.
    Keys {
        first: usize,
        s: BitString,
        t: BitString,
    },
    Bits(BitString),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Qubits(_) => "qubits",
            Payload::Keys { .. } => "keys",
            Payload::Bits(_) => "bits",
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(self, Payload::Qubits(_))
    }

    fn to_hex(&self) -> String {
        let bytes: Vec<u8> = match self {
            Payload::Qubits(hs) => hs.iter().flat_map(|h| h.to_be_bytes()).collect(),
            Payload::Keys { first, s, t } => {
                let mut b = Vec::new();
                b.extend((*first as u16).to_be_bytes());
                b.extend((s.len() as u16).to_be_bytes());
                b.extend(s.to_bytes());
                b.extend(t.to_bytes());
                b
            }
            Payload::Bits(bits) => {
                let mut b = (bits.len() as u16).to_be_bytes().to_vec();
                b.extend(bits.to_bytes());
                b
            }
        };
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn from_hex(kind: &str, hex: &str) -> Option<Self> {
        if !hex.len().is_multiple_of(2) {
            return None;
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).ok())
            .collect::<Option<Vec<u8>>>()?;
        let u16_at =
            |i: usize| -> Option<usize> { Some(u16::from_be_bytes([*bytes.get(i)?, *bytes.get(i + 1)?]) as usize) };
        match kind {
            "qubits" => {
                if bytes.len() % 4 != 0 {
                    return None;
                }
                Some(Payload::Qubits(bytes.chunks(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]])).collect()))
            }
            "keys" => {
                let (first, len) = (u16_at(0)?, u16_at(2)?);
                let w = len.div_ceil(8);
                if bytes.len() != 4 + 2 * w {
                    return None;
                }
                Some(Payload::Keys {
                    first,
                    s: BitString::from_bytes(&bytes[4..4 + w], len)?,
                    t: BitString::from_bytes(&bytes[4 + w..], len)?,
                })
            }
            "bits" | "output" => Some(Payload::Bits(BitString::from_bytes(bytes.get(2..)?, u16_at(0)?)?)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub send_event: Event,
    pub receive_event: Event,
    pub payload: Payload,
    pub channel: Channel,
}

/// Bits `first..first + bits.len()` of side `side`'s output string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub agent: AgentId,
    pub side: Side,
    pub event: Event,
    pub first_bit: usize,
    pub bits: BitString,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolInputs {
    pub x0: BitString,
    pub x1: BitString,
    /// Bob's choice bit; absent for adversarial runs.
    pub b: Option<Side>,
    /// Alice's secrets; drawn from Alice's random stream unless pinned.
    pub r: Option<BitString>,
    pub s: Option<BitString>,
}

impl ProtocolInputs {
    pub fn new(x0: BitString, x1: BitString, b: Side) -> Self {
        ProtocolInputs { x0, x1, b: Some(b), r: None, s: None }
    }

    pub fn with_secrets(mut self, r: BitString, s: BitString) -> Self {
        self.r = Some(r);
        self.s = Some(s);
        self
    }

    pub fn x(&self, side: Side) -> &BitString {
        match side {
            Side::Zero => &self.x0,
            Side::One => &self.x1,
        }
    }

    pub fn redacted(&self) -> Self {
        ProtocolInputs { r: None, s: None, ..self.clone() }
    }

    fn check(&self, n: usize) -> Result<()> {
        let lens = [
            Some(self.x0.len()),
            Some(self.x1.len()),
            self.r.as_ref().map(|r| r.len()),
            self.s.as_ref().map(|s| s.len()),
        ];
        if lens.iter().flatten().any(|&l| l != n) {
            return Err(ProtocolError::LengthMismatch(format!("expected {n} bits, got lengths {lens:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub geometry: ProtocolGeometry,
    pub inputs: ProtocolInputs,
    pub seed: u64,
    pub messages: Vec<Message>,
    pub outputs: Vec<OutputRecord>,
    /// Declared output regions per side: one per bit, or a single region
    /// covering all bits.
    pub regions: [Vec<OutputRegion>; 2],
    /// Agent that created each quantum handle.
    pub handle_origins: Vec<(QubitHandle, AgentId)>,
}

impl Transcript {
    /// Side `side`'s assembled output string, if every bit was output.
    pub fn output_string(&self, side: Side) -> Option<BitString> {
        let n = self.geometry.n;
        let mut bits = vec![None; n];
        for rec in self.outputs.iter().filter(|o| o.side == side) {
            for (k, &b) in rec.bits.as_slice().iter().enumerate() {
                *bits.get_mut(rec.first_bit + k)? = Some(b);
            }
        }
        bits.into_iter().collect::<Option<Vec<bool>>>().map(BitString::new)
    }

    /// Messages sent by any of Bob's agents to any of Alice's.
    pub fn alice_inbound_from_bob(&self) -> usize {
        self.messages.iter().filter(|m| !m.sender.is_alice() && m.receiver.is_alice()).count()
    }

    /// Line-delimited records:
    /// `kind,sender,receiver,t_send,x_send,t_recv,x_recv,payload-hex`.
    /// Output records use kind `output` with the producing agent as sender,
    /// the side index as receiver and the first bit index before the hex.
    pub fn to_records(&self) -> String {
        let mut out = format!("# seed={} n={}\n", self.seed, self.geometry.n);
        for m in &self.messages {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                m.payload.kind(),
                m.sender,
                m.receiver,
                fmt_sig12(m.send_event.t),
                fmt_sig12(m.send_event.x),
                fmt_sig12(m.receive_event.t),
                fmt_sig12(m.receive_event.x),
                m.payload.to_hex()
            ));
        }
        for o in &self.outputs {
            let t = fmt_sig12(o.event.t);
            let x = fmt_sig12(o.event.x);
            out.push_str(&format!(
                "output,{},{},{t},{x},{t},{x},{}:{}\n",
                o.agent,
                o.side,
                o.first_bit,
                Payload::Bits(o.bits.clone()).to_hex()
            ));
        }
        out
    }
}

/// One parsed line of [`Transcript::to_records`].
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: String,
    pub sender: AgentId,
    pub receiver: String,
    pub send: Event,
    pub receive: Event,
    pub payload: Payload,
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |reason: &str| ProtocolError::Parse { line: i + 1, reason: reason.to_string() };
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err("expected 8 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
        let sender = AgentId::parse(f[1]).ok_or_else(|| err("unknown sender"))?;
        let hex =
            if f[0] == "output" { f[7].split_once(':').ok_or_else(|| err("missing bit offset"))?.1 } else { f[7] };
        records.push(Record {
            kind: f[0].to_string(),
            sender,
            receiver: f[2].to_string(),
            send: Event::on_axis(num(f[3])?, num(f[4])?),
            receive: Event::on_axis(num(f[5])?, num(f[6])?),
            payload: Payload::from_hex(f[0], hex).ok_or_else(|| err("bad payload"))?,
        });
    }
    Ok(records)
}

/// Decimal rendering with 12 significant digits.
pub fn fmt_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0.00000000000".to_string() } else { v.to_string() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with("-0.") && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

// ---------------------------------------------------------------------------
// Scheduler

#[derive(Debug, Clone, Copy, PartialEq)]
enum Wakeup {
    Deliver(usize),
    /// Alice's handover of the qubit group starting at bit `first`.
    Handover {
        first: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    receiver: AgentId,
    seq: u64,
    wakeup: Wakeup,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.receiver.cmp(&other.receiver)).then(self.seq.cmp(&other.seq))
    }
}

/// Behaviour of Bob's three agents.
pub trait BobAgents {
    /// Called when one of Bob's agents (`run.agent()`) receives `msg`.
    fn on_receive(&mut self, run: &mut Run<'_>, msg: &Message) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub qubit_budget: usize,
    /// Replaces the geometry's output regions, e.g. for relaxed-region demos.
    pub regions: Option<[Vec<OutputRegion>; 2]>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { qubit_budget: DEFAULT_QUBIT_BUDGET, regions: None }
    }
}

/// State of one protocol execution, exposed to [`BobAgents`] callbacks.
pub struct Run<'g> {
    geometry: &'g ProtocolGeometry,
    budget: usize,
    now: Event,
    agent: AgentId,
    register: StateVector,
    queue: BinaryHeap<Reverse<Pending>>,
    next_seq: u64,
    messages: Vec<Message>,
    outputs: Vec<OutputRecord>,
    handle_origins: Vec<(QubitHandle, AgentId)>,
    rngs: Vec<ChaCha8Rng>,
    s: BitString,
    t: [BitString; 2],
}

/// Per-agent random streams derived from one run seed.
fn agent_rngs(seed: u64) -> Vec<ChaCha8Rng> {
    AgentId::ALL
        .iter()
        .map(|a| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(a.ordinal());
            rng
        })
        .collect()
}

impl<'g> Run<'g> {
    pub fn geometry(&self) -> &ProtocolGeometry {
        self.geometry
    }

    pub fn now(&self) -> Event {
        self.now
    }

    pub fn agent(&self) -> AgentId {
        self.agent
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rngs[self.agent.ordinal() as usize]
    }

    pub fn lab(&self, agent: AgentId) -> f64 {
        self.geometry.lab_x(agent.side())
    }

    /// Sends `payload` from the acting agent; it arrives at the receiver's
    /// lab after the light travel time.
    pub fn send(&mut self, receiver: AgentId, payload: Payload, channel: Channel) {
        let send_event = self.now;
        let dist = (self.lab(receiver) - send_event.x).abs();
        let receive_event = Event::on_axis(send_event.t + dist, self.lab(receiver));
        self.send_with_arrival(receiver, payload, channel, receive_event);
    }

    /// Like [`Run::send`] but with an explicit arrival event. Used to model
    /// malformed plans; [`validate_transcript`] flags any superluminal hop.
    pub fn send_with_arrival(&mut self, receiver: AgentId, payload: Payload, channel: Channel, receive_event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let index = self.messages.len();
        self.messages.push(Message {
            seq,
            sender: self.agent,
            receiver,
            send_event: self.now,
            receive_event,
            payload,
            channel,
        });
        self.queue.push(Reverse(Pending { time: receive_event.t, receiver, seq, wakeup: Wakeup::Deliver(index) }));
    }

    pub fn output(&mut self, side: Side, first_bit: usize, bits: BitString) {
        self.outputs.push(OutputRecord { agent: self.agent, side, event: self.now, first_bit, bits });
    }

    /// Fresh qubits in `|0⟩` created by the acting agent.
    pub fn alloc_qubits(&mut self, count: usize) -> Result<Vec<QubitHandle>> {
        let have = self.register.qubit_count();
        if have + count > self.budget {
            return Err(QsimError::BudgetExceeded { requested: have + count, budget: self.budget }.into());
        }
        self.register = qsim::tensor(&StateVector::zero(count), &self.register);
        let handles: Vec<QubitHandle> = (have..have + count).map(|q| q as QubitHandle).collect();
        self.handle_origins.extend(handles.iter().map(|&h| (h, self.agent)));
        Ok(handles)
    }

    pub fn apply(&mut self, u: &UnitaryMatrix, handles: &[QubitHandle]) -> Result<()> {
        let targets: Vec<usize> = handles.iter().map(|&h| h as usize).collect();
        self.register = qsim::apply_unitary(&self.register, u, &targets)?;
        Ok(())
    }

    pub fn measure(&mut self, handle: QubitHandle, basis: Basis) -> Result<bool> {
        let idx = self.agent.ordinal() as usize;
        let (k, post) = qsim::measure(&self.register, handle as usize, basis, &mut self.rngs[idx])?;
        self.register = post;
        Ok(k)
    }

    fn alice_step(&mut self, wakeup: Wakeup) -> Result<()> {
        match (self.agent, wakeup) {
            (AgentId::A, Wakeup::Handover { first, len }) => {
                let handles = (first..first + len).map(|j| j as QubitHandle).collect();
                self.send(AgentId::B, Payload::Qubits(handles), Channel::CrossParty);
                for side in Side::BOTH {
                    let keys =
                        Payload::Keys { first, s: self.s.slice(first, len), t: self.t[side.index()].slice(first, len) };
                    self.send(AgentId::alice(side), keys, Channel::AliceClassical);
                }
            }
            (AgentId::A0 | AgentId::A1, Wakeup::Deliver(i)) => {
                let payload = self.messages[i].payload.clone();
                if let Payload::Keys { .. } = payload {
                    let side = self.agent.side().expect("side agent");
                    self.send(AgentId::bob(side), payload, Channel::CrossParty);
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Executes one run with the given Bob behaviour. The geometry is not
/// validated here; see [`run_honest`] for the checked entry point.
pub fn run_protocol(
    geometry: &ProtocolGeometry,
    inputs: &ProtocolInputs,
    seed: u64,
    bob: &mut dyn BobAgents,
    options: &RunOptions,
) -> Result<Transcript> {
    let n = geometry.n;
    inputs.check(n)?;
    let mut rngs = agent_rngs(seed);
    let alice_rng = &mut rngs[AgentId::A.ordinal() as usize];
    let r = inputs.r.clone().unwrap_or_else(|| BitString::random(n, alice_rng));
    let s = inputs.s.clone().unwrap_or_else(|| BitString::random(n, alice_rng));
    if n > options.qubit_budget {
        return Err(QsimError::BudgetExceeded { requested: n, budget: options.qubit_budget }.into());
    }
    // Qubit j is handle j; the last prepared qubit is the most significant.
    let register =
        (0..n).fold(StateVector::basis(0, 0), |reg, j| qsim::tensor(&qsim::bb84_state(r.get(j), s.get(j)), &reg));
    let t = [&r ^ &inputs.x0, &r ^ &inputs.x1];
    let regions = match &options.regions {
        Some(r) => r.clone(),
        None => [geometry.regions(Side::Zero)?, geometry.regions(Side::One)?],
    };
    let mut run = Run {
        geometry,
        budget: options.qubit_budget,
        now: geometry.p(),
        agent: AgentId::A,
        register,
        queue: BinaryHeap::new(),
        next_seq: 0,
        messages: Vec::new(),
        outputs: Vec::new(),
        handle_origins: (0..n).map(|j| (j as QubitHandle, AgentId::A)).collect(),
        rngs,
        s: s.clone(),
        t,
    };
    let groups: Vec<(usize, usize)> = match geometry.layout {
        Layout::MainSlab { .. } => vec![(0, n)],
        Layout::PerBitPoints { .. } => (0..n).map(|j| (j, 1)).collect(),
    };
    for (first, len) in groups {
        let seq = run.next_seq;
        run.next_seq += 1;
        run.queue.push(Reverse(Pending {
            time: geometry.handover_time(first),
            receiver: AgentId::A,
            seq,
            wakeup: Wakeup::Handover { first, len },
        }));
    }
    while let Some(Reverse(p)) = run.queue.pop() {
        run.agent = p.receiver;
        run.now = match p.wakeup {
            Wakeup::Deliver(i) => run.messages[i].receive_event,
            Wakeup::Handover { first, .. } => geometry.p_bit(first),
        };
        if p.receiver.is_alice() {
            run.alice_step(p.wakeup)?;
        } else if let Wakeup::Deliver(i) = p.wakeup {
            let msg = run.messages[i].clone();
            bob.on_receive(&mut run, &msg)?;
        }
    }
    let mut recorded = inputs.clone();
    recorded.r = Some(r);
    recorded.s = Some(s);
    Ok(Transcript {
        geometry: *geometry,
        inputs: recorded,
        seed,
        messages: run.messages,
        outputs: run.outputs,
        regions,
        handle_origins: run.handle_origins,
    })
}

/// Honest Bob: `B` forwards every qubit to `B_b`, who measures qubit `j` in
/// `𝒟_{s_j}` and outputs `r_j ⊕ t_b^j`. Each outcome is flipped with
/// probability `gamma`.
#[derive(Debug, Clone)]
pub struct HonestBob {
    b: Side,
    gamma: f64,
    qubits: HashMap<usize, QubitHandle>,
    keys: HashMap<usize, (bool, bool)>,
    decoded: Vec<Option<bool>>,
}

impl HonestBob {
    pub fn new(b: Side, n: usize, gamma: f64) -> Self {
        HonestBob { b, gamma, qubits: HashMap::new(), keys: HashMap::new(), decoded: vec![None; n] }
    }
}

impl BobAgents for HonestBob {
    fn on_receive(&mut self, run: &mut Run<'_>, msg: &Message) -> Result<()> {
        let me = run.agent();
        if me == AgentId::B {
            if let Payload::Qubits(hs) = &msg.payload {
                run.send(AgentId::bob(self.b), Payload::Qubits(hs.clone()), Channel::BobQuantum);
            }
            return Ok(());
        }
        if me != AgentId::bob(self.b) {
            return Ok(());
        }
        match &msg.payload {
            Payload::Qubits(hs) => self.qubits.extend(hs.iter().map(|&h| (h as usize, h))),
            Payload::Keys { first, s, t } => {
                self.keys.extend((0..s.len()).map(|k| (first + k, (s.get(k), t.get(k)))));
            }
            Payload::Bits(_) => {}
        }
        let n = self.decoded.len();
        let mut ready = Vec::new();
        for j in 0..n {
            if self.decoded[j].is_some() {
                continue;
            }
            if let (Some(&h), Some(&(s, t))) = (self.qubits.get(&j), self.keys.get(&j)) {
                let mut r = run.measure(h, Basis::bb84(s))?;
                if self.gamma > 0.0 && run.rng().random::<f64>() < self.gamma {
                    r = !r;
                }
                self.decoded[j] = Some(r ^ t);
                ready.push(j);
            }
        }
        if run.geometry().is_per_bit() {
            for j in ready {
                run.output(self.b, j, BitString::new(vec![self.decoded[j].expect("decoded")]));
            }
        } else if !ready.is_empty() && self.decoded.iter().all(Option::is_some) {
            let y = self.decoded.iter().map(|b| b.expect("decoded")).collect();
            run.output(self.b, 0, y);
        }
        Ok(())
    }
}

fn checked_geometry(geometry: &ProtocolGeometry) -> Result<()> {
    let report = validate_geometry(geometry)?;
    if report.passed {
        Ok(())
    } else {
        Err(ProtocolError::InvalidGeometry(format!("condition {} not met", report.condition)))
    }
}

pub fn run_honest(
    geometry: &ProtocolGeometry,
    x0: &BitString,
    x1: &BitString,
    b: Side,
    seed: u64,
) -> Result<Transcript> {
    run_honest_with(geometry, &ProtocolInputs::new(x0.clone(), x1.clone(), b), seed)
}

/// Honest run with explicit inputs (secrets may be pinned).
pub fn run_honest_with(geometry: &ProtocolGeometry, inputs: &ProtocolInputs, seed: u64) -> Result<Transcript> {
    run_noisy_honest_with(geometry, inputs, 0.0, seed)
}

pub fn run_noisy_honest(
    geometry: &ProtocolGeometry,
    x0: &BitString,
    x1: &BitString,
    b: Side,
    gamma: f64,
    seed: u64,
) -> Result<Transcript> {
    run_noisy_honest_with(geometry, &ProtocolInputs::new(x0.clone(), x1.clone(), b), gamma, seed)
}

pub fn run_noisy_honest_with(
    geometry: &ProtocolGeometry,
    inputs: &ProtocolInputs,
    gamma: f64,
    seed: u64,
) -> Result<Transcript> {
    if !(0.0..=0.5).contains(&gamma) {
        return Err(ProtocolError::GammaOutOfRange(gamma));
    }
    checked_geometry(geometry)?;
    let b = inputs.b.ok_or_else(|| ProtocolError::LengthMismatch("honest run needs Bob's bit b".into()))?;
    let mut bob = HonestBob::new(b, geometry.n, gamma);
    run_protocol(geometry, inputs, seed, &mut bob, &RunOptions::default())
}

/// Password check of the computer `𝒞_i`: accept iff at most `γn` bits differ.
pub fn password_accepted(y: &BitString, x: &BitString, gamma: f64) -> bool {
    y.len() == x.len() && (y.hamming(x) as f64) <= gamma * x.len() as f64 + 1e-12
}

// ---------------------------------------------------------------------------
// Transcript validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Message `seq` arrives before light could.
    Superluminal {
        seq: u64,
    },
    /// Message `seq` leaves or arrives away from the agent's laboratory.
    Misplaced {
        seq: u64,
    },
    /// Message `seq` uses a channel the endpoints or payload may not use.
    ChannelSecurity {
        seq: u64,
        reason: String,
    },
    /// Quantum handle sent by an agent that does not hold it.
    Cloning {
        handle: QubitHandle,
        seq: u64,
    },
    UnknownHandle {
        handle: QubitHandle,
    },
    /// Output bit outside its declared region.
    OutsideRegion {
        side: Side,
        bit: usize,
        event: Event,
    },
    /// Output produced away from the producing agent's laboratory.
    OutputMisplaced {
        side: Side,
        agent: AgentId,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranscriptReport {
    pub messages_checked: usize,
    pub violations: Vec<Violation>,
}

impl TranscriptReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_transcript(t: &Transcript) -> TranscriptReport {
    let g = &t.geometry;
    let lab = |a: AgentId| g.lab_x(a.side());
    let mut violations = Vec::new();

    for m in &t.messages {
        if !causal_relation(&m.send_event, &m.receive_event).is_causal_future() {
            violations.push(Violation::Superluminal { seq: m.seq });
        }
        let at_lab = |e: &Event, a: AgentId| e.same_place(&Event::on_axis(e.t, lab(a)));
        if !at_lab(&m.send_event, m.sender) || !at_lab(&m.receive_event, m.receiver) {
            violations.push(Violation::Misplaced { seq: m.seq });
        }
        let reason = match m.channel {
            Channel::AliceClassical if !(m.sender.is_alice() && m.receiver.is_alice()) => {
                Some("Alice's channel links a non-Alice agent")
            }
            Channel::AliceClassical if !matches!(m.payload, Payload::Keys { .. }) => {
                Some("Alice's channel carries data that is not Alice's")
            }
            Channel::BobQuantum | Channel::BobClassical if m.sender.is_alice() || m.receiver.is_alice() => {
                Some("Bob's channel links an Alice agent")
            }
            Channel::BobClassical if m.payload.is_quantum() => Some("quantum payload on a classical channel"),
            Channel::CrossParty if m.sender.is_alice() == m.receiver.is_alice() => {
                Some("cross-party handover between agents of the same party")
            }
            _ => None,
        };
        if let Some(reason) = reason {
            violations.push(Violation::ChannelSecurity { seq: m.seq, reason: reason.to_string() });
        }
    }

    // Replay quantum handle ownership in send order.
    let mut holder: HashMap<QubitHandle, AgentId> = t.handle_origins.iter().copied().collect();
    let mut order: Vec<&Message> = t.messages.iter().filter(|m| m.payload.is_quantum()).collect();
    order.sort_by(|a, b| a.send_event.t.total_cmp(&b.send_event.t).then(a.seq.cmp(&b.seq)));
    for m in order {
        if let Payload::Qubits(hs) = &m.payload {
            for &h in hs {
                match holder.get(&h) {
                    None => violations.push(Violation::UnknownHandle { handle: h }),
                    Some(&a) if a != m.sender => violations.push(Violation::Cloning { handle: h, seq: m.seq }),
                    Some(_) => {
                        holder.insert(h, m.receiver);
                    }
                }
            }
        }
    }

    for o in &t.outputs {
        if !o.event.same_place(&Event::on_axis(o.event.t, lab(o.agent))) || o.agent.is_alice() {
            violations.push(Violation::OutputMisplaced { side: o.side, agent: o.agent });
        }
        let regions = &t.regions[o.side.index()];
        for k in 0..o.bits.len() {
            let bit = o.first_bit + k;
            let region = if regions.len() > 1 { regions.get(bit) } else { regions.first() };
            if !region.is_some_and(|r| spacetime::region_contains(r, &o.event)) {
                violations.push(Violation::OutsideRegion { side: o.side, bit, event: o.event });
            }
        }
    }

    TranscriptReport { messages_checked: t.messages.len(), violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab(n: usize) -> ProtocolGeometry {
        ProtocolGeometry::main_slab(1.0, 0.1, n)
    }

    fn bits(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    #[test]
    fn single_bit_run_outputs_x_b_at_q_b() {
        let t = run_honest(&slab(1), &bits("0"), &bits("1"), Side::One, 5).unwrap();
        assert_eq!(t.output_string(Side::One), Some(bits("1")));
        assert_eq!(t.output_string(Side::Zero), None);
        assert!(t.outputs[0].event.approx_eq(&slab(1).q(Side::One)));
        assert!(validate_transcript(&t).passed());
    }

    #[test]
    fn decoding_identity_with_pinned_secrets() {
        let (x0, x1) = (bits("1010"), bits("0111"));
        let (r, s) = (bits("1100"), bits("0110"));
        let inputs = ProtocolInputs::new(x0.clone(), x1.clone(), Side::Zero).with_secrets(r.clone(), s);
        let t = run_honest_with(&slab(4), &inputs, 1).unwrap();
        let t_b = t
            .messages
            .iter()
            .find_map(|m| match (&m.payload, m.receiver) {
                (Payload::Keys { t, .. }, AgentId::B0) => Some(t.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(&r ^ &t_b, x0);
        assert_eq!(t.output_string(Side::Zero), Some(x0));
    }

    #[test]
    fn exhaustive_correctness_n4_both_layouts() {
        for g in [slab(4), ProtocolGeometry::per_bit(1.0, 0.1, 4)] {
            for x0 in 0..16 {
                for x1 in 0..16 {
                    for b in Side::BOTH {
                        let (x0, x1) = (BitString::from_u64(x0, 4), BitString::from_u64(x1, 4));
                        let t = run_honest(&g, &x0, &x1, b, 99).unwrap();
                        let want = if b == Side::Zero { &x0 } else { &x1 };
                        assert_eq!(t.output_string(b).as_ref(), Some(want));
                        assert!(validate_transcript(&t).passed());
                        assert_eq!(t.alice_inbound_from_bob(), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn per_bit_outputs_at_q_b_j() {
        let g = ProtocolGeometry::per_bit(1.0, 0.1, 5);
        let t = run_honest(&g, &bits("10110"), &bits("00101"), Side::One, 3).unwrap();
        assert_eq!(t.outputs.len(), 5);
        for o in &t.outputs {
            assert_eq!(o.bits.len(), 1);
            assert!(o.event.approx_eq(&g.q_bit(Side::One, o.first_bit)));
        }
        let qubit_sends: Vec<f64> = t
            .messages
            .iter()
            .filter(|m| m.sender == AgentId::A && m.payload.is_quantum())
            .map(|m| m.send_event.t)
            .collect();
        for (j, time) in qubit_sends.iter().enumerate() {
            assert!((time - 0.1 * j as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            run_honest(&ProtocolGeometry::main_slab(1.0, 1.0, 1), &bits("0"), &bits("1"), Side::Zero, 0),
            Err(ProtocolError::InvalidGeometry(_))
        ));
        assert!(matches!(
            run_honest(&slab(2), &bits("0"), &bits("10"), Side::Zero, 0),
            Err(ProtocolError::LengthMismatch(_))
        ));
        assert!(matches!(
            run_noisy_honest(&slab(1), &bits("0"), &bits("1"), Side::Zero, 0.6, 0),
            Err(ProtocolError::GammaOutOfRange(_))
        ));
    }

    #[test]
    fn validation_flags_superluminal_and_region_violations() {
        let g = slab(2);
        let honest = run_honest(&g, &bits("01"), &bits("11"), Side::Zero, 8).unwrap();

        let mut fast = honest.clone();
        let m = fast.messages.iter_mut().find(|m| m.channel == Channel::BobQuantum).unwrap();
        m.receive_event.t -= 0.5;
        let report = validate_transcript(&fast);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Superluminal { .. })));

        let mut early = honest.clone();
        early.outputs[0].event = Event::on_axis(0.5, -1.0);
        assert!(validate_transcript(&early).violations.iter().any(|v| matches!(v, Violation::OutsideRegion { .. })));

        let mut cloned = honest.clone();
        let mut dup = cloned.messages.iter().find(|m| m.channel == Channel::BobQuantum).unwrap().clone();
        dup.receiver = AgentId::B1;
        dup.receive_event = Event::on_axis(1.0, 1.0);
        dup.seq = 1000;
        cloned.messages.push(dup);
        assert!(validate_transcript(&cloned).violations.iter().any(|v| matches!(v, Violation::Cloning { .. })));

        let mut leak = honest;
        let m = leak.messages.iter_mut().find(|m| m.channel == Channel::AliceClassical).unwrap();
        m.payload = Payload::Bits(bits("1"));
        assert!(validate_transcript(&leak).violations.iter().any(|v| matches!(v, Violation::ChannelSecurity { .. })));
    }

    #[test]
    fn identical_seeds_give_identical_transcripts() {
        let g = slab(3);
        let a = run_honest(&g, &bits("011"), &bits("110"), Side::One, 17).unwrap();
        let b = run_honest(&g, &bits("011"), &bits("110"), Side::One, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_records(), b.to_records());
        let c = run_honest(&g, &bits("011"), &bits("110"), Side::One, 18).unwrap();
        assert_ne!(a.inputs.r.as_ref().zip(a.inputs.s.as_ref()), c.inputs.r.as_ref().zip(c.inputs.s.as_ref()));
    }

    #[test]
    fn alice_view_is_independent_of_b() {
        let g = slab(3);
        let alice_view = |b| {
            let t = run_honest(&g, &bits("011"), &bits("101"), b, 4).unwrap();
            let mut v: Vec<_> = t
                .messages
                .iter()
                .filter(|m| m.receiver.is_alice())
                .map(|m| (m.sender, m.receiver, m.payload.clone()))
                .collect();
            v.sort_by_key(|(s, r, _)| (*s, *r));
            v
        };
        assert_eq!(alice_view(Side::Zero), alice_view(Side::One));
    }

    #[test]
    fn noisy_zero_gamma_matches_noiseless() {
        let g = slab(4);
        let a = run_honest(&g, &bits("0110"), &bits("1011"), Side::Zero, 21).unwrap();
        let b = run_noisy_honest(&g, &bits("0110"), &bits("1011"), Side::Zero, 0.0, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn password_acceptance_rule() {
        let x = BitString::zeros(100);
        let mut y = x.clone();
        y.set(3, true);
        assert!(password_accepted(&y, &x, 0.015));
        y.set(4, true);
        assert!(!password_accepted(&y, &x, 0.015));
        assert!(password_accepted(&y, &x, 0.02));
    }

    #[test]
    fn noisy_hamming_distance_is_binomial() {
        // 1000 runs of n = 1000 with γ = 0.015: mean distance 15, and the
        // sample mean has σ = sqrt(nγ(1−γ)/runs).
        let n = 1000;
        let g = slab(n);
        let (gamma, runs) = (0.015, 1000);
        assert!(validate_geometry(&g).unwrap().passed);
        let x0 = BitString::from_u64(0, n);
        let total: usize = (0..runs)
            .map(|k| {
                let inputs = ProtocolInputs::new(x0.clone(), x0.clone(), Side::Zero)
                    .with_secrets(BitString::zeros(n), BitString::zeros(n));
                noisy_distance(&g, &inputs, gamma, k)
            })
            .sum();
        let mean = total as f64 / runs as f64;
        let sigma = (n as f64 * gamma * (1.0 - gamma) / runs as f64).sqrt();
        assert!((mean - 15.0).abs() < 4.0 * sigma, "mean {mean}, sigma {sigma}");
    }

    /// Distance between `x_b` and the noisy output. Large n exceeds the dense
    /// register budget, so each bit is run as an independent one-qubit
    /// protocol with its own derived seed.
    fn noisy_distance(g: &ProtocolGeometry, inputs: &ProtocolInputs, gamma: f64, seed: u64) -> usize {
        let one = ProtocolGeometry { n: 1, ..*g };
        (0..g.n)
            .filter(|&j| {
                let sub = ProtocolInputs {
                    x0: inputs.x0.slice(j, 1),
                    x1: inputs.x1.slice(j, 1),
                    b: inputs.b,
                    r: inputs.r.as_ref().map(|r| r.slice(j, 1)),
                    s: inputs.s.as_ref().map(|s| s.slice(j, 1)),
                };
                let mut bob = HonestBob::new(Side::Zero, 1, gamma);
                let seed = seed * 1_000_003 + j as u64;
                let t = run_protocol(&one, &sub, seed, &mut bob, &RunOptions::default()).unwrap();
                t.output_string(Side::Zero) != Some(sub.x0.clone())
            })
            .count()
    }

    #[test]
    fn records_round_trip_and_use_12_significant_digits() {
        let g = ProtocolGeometry::per_bit(1.0, 0.1, 3);
        let t = run_honest(&g, &bits("101"), &bits("011"), Side::Zero, 2).unwrap();
        let text = t.to_records();
        let recs = parse_records(&text).unwrap();
        assert_eq!(recs.len(), t.messages.len() + t.outputs.len());
        for (rec, m) in recs.iter().zip(&t.messages) {
            assert_eq!(rec.sender, m.sender);
            assert_eq!(rec.payload, m.payload);
            assert!((rec.receive.t - m.receive_event.t).abs() < 1e-11);
        }
        assert_eq!(fmt_sig12(1.0), "1.00000000000");
        assert_eq!(fmt_sig12(-1.0), "-1.00000000000");
        assert_eq!(fmt_sig12(0.1), "0.100000000000");
        assert_eq!(fmt_sig12(123.456), "123.456000000");
        assert_eq!(fmt_sig12(0.0), "0.00000000000");
        assert!(parse_records("qubits,A,B,0,0,0,0,zz\n").is_err());
    }
}
