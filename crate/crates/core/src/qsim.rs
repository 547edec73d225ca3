//! Dense state-vector simulator for a handful of qubits.
//!
//! Qubit ordering is little-endian: qubit `q` is bit `q` of the amplitude
//! index. [`tensor`] follows the Kronecker convention, so in `tensor(a, b)`
//! the qubits of `b` come first.

use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_8};
use thiserror::Error;

pub const SCALAR_TOL: f64 = 1e-12;
pub const NORM_TOL: f64 = 1e-10;
pub const MATRIX_TOL: f64 = 1e-9;

/// Default cap on the total register size.
pub const DEFAULT_QUBIT_BUDGET: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("amplitude vector length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("matrix is not unitary (‖U†U − I‖_F = {0:e})")]
    NotUnitary(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("qubit index {index} out of range for {count} qubits")]
    QubitOutOfRange { index: usize, count: usize },
    #[error("projection has zero norm (numerical degradation)")]
    ZeroNormProjection,
    #[error("register of {requested} qubits exceeds the budget of {budget}")]
    BudgetExceeded { requested: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, QsimError>;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(QsimError::NotPowerOfTwo(len));
        }
        let norm_sqr: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > NORM_TOL {
            return Err(QsimError::NotNormalized(norm_sqr));
        }
        Ok(StateVector { amplitudes })
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::from_amplitudes(amplitudes.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    /// Computational basis state `|index⟩` on `qubits` qubits.
    pub fn basis(qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << qubits];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        StateVector { amplitudes }
    }

    pub fn zero(qubits: usize) -> Self {
        Self::basis(qubits, 0)
    }

    pub fn qubit_count(&self) -> usize {
        self.amplitudes.len().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn approx_eq(&self, other: &StateVector, tol: f64) -> bool {
        self.amplitudes.len() == other.amplitudes.len()
            && self.amplitudes.iter().zip(&other.amplitudes).all(|(a, b)| (a - b).norm() <= tol)
    }

    /// One `re,im` pair per line.
    pub fn dump(&self) -> String {
        self.amplitudes.iter().map(|a| format!("{},{}\n", a.re, a.im)).collect()
    }

    fn check_qubit(&self, index: usize) -> Result<()> {
        let count = self.qubit_count();
        if index < count {
            Ok(())
        } else {
            Err(QsimError::QubitOutOfRange { index, count })
        }
    }
}

/// Kronecker product `a ⊗ b`; the qubits of `b` become the low qubits.
pub fn tensor(a: &StateVector, b: &StateVector) -> StateVector {
    let mut amplitudes = Vec::with_capacity(a.amplitudes.len() * b.amplitudes.len());
    for x in &a.amplitudes {
        for y in &b.amplitudes {
            amplitudes.push(x * y);
        }
    }
    StateVector { amplitudes }
}

/// `|ψ_r^s⟩`: `|r⟩` for `s = 0`, `(|0⟩ + (−1)^r |1⟩)/√2` for `s = 1`.
pub fn bb84_state(r: bool, s: bool) -> StateVector {
    let amps = match (s, r) {
        (false, false) => [1.0, 0.0],
        (false, true) => [0.0, 1.0],
        (true, false) => [FRAC_1_SQRT_2, FRAC_1_SQRT_2],
        (true, true) => [FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
    };
    StateVector { amplitudes: amps.iter().map(|&a| Complex64::new(a, 0.0)).collect() }
}

/// `(|00⟩ + |11⟩)/√2`.
pub fn bell_phi_plus() -> StateVector {
    StateVector::from_real(&[FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2]).expect("normalized")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    /// `𝒟₀ = {|0⟩, |1⟩}`.
    Computational,
    /// `𝒟₁ = {|+⟩, |−⟩}`.
    Hadamard,
    /// `{cos(π/8)|0⟩ + sin(π/8)|1⟩, −sin(π/8)|0⟩ + cos(π/8)|1⟩}`.
    Breidbart,
}

impl Basis {
    /// The BB84 basis selected by the basis bit `s`.
    pub fn bb84(s: bool) -> Self {
        if s {
            Basis::Hadamard
        } else {
            Basis::Computational
        }
    }

    fn vectors(self) -> [[f64; 2]; 2] {
        match self {
            Basis::Computational => [[1.0, 0.0], [0.0, 1.0]],
            Basis::Hadamard => [[FRAC_1_SQRT_2, FRAC_1_SQRT_2], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2]],
            Basis::Breidbart => {
                let (c, s) = (FRAC_PI_8.cos(), FRAC_PI_8.sin());
                [[c, s], [-s, c]]
            }
        }
    }

    /// Unitary whose columns are the basis vectors; its adjoint rotates this
    /// basis onto the computational one.
    pub fn change_of_basis(self) -> UnitaryMatrix {
        let [v0, v1] = self.vectors();
        UnitaryMatrix::from_real(2, &[v0[0], v1[0], v0[1], v1[1]]).expect("orthonormal basis")
    }
}

pub fn basis_states(b: Basis) -> (StateVector, StateVector) {
    let [v0, v1] = b.vectors();
    (StateVector::from_real(&v0).expect("unit"), StateVector::from_real(&v1).expect("unit"))
}

/// Component `⟨e_k|` of the pair `(α_i, α_j)` differing only in the measured qubit.
fn project_pair(e: [f64; 2], lo: Complex64, hi: Complex64) -> Complex64 {
    lo * e[0] + hi * e[1]
}

pub fn born_probability(state: &StateVector, qubit: usize, basis: Basis, outcome: bool) -> Result<f64> {
    state.check_qubit(qubit)?;
    let e = basis.vectors()[outcome as usize];
    let bit = 1usize << qubit;
    let p = state
        .amplitudes
        .iter()
        .enumerate()
        .filter(|(i, _)| i & bit == 0)
        .map(|(i, &lo)| project_pair(e, lo, state.amplitudes[i | bit]).norm_sqr())
        .sum::<f64>();
    Ok(p.clamp(0.0, 1.0))
}

/// Projective single-qubit measurement. Returns the outcome and the
/// renormalized post-measurement state.
pub fn measure<R: Rng + ?Sized>(
    state: &StateVector,
    qubit: usize,
    basis: Basis,
    rng: &mut R,
) -> Result<(bool, StateVector)> {
    let p0 = born_probability(state, qubit, basis, false)?;
    let outcome = rng.random::<f64>() >= p0;
    let p = if outcome { 1.0 - p0 } else { p0 };
    if p <= f64::EPSILON * f64::EPSILON {
        return Err(QsimError::ZeroNormProjection);
    }
    let e = basis.vectors()[outcome as usize];
    let scale = 1.0 / p.sqrt();
    let bit = 1usize << qubit;
    let mut amplitudes = state.amplitudes.clone();
    for i in (0..amplitudes.len()).filter(|i| i & bit == 0) {
        let c = project_pair(e, state.amplitudes[i], state.amplitudes[i | bit]) * scale;
        amplitudes[i] = c * e[0];
        amplitudes[i | bit] = c * e[1];
    }
    Ok((outcome, StateVector { amplitudes }))
}

/// Square complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl UnitaryMatrix {
    pub fn new(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dim * dim || !dim.is_power_of_two() {
            return Err(QsimError::DimensionMismatch(format!("{} entries for dimension {dim}", data.len())));
        }
        let m = UnitaryMatrix { dim, data };
        let err = m.unitarity_error();
        if err > MATRIX_TOL {
            return Err(QsimError::NotUnitary(err));
        }
        Ok(m)
    }

    pub fn from_real(dim: usize, data: &[f64]) -> Result<Self> {
        Self::new(dim, data.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        UnitaryMatrix { dim, data }
    }

    pub fn hadamard() -> Self {
        Self::from_real(2, &[FRAC_1_SQRT_2, FRAC_1_SQRT_2, FRAC_1_SQRT_2, -FRAC_1_SQRT_2]).expect("unitary")
    }

    /// Controlled NOT on a two-qubit space, control on local qubit 0.
    pub fn cnot_01() -> Self {
        let mut m = vec![0.0; 16];
        for (row, col) in [(0, 0), (3, 1), (2, 2), (1, 3)] {
            m[row * 4 + col] = 1.0;
        }
        Self::from_real(4, &m).expect("permutation")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                data[c * n + r] = self.data[r * n + c].conj();
            }
        }
        UnitaryMatrix { dim: n, data }
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &UnitaryMatrix) -> Result<Self> {
        if self.dim != other.dim {
            return Err(QsimError::DimensionMismatch(format!("{} vs {}", self.dim, other.dim)));
        }
        let n = self.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    data[r * n + c] += a * other.data[k * n + c];
                }
            }
        }
        Ok(UnitaryMatrix { dim: n, data })
    }

    /// Kronecker product `self ⊗ low`; `low` acts on the low qubits.
    pub fn kron(&self, low: &UnitaryMatrix) -> Self {
        let (n, m) = (self.dim, low.dim);
        let dim = n * m;
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for r1 in 0..n {
            for c1 in 0..n {
                let a = self.data[r1 * n + c1];
                for r2 in 0..m {
                    for c2 in 0..m {
                        data[(r1 * m + r2) * dim + c1 * m + c2] = a * low.data[r2 * m + c2];
                    }
                }
            }
        }
        UnitaryMatrix { dim, data }
    }

    /// `‖U†U − I‖_F`.
    pub fn unitarity_error(&self) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    s += self.data[k * n + r].conj() * self.data[k * n + c];
                }
                if r == c {
                    s -= 1.0;
                }
                acc += s.norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn apply_to(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim).map(|r| (0..self.dim).map(|c| self.data[r * self.dim + c] * v[c]).sum()).collect()
    }
}

/// Applies `u` to the listed qubits; `targets[k]` receives local qubit `k` of `u`.
pub fn apply_unitary(state: &StateVector, u: &UnitaryMatrix, targets: &[usize]) -> Result<StateVector> {
    if u.qubits() != targets.len() {
        return Err(QsimError::DimensionMismatch(format!("{}-qubit unitary on {} targets", u.qubits(), targets.len())));
    }
    for (k, &t) in targets.iter().enumerate() {
        state.check_qubit(t)?;
        if targets[..k].contains(&t) {
            return Err(QsimError::DimensionMismatch(format!("repeated target {t}")));
        }
    }
    let err = u.unitarity_error();
    if err > MATRIX_TOL {
        return Err(QsimError::NotUnitary(err));
    }
    let mask: usize = targets.iter().map(|&t| 1usize << t).sum();
    let scatter = |local: usize| -> usize {
        targets.iter().enumerate().filter(|(k, _)| local >> k & 1 == 1).map(|(_, &t)| 1usize << t).sum()
    };
    let offsets: Vec<usize> = (0..u.dim()).map(scatter).collect();
    let mut out = state.amplitudes.clone();
    let mut local = vec![Complex64::new(0.0, 0.0); u.dim()];
    for base in (0..state.amplitudes.len()).filter(|i| i & mask == 0) {
        for (k, off) in offsets.iter().enumerate() {
            local[k] = state.amplitudes[base | off];
        }
        for (k, value) in u.apply_to(&local).into_iter().enumerate() {
            out[base | offsets[k]] = value;
        }
    }
    Ok(StateVector { amplitudes: out })
}

/// Probability that the listed qubits read `bits` in the computational basis.
pub fn readout_probability(state: &StateVector, qubits: &[usize], bits: &[bool]) -> f64 {
    let (mask, want) =
        qubits.iter().zip(bits).fold((0usize, 0usize), |(m, w), (&q, &b)| (m | 1 << q, if b { w | 1 << q } else { w }));
    state.amplitudes.iter().enumerate().filter(|(i, _)| i & mask == want).map(|(_, a)| a.norm_sqr()).sum()
}
