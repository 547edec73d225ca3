//! Constrained maximization of `μ₀` over 24 real variables.
//!
//! `a_{jkl} = c_{jkl} + i d_{jkl}` and `⟨α_{0kl}|α_{1kl}⟩ = g_{kl} + i h_{kl}`.
//! The feasible set is two unit spheres (one per `j`), four closed unit
//! disks (one per overlap) and two bilinear equalities expressing
//! `⟨Ψ₀⁰|Ψ₁⁰⟩ = 0`.
//!
//! The solver is an augmented Lagrangian on the two equalities. Inner
//! problems are solved by projected gradient ascent with Armijo
//! backtracking; spheres and disks are handled exactly by projection. A
//! Gauss-Newton polish on the active constraints finishes each restart.

use crate::adversary::{Strategy, StrategyForm};
use crate::qsim::{self, StateVector};
use crate::spacetime::Side;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

pub const DIM: usize = 24;

/// `2 + √2`.
pub const MU0_MAX: f64 = 2.0 + std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("at least one restart is required")]
    NoRestarts,
    #[error("strategy '{0}' is not a single-qubit product strategy")]
    NotSingleQubit(String),
    #[error("witness file needs {DIM} values, found {0}")]
    WitnessLength(usize),
    #[error("bad witness value on line {0}")]
    WitnessValue(usize),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

/// The 24 variables, stored flat in the order
/// `c000..c111, d000..d111, g00..g11, h00..h11`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mu0Variables {
    pub x: [f64; DIM],
}

pub fn ci(j: usize, k: usize, l: usize) -> usize {
    4 * j + 2 * k + l
}
pub fn di(j: usize, k: usize, l: usize) -> usize {
    8 + ci(j, k, l)
}
pub fn gi(k: usize, l: usize) -> usize {
    16 + 2 * k + l
}
pub fn hi(k: usize, l: usize) -> usize {
    20 + 2 * k + l
}

impl Default for Mu0Variables {
    fn default() -> Self {
        Mu0Variables { x: [0.0; DIM] }
    }
}

impl Mu0Variables {
    pub fn a(&self, j: usize, k: usize, l: usize) -> Complex64 {
        Complex64::new(self.x[ci(j, k, l)], self.x[di(j, k, l)])
    }

    pub fn overlap(&self, k: usize, l: usize) -> Complex64 {
        Complex64::new(self.x[gi(k, l)], self.x[hi(k, l)])
    }

    /// The witness text: one value per line in storage order.
    pub fn to_witness(&self) -> String {
        self.x.iter().map(|v| format!("{v:.17e}\n")).collect()
    }

    pub fn from_witness(text: &str) -> Result<Self> {
        let vals: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if vals.len() != DIM {
            return Err(OptimizerError::WitnessLength(vals.len()));
        }
        let mut x = [0.0; DIM];
        for (i, v) in vals.iter().enumerate() {
            x[i] = v.parse().map_err(|_| OptimizerError::WitnessValue(i + 1))?;
        }
        Ok(Mu0Variables { x })
    }
}

/// `Re` and `Im` of `a*_{0kl} a_{1kl} ⟨α_{0kl}|α_{1kl}⟩` with their gradients.
struct PairTerm {
    re: f64,
    im: f64,
    idx: [usize; 6],
    grad_re: [f64; 6],
    grad_im: [f64; 6],
}

fn pair_term(x: &[f64; DIM], k: usize, l: usize) -> PairTerm {
    let idx = [ci(0, k, l), di(0, k, l), ci(1, k, l), di(1, k, l), gi(k, l), hi(k, l)];
    let [c0, d0, c1, d1, g, h] = idx.map(|i| x[i]);
    let dot = c0 * c1 + d0 * d1;
    let cross = c0 * d1 - c1 * d0;
    PairTerm {
        re: g * dot - h * cross,
        im: g * cross + h * dot,
        idx,
        grad_re: [g * c1 - h * d1, g * d1 + h * c1, g * c0 + h * d0, g * d0 - h * c0, dot, -cross],
        grad_im: [g * d1 + h * c1, -g * c1 + h * d1, -g * d0 + h * c0, g * c0 + h * d0, cross, dot],
    }
}

pub fn mu0_objective(v: &Mu0Variables) -> f64 {
    mu0_with_gradient(v).0
}

/// `μ₀` and its gradient.
pub fn mu0_with_gradient(v: &Mu0Variables) -> (f64, [f64; DIM]) {
    let x = &v.x;
    let mut grad = [0.0; DIM];
    let mut value = 2.0;
    for l in 0..2 {
        for (j, sign) in [(0, 1.0), (1, -1.0)] {
            let (c, d) = (x[ci(j, 0, l)], x[di(j, 0, l)]);
            value += sign * (c * c + d * d);
            grad[ci(j, 0, l)] += 2.0 * sign * c;
            grad[di(j, 0, l)] += 2.0 * sign * d;
        }
    }
    for k in 0..2 {
        let t = pair_term(x, k, 0);
        value += 2.0 * t.re;
        for (i, g) in t.idx.iter().zip(t.grad_re) {
            grad[*i] += 2.0 * g;
        }
    }
    (value, grad)
}

/// Both orthogonality expressions and their gradients.
fn orthogonality(x: &[f64; DIM]) -> ([f64; 2], [[f64; DIM]; 2]) {
    let mut o = [0.0; 2];
    let mut grad = [[0.0; DIM]; 2];
    for k in 0..2 {
        for l in 0..2 {
            let t = pair_term(x, k, l);
            o[0] += t.re;
            o[1] += t.im;
            for m in 0..6 {
                grad[0][t.idx[m]] += t.grad_re[m];
                grad[1][t.idx[m]] += t.grad_im[m];
            }
        }
    }
    (o, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub norm: [f64; 2],
    pub orthogonality: [f64; 2],
    pub caps: [f64; 4],
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.norm.iter().chain(&self.orthogonality).chain(&self.caps).fold(0.0, |a, &b| a.max(b))
    }
}

pub fn constraint_residuals(v: &Mu0Variables) -> Residuals {
    let x = &v.x;
    let mut norm = [0.0; 2];
    for (j, n) in norm.iter_mut().enumerate() {
        let s: f64 = (0..4).map(|kl| x[ci(j, kl / 2, kl % 2)].powi(2) + x[di(j, kl / 2, kl % 2)].powi(2)).sum();
        *n = (s - 1.0).abs();
    }
    let (o, _) = orthogonality(x);
    let mut caps = [0.0; 4];
    for (kl, cap) in caps.iter_mut().enumerate() {
        let (k, l) = (kl / 2, kl % 2);
        *cap = (x[gi(k, l)].powi(2) + x[hi(k, l)].powi(2) - 1.0).max(0.0);
    }
    Residuals { norm, orthogonality: [o[0].abs(), o[1].abs()], caps }
}

/// Projection onto the spheres and disks.
fn project(x: &mut [f64; DIM]) {
    for j in 0..2 {
        let idx: Vec<usize> = (0..4).flat_map(|kl| [ci(j, kl / 2, kl % 2), di(j, kl / 2, kl % 2)]).collect();
        let norm = idx.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
        if norm > 0.0 {
            idx.iter().for_each(|&i| x[i] /= norm);
        } else {
            x[idx[0]] = 1.0;
        }
    }
    for kl in 0..4 {
        let (g, h) = (gi(kl / 2, kl % 2), hi(kl / 2, kl % 2));
        let r = x[g].hypot(x[h]);
        if r > 1.0 {
            x[g] /= r;
            x[h] /= r;
        }
    }
}

/// Uniformly random point of the spheres and disks, then made exactly
/// orthogonal by removing `a₁`'s component along `w_{kl} = a_{0kl} ⟨α_{0kl}|α_{1kl}⟩*`.
pub fn random_feasible<R: Rng + ?Sized>(rng: &mut R) -> Mu0Variables {
    let mut x = [0.0; DIM];
    for v in x.iter_mut().take(16) {
        *v = rng.sample(StandardNormal);
    }
    for kl in 0..4 {
        let r = rng.random::<f64>().sqrt();
        let phi = std::f64::consts::TAU * rng.random::<f64>();
        x[gi(kl / 2, kl % 2)] = r * phi.cos();
        x[hi(kl / 2, kl % 2)] = r * phi.sin();
    }
    project(&mut x);
    let v = Mu0Variables { x };
    let w: Vec<Complex64> = (0..4).map(|kl| v.a(0, kl / 2, kl % 2) * v.overlap(kl / 2, kl % 2).conj()).collect();
    let a1: Vec<Complex64> = (0..4).map(|kl| v.a(1, kl / 2, kl % 2)).collect();
    let ww: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    if ww > 1e-300 {
        let wa: Complex64 = w.iter().zip(&a1).map(|(w, a)| w.conj() * a).sum();
        for kl in 0..4 {
            let z = a1[kl] - w[kl] * (wa / ww);
            x[ci(1, kl / 2, kl % 2)] = z.re;
            x[di(1, kl / 2, kl % 2)] = z.im;
        }
        project(&mut x);
    }
    Mu0Variables { x }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub restarts: usize,
    /// Inner ascent steps allowed per restart, summed over outer rounds.
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings { restarts: 64, max_iterations: 20_000, feasibility_tol: 1e-8, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_value: f64,
    pub variables: Mu0Variables,
    /// Recomputed at `variables`.
    pub max_constraint_residual: f64,
    pub restarts_used: usize,
    /// Inner iterations of the winning restart.
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    pub converged_restarts: usize,
}

#[derive(Debug, Clone, Copy)]
struct LocalResult {
    value: f64,
    vars: Mu0Variables,
    residual: f64,
    iterations: usize,
}

/// `μ₀ − λ·o − ρ/2 |o|²` and its gradient.
fn lagrangian(x: &[f64; DIM], lambda: [f64; 2], rho: f64) -> (f64, [f64; DIM]) {
    let (mu, mut grad) = mu0_with_gradient(&Mu0Variables { x: *x });
    let (o, og) = orthogonality(x);
    let mut value = mu;
    for e in 0..2 {
        value -= lambda[e] * o[e] + 0.5 * rho * o[e] * o[e];
        let coef = lambda[e] + rho * o[e];
        for i in 0..DIM {
            grad[i] -= coef * og[e][i];
        }
    }
    (value, grad)
}

/// Projected gradient ascent with Armijo backtracking.
fn ascend(x: &mut [f64; DIM], lambda: [f64; 2], rho: f64, budget: usize) -> usize {
    let mut step: f64 = 0.1;
    let (mut f, mut grad) = lagrangian(x, lambda, rho);
    for it in 0..budget {
        let mut accepted = false;
        step = (step * 2.0).min(1.0);
        while step > 1e-14 {
            let mut trial = *x;
            for i in 0..DIM {
                trial[i] += step * grad[i];
            }
            project(&mut trial);
            let (ft, gt) = lagrangian(&trial, lambda, rho);
            let predicted: f64 = (0..DIM).map(|i| grad[i] * (trial[i] - x[i])).sum();
            if ft >= f + 1e-4 * predicted {
                let moved: f64 = (0..DIM).map(|i| (trial[i] - x[i]).powi(2)).sum::<f64>().sqrt();
                let gain = ft - f;
                *x = trial;
                f = ft;
                grad = gt;
                accepted = true;
                if moved < 1e-13 || gain < 1e-16 {
                    return it + 1;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return it + 1;
        }
    }
    budget
}

/// Gauss-Newton min-norm corrections onto the active equality constraints:
/// both normalizations, both orthogonality expressions and saturated caps.
fn polish(x: &mut [f64; DIM]) {
    for _ in 0..20 {
        let mut rows: Vec<[f64; DIM]> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for j in 0..2 {
            let mut row = [0.0; DIM];
            let mut s = 0.0;
            for kl in 0..4 {
                for i in [ci(j, kl / 2, kl % 2), di(j, kl / 2, kl % 2)] {
                    row[i] = 2.0 * x[i];
                    s += x[i] * x[i];
                }
            }
            rows.push(row);
            rhs.push(s - 1.0);
        }
        let (o, og) = orthogonality(x);
        for e in 0..2 {
            rows.push(og[e]);
            rhs.push(o[e]);
        }
        for kl in 0..4 {
            let (g, h) = (gi(kl / 2, kl % 2), hi(kl / 2, kl % 2));
            let r2 = x[g] * x[g] + x[h] * x[h];
            if r2 > 1.0 - 1e-9 {
                let mut row = [0.0; DIM];
                row[g] = 2.0 * x[g];
                row[h] = 2.0 * x[h];
                rows.push(row);
                rhs.push(r2 - 1.0);
            }
        }
        let worst = rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if worst < 1e-15 {
            break;
        }
        let m = rows.len();
        let j = DMatrix::from_fn(m, DIM, |r, c| rows[r][c]);
        let r = DVector::from_vec(rhs);
        let Some(dx) = (&j * j.transpose()).lu().solve(&r).map(|y| j.transpose() * y) else {
            break;
        };
        for i in 0..DIM {
            x[i] -= dx[i];
        }
    }
    for kl in 0..4 {
        let (g, h) = (gi(kl / 2, kl % 2), hi(kl / 2, kl % 2));
        let r = x[g].hypot(x[h]);
        if r > 1.0 {
            x[g] /= r;
            x[h] /= r;
        }
    }
}

fn local_solve(start: Mu0Variables, settings: &OptimizerSettings) -> LocalResult {
    let mut x = start.x;
    let mut lambda = [0.0; 2];
    let mut rho = 10.0;
    let mut used = 0;
    let mut last_violation = f64::INFINITY;
    let per_round = (settings.max_iterations / 8).max(50);
    while used < settings.max_iterations {
        used += ascend(&mut x, lambda, rho, per_round.min(settings.max_iterations - used));
        let (o, _) = orthogonality(&x);
        let violation = o[0].hypot(o[1]);
        for e in 0..2 {
            lambda[e] += rho * o[e];
        }
        if violation < 0.1 * settings.feasibility_tol {
            break;
        }
        if violation > 0.25 * last_violation {
            rho = (rho * 2.0).min(1e8);
        }
        last_violation = violation;
    }
    polish(&mut x);
    let vars = Mu0Variables { x };
    LocalResult { value: mu0_objective(&vars), vars, residual: constraint_residuals(&vars).max(), iterations: used }
}

fn restart_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Multi-start maximization from random feasible points.
pub fn maximize_mu0(settings: &OptimizerSettings) -> Result<OptimizationResult> {
    if settings.restarts == 0 {
        return Err(OptimizerError::NoRestarts);
    }
    let starts: Vec<Mu0Variables> = (0..settings.restarts)
        .map(|i| random_feasible(&mut ChaCha8Rng::seed_from_u64(restart_seed(settings.seed, i))))
        .collect();
    Ok(maximize_mu0_from(&starts, settings))
}

/// Runs one restart per starting point and keeps the best feasible value;
/// ties go to the lowest restart index.
pub fn maximize_mu0_from(starts: &[Mu0Variables], settings: &OptimizerSettings) -> OptimizationResult {
    let results: Vec<LocalResult> = starts.par_iter().map(|s| local_solve(*s, settings)).collect();
    let feasible = |r: &LocalResult| r.residual <= settings.feasibility_tol;
    let converged_restarts = results.iter().filter(|r| feasible(r)).count();
    let better = |a: &(usize, &LocalResult), b: &(usize, &LocalResult)| -> Ordering {
        feasible(a.1)
            .cmp(&feasible(b.1))
            .then(if feasible(a.1) { a.1.value.total_cmp(&b.1.value) } else { b.1.residual.total_cmp(&a.1.residual) })
            .then(b.0.cmp(&a.0))
    };
    let (best_restart, best) = results.iter().enumerate().max_by(better).expect("at least one restart");
    OptimizationResult {
        best_value: best.value,
        variables: best.vars,
        max_constraint_residual: constraint_residuals(&best.vars).max(),
        restarts_used: starts.len(),
        iterations: best.iterations,
        converged: feasible(best),
        best_restart,
        converged_restarts,
    }
}

// ---------------------------------------------------------------------------
// Strategies

struct SingleQubitModel {
    /// `|Ψ_r^s⟩` indexed `[r][s]`.
    psi: [[DVector<Complex64>; 2]; 2],
    /// `Π_{i,s}^k` embedded in the full space, indexed `[i][s][k]`.
    proj: [[[DMatrix<Complex64>; 2]; 2]; 2],
}

fn single_qubit_model(strategy: &Strategy) -> Result<SingleQubitModel> {
    if strategy.form != StrategyForm::Product || strategy.input_qubits != 1 {
        return Err(OptimizerError::NotSingleQubit(strategy.name.clone()));
    }
    let total = strategy.total_qubits();
    let dim = 1usize << total;
    let u = DMatrix::from_fn(dim, dim, |r, c| strategy.prepare.entry(r, c));
    let psi = [false, true].map(|r| {
        [false, true].map(|s| {
            let input = qsim::bb84_state(r, s);
            let amps = input.amplitudes();
            DVector::from_fn(dim, |row, _| u[(row, 0)] * amps[0] + u[(row, 1)] * amps[1])
        })
    });
    let proj = [Side::Zero, Side::One].map(|side| {
        let share = strategy.share(side);
        let readout = share[strategy.readout[side.index()][0]];
        [0usize, 1].map(|s| {
            // Full-space rotation: V on the share, identity elsewhere.
            let v = &strategy.measurements[side.index()][s];
            let w = DMatrix::from_fn(dim, dim, |r, c| {
                let basis = StateVector::basis(total, c);
                let rotated = if share.is_empty() {
                    basis
                } else {
                    qsim::apply_unitary(&basis, v, &share).expect("validated strategy")
                };
                rotated.amplitudes()[r]
            });
            [0usize, 1].map(|k| {
                let d = DMatrix::from_fn(dim, dim, |r, c| {
                    if r == c && (r >> readout) & 1 == k {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                });
                w.adjoint() * d * &w
            })
        })
    });
    Ok(SingleQubitModel { psi, proj })
}

fn expectation(psi: &DVector<Complex64>, op: &DMatrix<Complex64>) -> f64 {
    psi.dotc(&(op * psi)).re
}

/// `(μ₀, μ₁)` evaluated term by term from the strategy's projectors.
pub fn mu_terms(strategy: &Strategy) -> Result<(f64, f64)> {
    let m = single_qubit_model(strategy)?;
    let term = |r: usize, s: usize, i: usize| expectation(&m.psi[r][s], &m.proj[i][s][r]);
    let mu0 = term(0, 0, 0) + term(1, 0, 0) + term(0, 1, 1) + term(1, 1, 1);
    let mu1 = term(0, 0, 1) + term(1, 0, 1) + term(0, 1, 0) + term(1, 1, 0);
    Ok((mu0, mu1))
}

/// `q₀ + q₁ = ¼ Σ_{r,s} (⟨Ψ_r^s|𝟙⊗Π_{1,s}^r|Ψ_r^s⟩ + ⟨Ψ_r^s|Π_{0,s}^r⊗𝟙|Ψ_r^s⟩)`.
pub fn strategy_sum(strategy: &Strategy) -> Result<f64> {
    let m = single_qubit_model(strategy)?;
    let mut sum = 0.0;
    for r in 0..2 {
        for s in 0..2 {
            sum += expectation(&m.psi[r][s], &m.proj[1][s][r]) + expectation(&m.psi[r][s], &m.proj[0][s][r]);
        }
    }
    Ok(sum / 4.0)
}

/// Decomposes `|Ψ_j⁰⟩ = Σ_{kl} a_{jkl} |α_{jkl}⟩` with
/// `|α_{jkl}⟩ ∝ (Π_{0,0}^k ⊗ Π_{1,1}^l)|Ψ_j⁰⟩` and `a_{jkl} ≥ 0`. Overlaps of
/// empty components are set to 1.
pub fn witness_from_strategy(strategy: &Strategy) -> Result<Mu0Variables> {
    let m = single_qubit_model(strategy)?;
    let mut x = [0.0; DIM];
    for k in 0..2 {
        for l in 0..2 {
            let op = &m.proj[0][0][k] * &m.proj[1][1][l];
            let comps: Vec<DVector<Complex64>> = (0..2).map(|j| &op * &m.psi[j][0]).collect();
            let norms: Vec<f64> = comps.iter().map(|v| v.norm()).collect();
            for j in 0..2 {
                x[ci(j, k, l)] = norms[j];
            }
            let ovl = if norms[0] > 1e-12 && norms[1] > 1e-12 {
                comps[0].dotc(&comps[1]) / (norms[0] * norms[1])
            } else {
                Complex64::new(1.0, 0.0)
            };
            x[gi(k, l)] = ovl.re;
            x[hi(k, l)] = ovl.im;
        }
    }
    Ok(Mu0Variables { x })
}

/// Closed-form feasible point attaining `2 + √2`, from measuring in the
/// Breidbart basis.
pub fn breidbart_witness() -> Mu0Variables {
    let (s, c) = (std::f64::consts::FRAC_PI_8).sin_cos();
    let mut x = [0.0; DIM];
    x[ci(0, 0, 0)] = c;
    x[ci(0, 1, 1)] = -s;
    x[ci(1, 0, 0)] = s;
    x[ci(1, 1, 1)] = c;
    for kl in 0..4 {
        x[gi(kl / 2, kl % 2)] = 1.0;
    }
    Mu0Variables { x }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{evaluate_exact, strategy_breidbart, strategy_cloning, strategy_random_guess};
    use proptest::prelude::{any, prop_assert, proptest};

    #[test]
    fn objective_examples() {
        assert_eq!(mu0_objective(&Mu0Variables::default()), 2.0);
        let mut v = Mu0Variables::default();
        v.x[ci(0, 0, 0)] = 1.0;
        assert_eq!(mu0_objective(&v), 3.0);
        let r = constraint_residuals(&Mu0Variables::default());
        assert_eq!((r.norm, r.orthogonality, r.caps), ([1.0, 1.0], [0.0, 0.0], [0.0; 4]));
        let mut v = Mu0Variables::default();
        v.x[gi(0, 0)] = 2.0;
        assert_eq!(constraint_residuals(&v).caps[0], 3.0);
    }

    #[test]
    fn breidbart_witness_is_optimal_and_feasible() {
        let w = breidbart_witness();
        assert!(constraint_residuals(&w).max() < 1e-15);
        assert!((mu0_objective(&w) - MU0_MAX).abs() < 1e-14);
    }

    #[test]
    fn objective_matches_complex_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v = random_feasible(&mut rng);
            let mut z = Complex64::new(0.0, 0.0);
            for k in 0..2 {
                z += v.a(0, k, 0).conj() * v.a(1, k, 0) * v.overlap(k, 0);
            }
            let direct = 2.0 + 2.0 * z.re + v.a(0, 0, 0).norm_sqr() + v.a(0, 0, 1).norm_sqr()
                - v.a(1, 0, 0).norm_sqr()
                - v.a(1, 0, 1).norm_sqr();
            assert!((direct - mu0_objective(&v)).abs() < 1e-12);
            let inner: Complex64 = (0..4)
                .map(|kl| v.a(0, kl / 2, kl % 2).conj() * v.a(1, kl / 2, kl % 2) * v.overlap(kl / 2, kl % 2))
                .sum();
            let (o, _) = orthogonality(&v.x);
            assert!((inner.re - o[0]).abs() < 1e-12 && (inner.im - o[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..100 {
            let mut v = Mu0Variables::default();
            for xi in v.x.iter_mut() {
                *xi = rng.random_range(-1.0..1.0);
            }
            let (_, g) = mu0_with_gradient(&v);
            let (_, og) = orthogonality(&v.x);
            for i in 0..DIM {
                let (mut p, mut m) = (v, v);
                p.x[i] += h;
                m.x[i] -= h;
                let fd = (mu0_objective(&p) - mu0_objective(&m)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "objective d/dx{i}");
                let (op, _) = orthogonality(&p.x);
                let (om, _) = orthogonality(&m.x);
                for e in 0..2 {
                    let fd = (op[e] - om[e]) / (2.0 * h);
                    assert!((fd - og[e][i]).abs() <= 1e-5 * og[e][i].abs().max(1.0), "constraint {e} d/dx{i}");
                }
            }
        }
    }

    #[test]
    fn random_feasible_points_stay_below_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = 0.0f64;
        for _ in 0..100_000 {
            let v = random_feasible(&mut rng);
            assert!(constraint_residuals(&v).max() < 1e-12);
            worst = worst.max(mu0_objective(&v));
        }
        assert!(worst <= MU0_MAX + 1e-6, "{worst}");
    }

    #[test]
    fn default_settings_reach_the_maximum() {
        let r = maximize_mu0(&OptimizerSettings::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.best_value >= MU0_MAX - 1e-4 && r.best_value <= MU0_MAX + 1e-6, "{}", r.best_value);
        assert!(r.max_constraint_residual < 1e-8);
        assert_eq!(r.max_constraint_residual, constraint_residuals(&r.variables).max());
        let again = maximize_mu0(&OptimizerSettings::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn single_restarts_never_exceed_the_maximum() {
        for seed in 0..16 {
            let r = maximize_mu0(&OptimizerSettings { restarts: 1, seed, ..Default::default() }).unwrap();
            if r.converged {
                assert!(r.best_value <= MU0_MAX + 1e-6);
            }
        }
        assert!(maximize_mu0(&OptimizerSettings { restarts: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn ascent_from_witness_keeps_value() {
        let w = breidbart_witness();
        let r = maximize_mu0_from(&[w], &OptimizerSettings { restarts: 1, ..Default::default() });
        assert!(r.converged && r.best_value >= mu0_objective(&w) - 1e-9);
    }

    #[test]
    fn strategy_sums() {
        let target = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
        assert!((strategy_sum(&strategy_breidbart()).unwrap() - target).abs() < 1e-12);
        assert!((strategy_sum(&strategy_cloning().unwrap()).unwrap() - target).abs() < 1e-12);
        assert!((strategy_sum(&strategy_random_guess(Side::Zero)).unwrap() - 1.5).abs() < 1e-12);
        for st in [strategy_breidbart(), strategy_cloning().unwrap(), strategy_random_guess(Side::One)] {
            let sum = strategy_sum(&st).unwrap();
            let exact = evaluate_exact(&st, 1).unwrap();
            assert!((sum - exact.q0 - exact.q1).abs() < 1e-12);
            assert!(sum <= MU0_MAX / 2.0 + 1e-12);
            let (mu0, mu1) = mu_terms(&st).unwrap();
            assert!((mu0 + mu1 - 4.0 * sum).abs() < 1e-12);
        }
    }

    #[test]
    fn witnesses_from_strategies_agree_with_projector_form() {
        for st in [
            strategy_breidbart(),
            strategy_cloning().unwrap(),
            strategy_random_guess(Side::Zero),
            strategy_random_guess(Side::One),
        ] {
            let w = witness_from_strategy(&st).unwrap();
            assert!(constraint_residuals(&w).max() < 1e-10, "{}", st.name);
            let (mu0, _) = mu_terms(&st).unwrap();
            assert!((mu0_objective(&w) - mu0).abs() < 1e-9, "{}", st.name);
        }
        let b = witness_from_strategy(&strategy_breidbart()).unwrap();
        assert!((mu0_objective(&b) - MU0_MAX).abs() < 1e-12);
    }

    #[test]
    fn witness_text_round_trip() {
        let w = breidbart_witness();
        let text = w.to_witness();
        assert_eq!(text.lines().count(), DIM);
        assert_eq!(Mu0Variables::from_witness(&text).unwrap(), w);
        assert_eq!(Mu0Variables::from_witness("1\n2\n"), Err(OptimizerError::WitnessLength(2)));
    }

    proptest! {
        #[test]
        fn sampler_is_exactly_feasible(seed in any::<u64>()) {
            let v = random_feasible(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(constraint_residuals(&v).max() < 1e-12);
            prop_assert!(mu0_objective(&v) <= MU0_MAX + 1e-9);
        }
    }
}
