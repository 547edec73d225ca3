//! Closed-form security quantities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Optimal single-qubit success probability `½ + 1/(2√2) = cos²(π/8)`.
pub const P_BAR_1: f64 = 0.5 + std::f64::consts::FRAC_1_SQRT_2 / 2.0;

/// Error rate at which the noisy bound still decays in `n`.
pub const GAMMA_THRESHOLD: f64 = 0.015;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("number of bits must be at least 1")]
    ZeroBits,
    #[error("error rate {0} outside its allowed range")]
    GammaOutOfRange(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

pub type Result<T> = std::result::Result<T, BoundsError>;

pub fn p_bar(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(BoundsError::ZeroBits);
    }
    Ok(P_BAR_1.powi(n as i32))
}

/// `h(γ) = −γ log₂ γ − (1−γ) log₂(1−γ)`, zero at both endpoints.
pub fn binary_entropy(gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(BoundsError::GammaOutOfRange(gamma));
    }
    let term = |p: f64| if p == 0.0 { 0.0 } else { -p * p.log2() };
    Ok(term(gamma) + term(1.0 - gamma))
}

/// Per-bit base `2^{2h(γ)} p̄₁` of the noisy bound.
pub fn noisy_base(gamma: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&gamma) {
        return Err(BoundsError::GammaOutOfRange(gamma));
    }
    Ok(2f64.powf(2.0 * binary_entropy(gamma)?) * P_BAR_1)
}

/// `(2^{2h(γ)} p̄₁)ⁿ`.
pub fn noisy_bound(gamma: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(BoundsError::ZeroBits);
    }
    Ok(noisy_base(gamma)?.powi(n as i32))
}

/// Root of `2^{2h(γ)} p̄₁ = 1` on `(0, ½)` by bisection.
pub fn max_tolerable_gamma(tolerance: f64) -> Result<f64> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(BoundsError::BadTolerance(tolerance));
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if noisy_base(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `p_observed ≤ p̄ₙ + slack`.
pub fn security_predicate(p_observed: f64, n: usize, slack: f64) -> Result<bool> {
    Ok(p_observed <= p_bar(n)? + slack)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityBound {
    pub n: usize,
    pub p_bar_n: f64,
    pub gamma: Option<f64>,
    pub noisy_bound: Option<f64>,
}

impl SecurityBound {
    pub fn new(n: usize, gamma: Option<f64>) -> Result<Self> {
        let noisy = gamma.map(|g| noisy_bound(g, n)).transpose()?;
        Ok(SecurityBound { n, p_bar_n: p_bar(n)?, gamma, noisy_bound: noisy })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p_bar_examples() {
        // Independent value of cos²(π/8).
        let c = (std::f64::consts::PI / 8.0).cos().powi(2);
        assert!((p_bar(1).unwrap() - c).abs() < 1e-15);
        assert!((p_bar(1).unwrap() - 0.853553390593).abs() < 1e-12);
        assert!((p_bar(2).unwrap() - 0.728553390593).abs() < 1e-11);
        assert!((p_bar(20).unwrap() - 0.0422).abs() < 5e-4);
        assert_eq!(p_bar(0), Err(BoundsError::ZeroBits));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.015).unwrap() - 0.11236).abs() < 1e-5);
        assert!(binary_entropy(1.2).is_err());
    }

    #[test]
    fn noisy_examples() {
        for n in 1..8 {
            assert!((noisy_bound(0.0, n).unwrap() - p_bar(n).unwrap()).abs() < 1e-15);
        }
        assert!((noisy_bound(0.015, 1).unwrap() - 0.9974).abs() < 1e-4);
        assert!(noisy_bound(0.015, 1).unwrap() < 1.0);
        assert!((noisy_bound(0.02, 1).unwrap() - 1.0385).abs() < 1e-4);
        assert!(noisy_bound(0.6, 1).is_err());
        assert!(noisy_bound(0.01, 0).is_err());
    }

    #[test]
    fn threshold_root() {
        let g = max_tolerable_gamma(1e-6).unwrap();
        assert!(g > 0.0150 && g < 0.0160, "{g}");
        assert!(g > GAMMA_THRESHOLD && g < 0.02);
        for n in 1..20 {
            assert!(noisy_bound(g - 1e-3, n + 1).unwrap() < noisy_bound(g - 1e-3, n).unwrap());
            assert!(noisy_bound(g + 1e-3, n + 1).unwrap() > noisy_bound(g + 1e-3, n).unwrap());
        }
        assert!(max_tolerable_gamma(0.0).is_err());
    }

    #[test]
    fn predicate_examples() {
        for n in 1..30 {
            assert!(security_predicate(p_bar(n).unwrap(), n, 0.0).unwrap());
            assert!(security_predicate(0.5f64.powi(n as i32), n, 0.0).unwrap());
        }
        assert!(!security_predicate(1.0, 5, 0.0).unwrap());
        let b = SecurityBound::new(3, Some(0.01)).unwrap();
        assert!(b.noisy_bound.unwrap() > b.p_bar_n);
    }

    #[test]
    fn noisy_base_increasing_on_grid() {
        let mut prev = noisy_base(0.0).unwrap();
        for k in 1..=500 {
            let next = noisy_base(0.5 * k as f64 / 500.0).unwrap();
            assert!(next > prev);
            prev = next;
        }
    }

    proptest! {
        #[test]
        fn p_bar_is_multiplicative(n in 1usize..200) {
            prop_assert!((p_bar(n + 1).unwrap() - p_bar(n).unwrap() * p_bar(1).unwrap()).abs() < 1e-12);
            prop_assert!(p_bar(n + 1).unwrap() < p_bar(n).unwrap());
        }

        #[test]
        fn entropy_is_symmetric(g in 0.0f64..=1.0) {
            prop_assert!((binary_entropy(g).unwrap() - binary_entropy(1.0 - g).unwrap()).abs() < 1e-12);
        }
    }
}
