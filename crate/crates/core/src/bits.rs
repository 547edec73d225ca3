//! Fixed-length bit strings.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::BitXor;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new(bits: Vec<bool>) -> Self {
        BitString(bits)
    }

    pub fn zeros(n: usize) -> Self {
        BitString(vec![false; n])
    }

    /// Bit `j` is bit `j` of `value` (least significant first); bits past 64
    /// are zero.
    pub fn from_u64(value: u64, n: usize) -> Self {
        BitString((0..n).map(|j| j < 64 && value >> j & 1 == 1).collect())
    }

    /// Low 64 bits, bit 0 least significant.
    pub fn to_u64(&self) -> u64 {
        self.0.iter().take(64).enumerate().map(|(j, &b)| (b as u64) << j).sum()
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        BitString((0..n).map(|_| rng.random()).collect())
    }

    /// Parses a string of `0`/`1` characters, bit 0 first.
    pub fn parse(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(BitString)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, bit: bool) {
        self.0[j] = bit;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn slice(&self, start: usize, len: usize) -> BitString {
        BitString(self.0[start..start + len].to_vec())
    }

    pub fn hamming(&self, other: &BitString) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Bits packed most-significant-first into bytes, bit 0 first.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|chunk| chunk.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | (b as u8) << (7 - k)))
            .collect()
    }

    pub fn from_bytes(bytes: &[u8], n: usize) -> Option<Self> {
        if bytes.len() != n.div_ceil(8) {
            return None;
        }
        Some(BitString((0..n).map(|j| bytes[j / 8] >> (7 - j % 8) & 1 == 1).collect()))
    }
}

impl BitXor for &BitString {
    type Output = BitString;

    fn bitxor(self, rhs: &BitString) -> BitString {
        assert_eq!(self.len(), rhs.len(), "xor of bit strings with different lengths");
        BitString(self.0.iter().zip(&rhs.0).map(|(a, b)| a ^ b).collect())
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        BitString(iter.into_iter().collect())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn xor_and_hamming() {
        let a = BitString::parse("0110").unwrap();
        let b = BitString::parse("1100").unwrap();
        assert_eq!(&a ^ &b, BitString::parse("1010").unwrap());
        assert_eq!(a.hamming(&b), 2);
        assert_eq!(BitString::from_u64(0b0110, 4), a);
        assert!(BitString::parse("01x").is_none());
    }

    #[test]
    fn u64_conversion_beyond_64_bits() {
        let long = BitString::from_u64(u64::MAX, 100);
        assert_eq!(long.as_slice().iter().filter(|&&b| b).count(), 64);
        assert!(!long.get(64) && !long.get(99));
        assert_eq!(long.to_u64(), u64::MAX);
        assert_eq!(BitString::from_u64(0, 1000), BitString::zeros(1000));
    }

    proptest! {
        #[test]
        fn byte_packing_round_trips(bits in proptest::collection::vec(any::<bool>(), 0..40)) {
            let b = BitString::new(bits);
            prop_assert_eq!(BitString::from_bytes(&b.to_bytes(), b.len()), Some(b.clone()));
            prop_assert_eq!(BitString::from_u64(b.to_u64(), b.len()), b);
        }
    }
}
