//! Stochastic numbers as explicit bit sequences.
//!
//! A [`Bitstream`] of length `N` encodes the unipolar value `ones / N` and the
//! bipolar value `2 * ones / N - 1`. Bits are stored packed, 64 per word, with
//! clock cycle `t = 0` in bit 0 of the first word. Bits past the logical end of
//! the last word are always zero, so word-level popcounts are exact.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// An ordered, immutable sequence of bits; one bit per clock cycle.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitstream {
    words: Vec<u64>,
    len: usize,
}

impl Bitstream {
    /// Stream of `len` zeros.
    pub fn zeros(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyStream);
        }
        Ok(Self {
            words: vec![0; len.div_ceil(WORD_BITS)],
            len,
        })
    }

    /// Stream of `len` ones.
    pub fn ones(len: usize) -> Result<Self> {
        let mut s = Self::zeros(len)?;
        s.words.iter_mut().for_each(|w| *w = u64::MAX);
        s.clear_tail();
        Ok(s)
    }

    /// `n` copies of `bit`. Used to zero-pad adder trees.
    pub fn constant(bit: bool, n: usize) -> Result<Self> {
        if bit {
            Self::ones(n)
        } else {
            Self::zeros(n)
        }
    }

    /// Builds a stream whose bit `t` is `f(t)`.
    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Result<Self> {
        let mut s = Self::zeros(len)?;
        for t in 0..len {
            if f(t) {
                s.words[t / WORD_BITS] |= 1 << (t % WORD_BITS);
            }
        }
        Ok(s)
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        Self::from_fn(bits.len(), |t| bits[t])
    }

    /// Wraps packed words; any bits past `len` are cleared.
    pub(crate) fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        debug_assert!(len > 0 && words.len() == len.div_ceil(WORD_BITS));
        words.truncate(len.div_ceil(WORD_BITS));
        let mut s = Self { words, len };
        s.clear_tail();
        s
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// Stream length `N` in clock cycles.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: streams have at least one bit.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, t: usize) -> bool {
        assert!(
            t < self.len,
            "bit index {t} out of range for length {}",
            self.len
        );
        (self.words[t / WORD_BITS] >> (t % WORD_BITS)) & 1 == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |t| self.get(t))
    }

    /// Packed words, bit `t` at `words[t / 64] >> (t % 64)`.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Number of ones; the functional model of the output counter.
    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Exact `ones / N`.
    pub fn unipolar_value(&self) -> Ratio<u64> {
        Ratio::new(u64::from(self.popcount()), self.len as u64)
    }

    /// Exact `2 * ones / N - 1`.
    pub fn bipolar_value(&self) -> Ratio<i64> {
        Ratio::new(
            2 * i64::from(self.popcount()) - self.len as i64,
            self.len as i64,
        )
    }

    pub(crate) fn check_same_len(&self, other: &Bitstream) -> Result<()> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(())
    }
}

/// Parses `0`/`1` characters; spaces and underscores are ignored.
impl FromStr for Bitstream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::ParseStream(format!(
                    "unexpected character {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

/// `{}` prints contiguous bits, `{:#}` inserts a space every four bits.
impl fmt::Display for Bitstream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, bit) in self.iter().enumerate() {
            if f.alternate() && t > 0 && t % 4 == 0 {
                f.write_str(" ")?;
            }
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bitstream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bitstream({:#})", self)
    }
}

/// Bit precision `b` and the stream length used with it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Precision {
    bits: u32,
    stream_len: usize,
}

impl Precision {
    pub const MIN_BITS: u32 = 2;
    pub const MAX_BITS: u32 = 16;

    /// `b` bits with the default stream length `2^b`.
    pub fn new(bits: u32) -> Result<Self> {
        if !(Self::MIN_BITS..=Self::MAX_BITS).contains(&bits) {
            return Err(Error::InvalidPrecision(bits));
        }
        Ok(Self {
            bits,
            stream_len: 1 << bits,
        })
    }

    pub fn with_stream_len(self, stream_len: usize) -> Result<Self> {
        if stream_len < 2 {
            return Err(Error::InvalidStreamLength(stream_len));
        }
        Ok(Self { stream_len, ..self })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn stream_len(&self) -> usize {
        self.stream_len
    }

    /// Number of comparator levels, `2^b`.
    pub fn levels(&self) -> u32 {
        1 << self.bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bs(s: &str) -> Bitstream {
        s.parse().unwrap()
    }

    #[test]
    fn popcount_examples() {
        assert_eq!(Bitstream::zeros(16).unwrap().popcount(), 0);
        assert_eq!(bs("0110 1011 0101 0111 1101").popcount(), 13);
        let alt = Bitstream::from_fn(256, |t| t % 2 == 1).unwrap();
        assert_eq!(alt.popcount(), 128);
    }

    #[test]
    fn unipolar_examples() {
        assert_eq!(bs("001011").unipolar_value(), Ratio::new(1, 2));
        assert_eq!(
            Bitstream::ones(8).unwrap().unipolar_value(),
            Ratio::from_integer(1)
        );
        assert_eq!(bs("1000").unipolar_value(), Ratio::new(1, 4));
    }

    #[test]
    fn bipolar_examples() {
        assert_eq!(bs("0101").bipolar_value(), Ratio::from_integer(0));
        assert_eq!(
            Bitstream::ones(7).unwrap().bipolar_value(),
            Ratio::from_integer(1)
        );
        assert_eq!(
            Bitstream::zeros(7).unwrap().bipolar_value(),
            Ratio::from_integer(-1)
        );
    }

    #[test]
    fn constant_streams() {
        assert_eq!(Bitstream::constant(false, 4).unwrap(), bs("0000"));
        assert_eq!(Bitstream::constant(true, 3).unwrap(), bs("111"));
        assert_eq!(
            Bitstream::constant(false, 16).unwrap().unipolar_value(),
            Ratio::from_integer(0)
        );
        assert!(matches!(
            Bitstream::constant(true, 0),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn ones_keeps_tail_clear() {
        let s = Bitstream::ones(70).unwrap();
        assert_eq!(s.popcount(), 70);
        assert_eq!(s.words()[1], (1 << 6) - 1);
    }

    #[test]
    fn text_rendering() {
        let s = bs("0110101101010111 1101");
        assert_eq!(s.to_string(), "01101011010101111101");
        assert_eq!(format!("{s:#}"), "0110 1011 0101 0111 1101");
        assert!("01x".parse::<Bitstream>().is_err());
        assert!("".parse::<Bitstream>().is_err());
    }

    #[test]
    fn precision_bounds() {
        assert!(Precision::new(1).is_err());
        assert!(Precision::new(17).is_err());
        let p = Precision::new(8).unwrap();
        assert_eq!(p.stream_len(), 256);
        assert_eq!(p.levels(), 256);
        assert_eq!(p.with_stream_len(100).unwrap().stream_len(), 100);
        assert!(p.with_stream_len(1).is_err());
    }

    proptest! {
        #[test]
        fn values_are_consistent(bits in prop::collection::vec(any::<bool>(), 1..300)) {
            let s = Bitstream::from_bits(&bits).unwrap();
            let u = s.unipolar_value();
            prop_assert!(u >= Ratio::from_integer(0) && u <= Ratio::from_integer(1));
            let b = s.bipolar_value();
            let twice_u = Ratio::new(2 * *u.numer() as i64, *u.denom() as i64);
            prop_assert_eq!(b, twice_u - 1);
            prop_assert_eq!(s.popcount() as usize, bits.iter().filter(|b| **b).count());
        }

        #[test]
        fn popcount_ignores_order(mut bits in prop::collection::vec(any::<bool>(), 1..300), seed in any::<u64>()) {
            let before = Bitstream::from_bits(&bits).unwrap().popcount();
            let n = bits.len();
            bits.rotate_left((seed as usize) % n);
            bits.reverse();
            prop_assert_eq!(Bitstream::from_bits(&bits).unwrap().popcount(), before);
        }
    }
}
