//! Comparator number sources and the stochastic number generator (SNG).
//!
//! Every source yields integers in `[0, 2^b)`. An SNG compares a target
//! `x` in `[0, 2^b]` against the source each cycle and emits `1` iff
//! `source_t < x`, so `x = 2^b` encodes the value 1.
//!
//! All sources are explicit-state: the `*_next` functions take a state (or a
//! cycle index) and return the next one, so independent workers never share
//! hidden mutable state.

use serde::{Deserialize, Serialize};

use crate::bitstream::{Bitstream, Precision};
use crate::error::{Error, Result};

/// Maximal-length Galois feedback masks, indexed by `width - 2`.
const PRIMARY_TAPS: [u32; 15] = [
    0x3, 0x6, 0xC, 0x14, 0x30, 0x60, 0xB8, 0x110, 0x240, 0x500, 0xE08, 0x1C80, 0x3802, 0x6000,
    0xD008,
];

/// A second primitive polynomial per width for two-register schemes. Width 2
/// has only one primitive polynomial, so it repeats.
const SECONDARY_TAPS: [u32; 15] = [
    0x3, 0x5, 0x9, 0x12, 0x21, 0x41, 0x8E, 0x108, 0x204, 0x402, 0x829, 0x100D, 0x2015, 0x4001,
    0x8016,
];

/// Galois LFSR parameters.
///
/// `shift_offset` delays the emitted sequence circularly by that many cycles,
/// giving the "shifted version" companion of a stream from the same register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfsrConfig {
    width: u32,
    taps: u32,
    seed: u32,
    #[serde(default)]
    shift_offset: u32,
}

impl LfsrConfig {
    /// Validates that `taps` yields the maximal period `2^width - 1`.
    pub fn new(width: u32, taps: u32, seed: u32) -> Result<Self> {
        if !(2..=16).contains(&width) {
            return Err(Error::InvalidLfsr(format!("width {width} outside 2..=16")));
        }
        let mask = (1u32 << width) - 1;
        if seed == 0 {
            return Err(Error::ZeroLfsrState);
        }
        if seed > mask {
            return Err(Error::InvalidLfsr(format!(
                "seed {seed:#x} does not fit in {width} bits"
            )));
        }
        if taps > mask || taps & (1 << (width - 1)) == 0 {
            return Err(Error::InvalidLfsr(format!(
                "taps {taps:#x} must have bit {} set and fit in {width} bits",
                width - 1
            )));
        }
        let cfg = Self {
            width,
            taps,
            seed,
            shift_offset: 0,
        };
        let period = cfg.measure_period();
        if period != mask {
            return Err(Error::InvalidLfsr(format!(
                "taps {taps:#x} are not primitive for width {width} (period {period})"
            )));
        }
        Ok(cfg)
    }

    pub fn primary(width: u32, seed: u32) -> Result<Self> {
        let taps = *width
            .checked_sub(2)
            .and_then(|i| PRIMARY_TAPS.get(i as usize))
            .ok_or_else(|| Error::InvalidLfsr(format!("width {width} outside 2..=16")))?;
        Self::new(width, taps, seed)
    }

    pub fn secondary(width: u32, seed: u32) -> Result<Self> {
        let taps = *width
            .checked_sub(2)
            .and_then(|i| SECONDARY_TAPS.get(i as usize))
            .ok_or_else(|| Error::InvalidLfsr(format!("width {width} outside 2..=16")))?;
        Self::new(width, taps, seed)
    }

    pub fn with_shift_offset(self, shift_offset: u32) -> Self {
        Self {
            shift_offset,
            ..self
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn taps(&self) -> u32 {
        self.taps
    }

    pub fn seed(&self) -> u32 {
        self.seed
    }

    pub fn shift_offset(&self) -> u32 {
        self.shift_offset
    }

    /// `2^width - 1`.
    pub fn period(&self) -> u32 {
        (1 << self.width) - 1
    }

    fn measure_period(&self) -> u32 {
        let mut state = self.seed;
        for steps in 1..=(1u32 << self.width) {
            state = galois_step(state, self.taps);
            if state == self.seed {
                return steps;
            }
        }
        0
    }

    /// The first `n` register values, delayed by `shift_offset`.
    fn sequence(&self, n: usize) -> Vec<u32> {
        let period = self.period() as usize;
        let mut base = Vec::with_capacity(period);
        let mut state = self.seed;
        for _ in 0..period {
            base.push(state);
            state = galois_step(state, self.taps);
        }
        let delay = self.shift_offset as usize % period;
        (0..n)
            .map(|t| base[(t + period - delay) % period])
            .collect()
    }
}

fn galois_step(state: u32, taps: u32) -> u32 {
    let lsb = state & 1;
    let next = state >> 1;
    if lsb == 1 {
        next ^ taps
    } else {
        next
    }
}

/// One Galois step: returns the current register value and the next state.
pub fn lfsr_next(state: u32, cfg: &LfsrConfig) -> Result<(u32, u32)> {
    if state == 0 {
        return Err(Error::ZeroLfsrState);
    }
    if state > cfg.period() {
        return Err(Error::InvalidLfsr(format!(
            "state {state:#x} does not fit in {} bits",
            cfg.width
        )));
    }
    Ok((state, galois_step(state, cfg.taps)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VdcBase {
    Two,
    Three,
}

/// Van der Corput point `t` scaled to `[0, 2^b)`.
///
/// Base 2 is the bit reversal of the low `b` bits of `t`. Base 3 is
/// `floor(radical_inverse_3(t) * 2^b)`, computed exactly in integers.
pub fn vdc_next(t: u64, b: u32, base: VdcBase) -> u32 {
    match base {
        VdcBase::Two => {
            let low = t & ((1u64 << b) - 1);
            (low.reverse_bits() >> (64 - b)) as u32
        }
        VdcBase::Three => {
            let mut num: u128 = 0;
            let mut den: u128 = 1;
            let mut rest = t;
            while rest > 0 {
                num = num * 3 + u128::from(rest % 3);
                den *= 3;
                rest /= 3;
            }
            ((num << b) / den) as u32
        }
    }
}

/// Monotone ramp `t mod 2^b`.
pub fn ramp_next(t: u64, b: u32) -> u32 {
    (t & ((1u64 << b) - 1)) as u32
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 step: returns the 64-bit output and the next state.
pub fn prng_next(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = next;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), next)
}

/// Which sequence drives a comparator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    Lfsr(LfsrConfig),
    VanDerCorputBase2,
    VanDerCorputBase3,
    Ramp,
    Prng { seed: u64 },
}

/// A precomputed comparator sequence, shareable across many SNGs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceSequence {
    values: Vec<u32>,
    levels: u32,
}

impl SourceSequence {
    pub fn generate(kind: &SourceKind, precision: Precision) -> Result<Self> {
        let b = precision.bits();
        let n = precision.stream_len();
        let values = match kind {
            SourceKind::Lfsr(cfg) => {
                if cfg.width() != b {
                    return Err(Error::InvalidLfsr(format!(
                        "LFSR width {} does not match precision {b}",
                        cfg.width()
                    )));
                }
                cfg.sequence(n)
            }
            SourceKind::VanDerCorputBase2 => (0..n as u64)
                .map(|t| vdc_next(t, b, VdcBase::Two))
                .collect(),
            SourceKind::VanDerCorputBase3 => (0..n as u64)
                .map(|t| vdc_next(t, b, VdcBase::Three))
                .collect(),
            SourceKind::Ramp => (0..n as u64).map(|t| ramp_next(t, b)).collect(),
            SourceKind::Prng { seed } => {
                let mut state = *seed;
                (0..n)
                    .map(|_| {
                        let (out, next) = prng_next(state);
                        state = next;
                        (out >> (64 - b)) as u32
                    })
                    .collect()
            }
        };
        Ok(Self {
            values,
            levels: precision.levels(),
        })
    }

    /// Wraps an explicit comparator sequence; every value must be below
    /// `levels`.
    pub fn from_values(values: Vec<u32>, levels: u32) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyStream);
        }
        if let Some(&v) = values.iter().find(|&&v| v >= levels) {
            return Err(Error::ValueOutOfRange {
                value: v,
                max: levels - 1,
            });
        }
        Ok(Self { values, levels })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Comparator: bit `t` is `1` iff `values[t] < x`.
    pub fn encode(&self, x: u32) -> Result<Bitstream> {
        if x > self.levels {
            return Err(Error::ValueOutOfRange {
                value: x,
                max: self.levels,
            });
        }
        Bitstream::from_fn(self.values.len(), |t| self.values[t] < x)
    }
}

/// Encodes `x` in `[0, 2^b]` as a stream of `precision.stream_len()` bits.
pub fn sng(x: u32, source: &SourceKind, precision: Precision) -> Result<Bitstream> {
    SourceSequence::generate(source, precision)?.encode(x)
}
