//! Exhaustive mean-squared-error sweeps over every input pair.
//!
//! For precision `b` every pair `x, y` in `[0, 2^b)` is encoded, combined with
//! the operator under test, and counted. Errors are accumulated as exact
//! integers over a common denominator, so the MSE is an exact rational and the
//! parallel reduction order does not matter.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{and_multiply, mux_add, tff_add};
use crate::bitstream::{Bitstream, Precision};
use crate::error::{Error, Result};
use crate::sources::{LfsrConfig, SourceKind, SourceSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Multiply,
    Add,
}

/// Number generation for the two multiplier inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MultiplierScheme {
    /// One LFSR, the second input reading a delayed copy of its sequence.
    OneLfsrShifted,
    /// Two LFSRs with distinct primitive polynomials.
    TwoLfsr,
    /// Van der Corput base 2 against base 3.
    LdLd,
    /// Ramp against van der Corput base 2.
    RampLd,
}

impl MultiplierScheme {
    pub const ALL: [MultiplierScheme; 4] = [
        MultiplierScheme::OneLfsrShifted,
        MultiplierScheme::TwoLfsr,
        MultiplierScheme::LdLd,
        MultiplierScheme::RampLd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MultiplierScheme::OneLfsrShifted => "one-lfsr-shifted",
            MultiplierScheme::TwoLfsr => "two-lfsr",
            MultiplierScheme::LdLd => "ld-ld",
            MultiplierScheme::RampLd => "ramp-ld",
        }
    }
}

/// Adder under test and the sources feeding it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdderConfig {
    /// MUX adder, PRNG data, LFSR select.
    MuxRandomLfsr,
    /// MUX adder, PRNG data, alternating `0101...` select.
    MuxRandomTff,
    /// MUX adder, LFSR data, alternating select.
    MuxLfsrTff,
    /// TFF adder with ramp and van der Corput inputs, `S0 = 0`.
    TffNew,
}

impl AdderConfig {
    pub const ALL: [AdderConfig; 4] = [
        AdderConfig::MuxRandomLfsr,
        AdderConfig::MuxRandomTff,
        AdderConfig::MuxLfsrTff,
        AdderConfig::TffNew,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AdderConfig::MuxRandomLfsr => "mux-random-lfsr",
            AdderConfig::MuxRandomTff => "mux-random-tff",
            AdderConfig::MuxLfsrTff => "mux-lfsr-tff",
            AdderConfig::TffNew => "tff-new",
        }
    }
}

impl FromStr for MultiplierScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

impl FromStr for AdderConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

impl fmt::Display for MultiplierScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for AdderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-width LFSR override.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfsrOverride {
    pub width: u32,
    pub polynomial: u32,
    pub seed: u32,
}

/// Seeds and register choices used by the sweeps.
///
/// Defaults: primary/secondary polynomials from the built-in tables with seed
/// 1, a one-cycle delay for the shifted companion, and SplitMix64 seeds 1 and
/// 2 for the random data streams.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeSettings {
    pub lfsr_seed: u32,
    pub shift_offset: u32,
    pub prng_seeds: [u64; 2],
    pub primary: Vec<LfsrOverride>,
    pub secondary: Vec<LfsrOverride>,
}

impl Default for SchemeSettings {
    fn default() -> Self {
        Self {
            lfsr_seed: 1,
            shift_offset: 1,
            prng_seeds: [1, 2],
            primary: Vec::new(),
            secondary: Vec::new(),
        }
    }
}

impl SchemeSettings {
    fn lfsr(&self, overrides: &[LfsrOverride], width: u32, secondary: bool) -> Result<LfsrConfig> {
        match overrides.iter().find(|o| o.width == width) {
            Some(o) => LfsrConfig::new(width, o.polynomial, o.seed),
            None if secondary => LfsrConfig::secondary(width, self.lfsr_seed),
            None => LfsrConfig::primary(width, self.lfsr_seed),
        }
    }

    pub fn primary_lfsr(&self, width: u32) -> Result<LfsrConfig> {
        self.lfsr(&self.primary, width, false)
    }

    pub fn secondary_lfsr(&self, width: u32) -> Result<LfsrConfig> {
        self.lfsr(&self.secondary, width, true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MseReport {
    pub operator: Operator,
    pub scheme: String,
    pub bits: u32,
    pub stream_len: usize,
    pub mse: Ratio<u128>,
    pub pair_count: u64,
}

impl MseReport {
    pub fn mse_f64(&self) -> f64 {
        *self.mse.numer() as f64 / *self.mse.denom() as f64
    }

    /// Six significant digits, e.g. `1.90735e-6`.
    pub fn mse_display(&self) -> String {
        format!("{:.5e}", self.mse_f64())
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}/{}",
            self.scheme,
            self.bits,
            self.stream_len,
            self.mse_display(),
            self.mse.numer(),
            self.mse.denom()
        )
    }
}

pub const CSV_HEADER: &str = "scheme,bits,stream_len,mse,mse_exact";

fn check_bits(bits: u32) -> Result<Precision> {
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidPrecision(bits));
    }
    Precision::new(bits)
}

fn encode_all(kind: &SourceKind, precision: Precision) -> Result<Vec<Bitstream>> {
    let seq = SourceSequence::generate(kind, precision)?;
    (0..precision.levels()).map(|x| seq.encode(x)).collect()
}

pub fn mse_multiplier(scheme: MultiplierScheme, bits: u32) -> Result<MseReport> {
    mse_multiplier_with(scheme, bits, &SchemeSettings::default())
}

/// `4^-b * sum (c/N - x*y/L^2)^2` over all `x, y < L = 2^b`.
pub fn mse_multiplier_with(
    scheme: MultiplierScheme,
    bits: u32,
    settings: &SchemeSettings,
) -> Result<MseReport> {
    let precision = check_bits(bits)?;
    let (a, b) = match scheme {
        MultiplierScheme::OneLfsrShifted => {
            let cfg = settings.primary_lfsr(bits)?;
            (
                SourceKind::Lfsr(cfg),
                SourceKind::Lfsr(cfg.with_shift_offset(settings.shift_offset)),
            )
        }
        MultiplierScheme::TwoLfsr => (
            SourceKind::Lfsr(settings.primary_lfsr(bits)?),
            SourceKind::Lfsr(settings.secondary_lfsr(bits)?),
        ),
        MultiplierScheme::LdLd => (SourceKind::VanDerCorputBase2, SourceKind::VanDerCorputBase3),
        MultiplierScheme::RampLd => (SourceKind::Ramp, SourceKind::VanDerCorputBase2),
    };
    let xs = encode_all(&a, precision)?;
    let ys = encode_all(&b, precision)?;
    let n = precision.stream_len() as u128;
    let levels = u128::from(precision.levels());

    // error = (c * L^2 - x * y * N) / (N * L^2)
    let sum: u128 = xs
        .par_iter()
        .enumerate()
        .map(|(x, sx)| {
            ys.iter()
                .enumerate()
                .map(|(y, sy)| {
                    let c = u128::from(and_multiply(sx, sy).expect("equal lengths").popcount());
                    let diff = (c * levels * levels).abs_diff(x as u128 * y as u128 * n);
                    diff * diff
                })
                .sum::<u128>()
        })
        .sum();
    let pairs = levels * levels;
    Ok(MseReport {
        operator: Operator::Multiply,
        scheme: scheme.name().to_string(),
        bits,
        stream_len: precision.stream_len(),
        mse: Ratio::new(sum, pairs * n * n * levels.pow(4)),
        pair_count: pairs as u64,
    })
}

pub fn mse_adder(config: AdderConfig, bits: u32) -> Result<MseReport> {
    mse_adder_with(config, bits, &SchemeSettings::default())
}

/// `4^-b * sum (c/N - (x + y)/(2L))^2` over all `x, y < L = 2^b`.
pub fn mse_adder_with(
    config: AdderConfig,
    bits: u32,
    settings: &SchemeSettings,
) -> Result<MseReport> {
    let precision = check_bits(bits)?;
    let n = precision.stream_len();
    let alternating = Bitstream::from_fn(n, |t| t % 2 == 1)?;
    let half = precision.levels() / 2;
    let random_x = SourceKind::Prng {
        seed: settings.prng_seeds[0],
    };
    let random_y = SourceKind::Prng {
        seed: settings.prng_seeds[1],
    };

    let (a, b, select) = match config {
        AdderConfig::MuxRandomLfsr => {
            let sel = SourceSequence::generate(
                &SourceKind::Lfsr(settings.primary_lfsr(bits)?),
                precision,
            )?
            .encode(half)?;
            (random_x, random_y, Some(sel))
        }
        AdderConfig::MuxRandomTff => (random_x, random_y, Some(alternating)),
        AdderConfig::MuxLfsrTff => {
            let lfsr = SourceKind::Lfsr(settings.primary_lfsr(bits)?);
            (lfsr, lfsr, Some(alternating))
        }
        AdderConfig::TffNew => (SourceKind::Ramp, SourceKind::VanDerCorputBase2, None),
    };
    let xs = encode_all(&a, precision)?;
    let ys = encode_all(&b, precision)?;
    let n = n as u128;
    let levels = u128::from(precision.levels());

    // error = (2 * c * L - (x + y) * N) / (2 * N * L)
    let sum: u128 = xs
        .par_iter()
        .enumerate()
        .map(|(x, sx)| {
            ys.iter()
                .enumerate()
                .map(|(y, sy)| {
                    let z = match &select {
                        Some(sel) => mux_add(sx, sy, sel),
                        None => tff_add(sx, sy, false),
                    }
                    .expect("equal lengths");
                    let c = u128::from(z.popcount());
                    let diff = (2 * c * levels).abs_diff((x + y) as u128 * n);
                    diff * diff
                })
                .sum::<u128>()
        })
        .sum();
    let pairs = levels * levels;
    Ok(MseReport {
        operator: Operator::Add,
        scheme: config.name().to_string(),
        bits,
        stream_len: precision.stream_len(),
        mse: Ratio::new(sum, pairs * 4 * n * n * levels * levels),
        pair_count: pairs as u64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    /// Multiplier MSE per number generation scheme.
    Table1,
    /// Adder MSE per adder configuration.
    Table2,
}

/// Precisions reported by [`table_sweep`], in row order.
pub const TABLE_BITS: [u32; 2] = [8, 4];

/// Runs every cell of a table and writes it as CSV (header included).
pub fn table_sweep(
    which: Table,
    settings: &SchemeSettings,
    out: &mut impl Write,
) -> Result<Vec<MseReport>> {
    let mut rows = Vec::new();
    match which {
        Table::Table1 => {
            for scheme in MultiplierScheme::ALL {
                for bits in TABLE_BITS {
                    rows.push(mse_multiplier_with(scheme, bits, settings)?);
                }
            }
        }
        Table::Table2 => {
            for config in AdderConfig::ALL {
                for bits in TABLE_BITS {
                    rows.push(mse_adder_with(config, bits, settings)?);
                }
            }
        }
    }
    writeln!(out, "{CSV_HEADER}")?;
    for row in &rows {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(rows)
}
