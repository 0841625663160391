//! Stochastic first convolution layer.
//!
//! Each output position is one dot-product unit. Pixels are encoded against a
//! shared ramp counter, weight magnitudes against a shared van der Corput
//! (base 2) counter. Weights are split by sign into two unipolar dot products,
//! each reduced by a TFF adder tree and counted; the unit outputs the sign of
//! the count difference, forced to zero inside the soft threshold `T`.

use rayon::prelude::*;

use crate::arith::{tff_tree_in_place, S0Policy};
use crate::bitstream::{Bitstream, Precision};
use crate::error::{Error, Result};
use crate::sources::{SourceKind, SourceSequence};

/// Per-kernel normalised weights quantized to `b`-bit signed integers.
///
/// Taps are stored in `(in_channel, row, col)` order. `taps[i] / 2^b` is the
/// normalised weight in `[-1, 1]`; `scale` is the original `max |w|`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedKernel {
    height: usize,
    width: usize,
    in_channels: usize,
    bits: u32,
    scale: f32,
    taps: Vec<i32>,
}

impl QuantizedKernel {
    /// Scales the kernel to full range then rounds, ties away from zero.
    pub fn quantize(
        weights: &[f32],
        height: usize,
        width: usize,
        in_channels: usize,
        bits: u32,
    ) -> Result<Self> {
        check_kernel_bits(bits)?;
        check_dims(weights.len(), height, width, in_channels)?;
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFiniteWeight(i));
        }
        let max = weights.iter().fold(0f32, |m, w| m.max(w.abs()));
        let scale = if max > 0.0 { max } else { 1.0 };
        let full = f64::from(1u32 << bits);
        let taps = weights
            .iter()
            .map(|&w| {
                let q = (f64::from(w) / f64::from(scale) * full).round();
                q.clamp(-full, full) as i32
            })
            .collect();
        Ok(Self {
            height,
            width,
            in_channels,
            bits,
            scale,
            taps,
        })
    }

    /// Builds a kernel from already quantized taps, as stored in a weights
    /// file.
    pub fn from_taps(
        taps: Vec<i32>,
        height: usize,
        width: usize,
        in_channels: usize,
        bits: u32,
        scale: f32,
    ) -> Result<Self> {
        check_kernel_bits(bits)?;
        check_dims(taps.len(), height, width, in_channels)?;
        let full = 1i32 << bits;
        if let Some(q) = taps.iter().find(|q| q.abs() > full) {
            return Err(Error::InvalidNetwork(format!(
                "tap {q} outside [-{full}, {full}]"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "kernel scale {scale} must be positive"
            )));
        }
        Ok(Self {
            height,
            width,
            in_channels,
            bits,
            scale,
            taps,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn taps(&self) -> &[i32] {
        &self.taps
    }

    /// Fan-in `k = height * width * in_channels`.
    pub fn fan_in(&self) -> usize {
        self.taps.len()
    }

    pub fn positive(&self) -> impl Iterator<Item = u32> + '_ {
        self.taps.iter().map(|&q| q.max(0) as u32)
    }

    pub fn negative(&self) -> impl Iterator<Item = u32> + '_ {
        self.taps.iter().map(|&q| (-q).max(0) as u32)
    }

    /// Re-expresses the taps at another precision, rounding half away from
    /// zero. No retraining is implied.
    pub fn requantize(&self, bits: u32) -> Result<Self> {
        check_kernel_bits(bits)?;
        let factor = f64::from(1u32 << bits) / f64::from(1u32 << self.bits);
        let taps = self
            .taps
            .iter()
            .map(|&q| (f64::from(q) * factor).round() as i32)
            .collect();
        Self::from_taps(
            taps,
            self.height,
            self.width,
            self.in_channels,
            bits,
            self.scale,
        )
    }
}

fn check_kernel_bits(bits: u32) -> Result<()> {
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidPrecision(bits));
    }
    Ok(())
}

fn check_dims(len: usize, height: usize, width: usize, in_channels: usize) -> Result<()> {
    if height == 0 || width == 0 || in_channels == 0 || len != height * width * in_channels {
        return Err(Error::Shape(format!(
            "{len} taps for a {height}x{width}x{in_channels} kernel"
        )));
    }
    Ok(())
}

/// Layer settings. Precision must be in `2..=8` since pixels are 8-bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvConfig {
    pub precision: Precision,
    /// Soft threshold in count units.
    pub threshold: u32,
    pub s0_policy: S0Policy,
}

impl ConvConfig {
    pub fn new(bits: u32) -> Result<Self> {
        check_kernel_bits(bits)?;
        Ok(Self {
            precision: Precision::new(bits)?,
            threshold: 0,
            s0_policy: S0Policy::Alternating,
        })
    }

    pub fn with_stream_len(mut self, n: usize) -> Result<Self> {
        self.precision = self.precision.with_stream_len(n)?;
        Ok(self)
    }

    pub fn with_threshold(mut self, threshold: u32) -> Self {
        self.threshold = threshold;
        self
    }
}

/// Quantized sensor image, `channels x height x width`, values in `[0, 2^b]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u32>,
}

impl PixelImage {
    /// Keeps the top `bits` bits of each 8-bit pixel.
    pub fn from_u8(
        bytes: &[u8],
        channels: usize,
        height: usize,
        width: usize,
        bits: u32,
    ) -> Result<Self> {
        check_kernel_bits(bits)?;
        if bytes.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {channels}x{height}x{width} image",
                bytes.len()
            )));
        }
        let shift = 8 - bits;
        Ok(Self {
            channels,
            height,
            width,
            pixels: bytes.iter().map(|&p| u32::from(p) >> shift).collect(),
        })
    }

    fn at(&self, c: usize, r: isize, col: isize) -> u32 {
        if r < 0 || col < 0 || r as usize >= self.height || col as usize >= self.width {
            return 0;
        }
        self.pixels[(c * self.height + r as usize) * self.width + col as usize]
    }
}

/// Ternary output of one kernel over the image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TernaryFeatureMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<i8>,
}

impl TernaryFeatureMap {
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.values[row * self.width + col]
    }
}

/// `0` inside the band `|c_pos - c_neg| <= T`, otherwise the sign.
pub fn sign_activation(c_pos: u32, c_neg: u32, threshold: u32) -> i8 {
    let diff = i64::from(c_pos) - i64::from(c_neg);
    if diff.unsigned_abs() <= u64::from(threshold) {
        0
    } else {
        diff.signum() as i8
    }
}

/// Dot-product units sharing one pixel counter and one weight counter.
///
/// The shared sources are expanded once into encoded streams for every value
/// in `[0, 2^b]`; units only read those tables.
#[derive(Clone, Debug)]
pub struct ScConvEngine {
    config: ConvConfig,
    pixel_streams: Vec<Bitstream>,
    weight_streams: Vec<Bitstream>,
}

impl ScConvEngine {
    pub fn new(config: ConvConfig) -> Result<Self> {
        let pixels = SourceSequence::generate(&SourceKind::Ramp, config.precision)?;
        let weights = SourceSequence::generate(&SourceKind::VanDerCorputBase2, config.precision)?;
        Self::with_sequences(config, &pixels, &weights)
    }

    /// Engine over caller-supplied comparator sequences.
    pub fn with_sequences(
        config: ConvConfig,
        pixels: &SourceSequence,
        weights: &SourceSequence,
    ) -> Result<Self> {
        let levels = config.precision.levels();
        let n = config.precision.stream_len();
        if pixels.values().len() != n || weights.values().len() != n {
            return Err(Error::LengthMismatch {
                left: pixels.values().len(),
                right: weights.values().len(),
            });
        }
        let pixel_streams = (0..=levels)
            .map(|x| pixels.encode(x))
            .collect::<Result<_>>()?;
        let weight_streams = (0..=levels)
            .map(|w| weights.encode(w))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            pixel_streams,
            weight_streams,
        })
    }

    pub fn config(&self) -> &ConvConfig {
        &self.config
    }

    /// Positive and negative counts for one window (kernel tap order).
    pub fn dot_product(&self, window: &[u32], kernel: &QuantizedKernel) -> Result<(u32, u32)> {
        self.check_window(window, kernel)?;
        Ok(self.counts(window, kernel, &mut Vec::new()))
    }

    fn check_window(&self, window: &[u32], kernel: &QuantizedKernel) -> Result<()> {
        if window.len() != kernel.fan_in() {
            return Err(Error::Shape(format!(
                "window of {} pixels for a kernel with fan-in {}",
                window.len(),
                kernel.fan_in()
            )));
        }
        if kernel.bits() != self.config.precision.bits() {
            return Err(Error::Shape(format!(
                "kernel quantized at {} bits, layer runs at {}",
                kernel.bits(),
                self.config.precision.bits()
            )));
        }
        let levels = self.config.precision.levels();
        if let Some(&x) = window.iter().find(|&&x| x > levels) {
            return Err(Error::ValueOutOfRange {
                value: x,
                max: levels,
            });
        }
        Ok(())
    }

    /// AND products of each polarity are written straight into `scratch` as
    /// tree leaves and reduced in place; both trees share the same depth.
    fn counts(
        &self,
        window: &[u32],
        kernel: &QuantizedKernel,
        scratch: &mut Vec<u64>,
    ) -> (u32, u32) {
        let words = self.pixel_streams[0].words().len();
        let width = kernel.fan_in().next_power_of_two();
        let mut tree = |mags: &mut dyn Iterator<Item = u32>| -> u32 {
            scratch.clear();
            scratch.resize(width * words, 0);
            for (slot, (&x, w)) in scratch.chunks_exact_mut(words).zip(window.iter().zip(mags)) {
                let px = self.pixel_streams[x as usize].words();
                let wt = self.weight_streams[w as usize].words();
                for ((s, a), b) in slot.iter_mut().zip(px).zip(wt) {
                    *s = a & b;
                }
            }
            tff_tree_in_place(scratch, words, self.config.s0_policy);
            scratch[..words].iter().map(|w| w.count_ones()).sum()
        };
        let pos = tree(&mut kernel.positive());
        let neg = tree(&mut kernel.negative());
        (pos, neg)
    }

    /// Same-padded convolution of every kernel over the image.
    pub fn conv_layer(
        &self,
        image: &PixelImage,
        kernels: &[QuantizedKernel],
    ) -> Result<Vec<TernaryFeatureMap>> {
        for k in kernels {
            if k.in_channels() != image.channels {
                return Err(Error::Shape(format!(
                    "kernel expects {} channels, image has {}",
                    k.in_channels(),
                    image.channels
                )));
            }
            if k.height() > image.height || k.width() > image.width {
                return Err(Error::Shape(format!(
                    "{}x{} kernel is larger than the {}x{} image",
                    k.height(),
                    k.width(),
                    image.height,
                    image.width
                )));
            }
        }
        kernels
            .par_iter()
            .map(|k| self.feature_map(image, k))
            .collect()
    }

    fn feature_map(
        &self,
        image: &PixelImage,
        kernel: &QuantizedKernel,
    ) -> Result<TernaryFeatureMap> {
        let (kh, kw) = (kernel.height(), kernel.width());
        let pad_top = (kh as isize - 1) / 2;
        let pad_left = (kw as isize - 1) / 2;
        let mut window = Vec::with_capacity(kernel.fan_in());
        let mut scratch = Vec::new();
        let mut values = Vec::with_capacity(image.height * image.width);
        for r in 0..image.height as isize {
            for c in 0..image.width as isize {
                window.clear();
                for ch in 0..image.channels {
                    for i in 0..kh as isize {
                        for j in 0..kw as isize {
                            window.push(image.at(ch, r + i - pad_top, c + j - pad_left));
                        }
                    }
                }
                self.check_window(&window, kernel)?;
                let (pos, neg) = self.counts(&window, kernel, &mut scratch);
                values.push(sign_activation(pos, neg, self.config.threshold));
            }
        }
        Ok(TernaryFeatureMap {
            height: image.height,
            width: image.width,
            values,
        })
    }
}

/// One-shot layer evaluation; builds the shared source tables first.
pub fn sc_conv_layer(
    image: &PixelImage,
    kernels: &[QuantizedKernel],
    config: ConvConfig,
) -> Result<Vec<TernaryFeatureMap>> {
    ScConvEngine::new(config)?.conv_layer(image, kernels)
}
