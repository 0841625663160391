//! SBNN weights file: the contract between the trainer and the simulator.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "SBNN"  u32 version = 1  u32 b  u32 layer_count
//! per layer: u32 tag, payload
//!   1 ScFirstConv  u32 K, kh, kw, in_ch; u32 T;
//!                  K x (f32 scale, kh*kw*in_ch x i16 tap)
//!   2 Conv         u32 out_ch, kh, kw, in_ch;
//!                  f32 weights (out, in, kh, kw); f32 biases
//!   3 MaxPool2x2   (no payload)
//!   4 Flatten      (no payload)
//!   5 Dense        u32 out, in; f32 weights (out-major); f32 biases
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Taps are ordered `(in_ch, row, col)`. Flattening is `(channel, row, col)`
//! row-major. Activations are implied by position: convolutions use ReLU,
//! dense layers use ReLU except the last, which emits raw logits.

use crate::conv::QuantizedKernel;
use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2d, Dense, Layer, NetworkSpec, ScFirstConv};

pub const MAGIC: &[u8; 4] = b"SBNN";
pub const VERSION: u32 = 1;
/// Input side length the shape chain is checked against.
pub const INPUT_SIDE: usize = 28;

const TAG_SC_CONV: u32 = 1;
const TAG_CONV: u32 = 2;
const TAG_MAXPOOL: u32 = 3;
const TAG_FLATTEN: u32 = 4;
const TAG_DENSE: u32 = 5;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }

    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| overflow(n))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect())
    }

    fn i16s(&mut self, n: usize) -> Result<Vec<i32>> {
        let len = n.checked_mul(2).ok_or_else(|| overflow(n))?;
        Ok(self
            .take(len)?
            .chunks_exact(2)
            .map(|c| i32::from(i16::from_le_bytes([c[0], c[1]])))
            .collect())
    }
}

fn overflow(n: usize) -> Error {
    Error::InvalidNetwork(format!("declared size {n} overflows"))
}

fn product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidNetwork(format!("dimensions {dims:?} overflow")))
}

/// Parses and validates an SBNN file. Nothing is returned unless the whole
/// file checks out.
pub fn load_weights(bytes: &[u8]) -> Result<NetworkSpec> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadWeightsMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            needed: 16,
            available: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("four bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader {
        bytes: body,
        pos: 8,
    };
    let bits = r.u32()?;
    let layer_count = r.dim()?;
    let mut layers = Vec::new();
    for _ in 0..layer_count {
        let tag = r.u32()?;
        let layer = match tag {
            TAG_SC_CONV => {
                let (k, kh, kw, in_ch) = (r.dim()?, r.dim()?, r.dim()?, r.dim()?);
                let threshold = r.u32()?;
                let fan_in = product(&[kh, kw, in_ch])?;
                let mut kernels = Vec::new();
                for _ in 0..k {
                    let scale = r.f32()?;
                    let taps = r.i16s(fan_in)?;
                    kernels.push(QuantizedKernel::from_taps(
                        taps, kh, kw, in_ch, bits, scale,
                    )?);
                }
                Layer::ScFirstConv(ScFirstConv {
                    kernel_height: kh,
                    kernel_width: kw,
                    in_channels: in_ch,
                    threshold,
                    kernels,
                })
            }
            TAG_CONV => {
                let (out, kh, kw, in_ch) = (r.dim()?, r.dim()?, r.dim()?, r.dim()?);
                let weights = r.f32s(product(&[out, in_ch, kh, kw])?)?;
                let bias = r.f32s(out)?;
                Layer::Conv(Conv2d {
                    out_channels: out,
                    in_channels: in_ch,
                    kernel_height: kh,
                    kernel_width: kw,
                    weights,
                    bias,
                    activation: Activation::Relu,
                })
            }
            TAG_MAXPOOL => Layer::MaxPool2x2,
            TAG_FLATTEN => Layer::Flatten,
            TAG_DENSE => {
                let (out, inp) = (r.dim()?, r.dim()?);
                let weights = r.f32s(product(&[out, inp])?)?;
                let bias = r.f32s(out)?;
                Layer::Dense(Dense {
                    out_dim: out,
                    in_dim: inp,
                    weights,
                    bias,
                    activation: Activation::Relu,
                })
            }
            other => return Err(Error::UnknownLayerTag(other)),
        };
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(Error::InvalidNetwork(format!(
            "{} unread bytes after the last layer",
            body.len() - r.pos
        )));
    }
    if let Some(Layer::Dense(last)) = layers.last_mut() {
        last.activation = Activation::None;
    }
    let spec = NetworkSpec { bits, layers };
    spec.validate(INPUT_SIDE, INPUT_SIDE)?;
    Ok(spec)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v =
        u32::try_from(v).map_err(|_| Error::InvalidNetwork(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises a valid network. Activations must follow the positional
/// convention since the format does not store them.
pub fn save_weights(spec: &NetworkSpec) -> Result<Vec<u8>> {
    spec.validate(INPUT_SIDE, INPUT_SIDE)?;
    let last = spec.layers.len() - 1;
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, spec.bits as usize)?;
    put_u32(&mut out, spec.layers.len())?;
    for (i, layer) in spec.layers.iter().enumerate() {
        let expected = if i == last {
            Activation::None
        } else {
            Activation::Relu
        };
        match layer {
            Layer::ScFirstConv(l) => {
                put_u32(&mut out, TAG_SC_CONV as usize)?;
                for d in [
                    l.kernels.len(),
                    l.kernel_height,
                    l.kernel_width,
                    l.in_channels,
                ] {
                    put_u32(&mut out, d)?;
                }
                put_u32(&mut out, l.threshold as usize)?;
                for k in &l.kernels {
                    out.extend_from_slice(&k.scale().to_le_bytes());
                    for &q in k.taps() {
                        let q = i16::try_from(q).map_err(|_| {
                            Error::InvalidNetwork(format!("tap {q} does not fit in i16"))
                        })?;
                        out.extend_from_slice(&q.to_le_bytes());
                    }
                }
            }
            Layer::Conv(c) => {
                if c.activation != Activation::Relu {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: convolutions are stored with ReLU only"
                    )));
                }
                put_u32(&mut out, TAG_CONV as usize)?;
                for d in [
                    c.out_channels,
                    c.kernel_height,
                    c.kernel_width,
                    c.in_channels,
                ] {
                    put_u32(&mut out, d)?;
                }
                put_f32s(&mut out, &c.weights);
                put_f32s(&mut out, &c.bias);
            }
            Layer::MaxPool2x2 => put_u32(&mut out, TAG_MAXPOOL as usize)?,
            Layer::Flatten => put_u32(&mut out, TAG_FLATTEN as usize)?,
            Layer::Dense(d) => {
                if d.activation != expected {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: dense activation must be {expected:?} at this position"
                    )));
                }
                put_u32(&mut out, TAG_DENSE as usize)?;
                put_u32(&mut out, d.out_dim)?;
                put_u32(&mut out, d.in_dim)?;
                put_f32s(&mut out, &d.weights);
                put_f32s(&mut out, &d.bias);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal() -> NetworkSpec {
        let kernel = QuantizedKernel::quantize(&[1.0], 1, 1, 1, 8).unwrap();
        NetworkSpec {
            bits: 8,
            layers: vec![
                Layer::ScFirstConv(ScFirstConv {
                    kernel_height: 1,
                    kernel_width: 1,
                    in_channels: 1,
                    threshold: 0,
                    kernels: vec![kernel],
                }),
                Layer::Dense(Dense {
                    out_dim: 10,
                    in_dim: 784,
                    weights: (0..7840).map(|i| (i % 13) as f32 * 0.01).collect(),
                    bias: vec![0.5; 10],
                    activation: Activation::None,
                }),
            ],
        }
    }

    fn refresh_crc(bytes: &mut [u8]) {
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
    }

    #[test]
    fn minimal_round_trip_is_byte_identical() {
        let bytes = save_weights(&minimal()).unwrap();
        let spec = load_weights(&bytes).unwrap();
        assert_eq!(spec, minimal());
        assert_eq!(save_weights(&spec).unwrap(), bytes);
        assert_eq!(&bytes[..4], b"SBNN");
        // header, sc layer (tag + 5 u32 + scale + 1 tap), dense, crc
        assert_eq!(bytes.len(), 16 + 4 + 20 + 4 + 2 + 4 + 8 + 7840 * 4 + 40 + 4);
    }

    #[test]
    fn corrupted_bytes_are_rejected() {
        let bytes = save_weights(&minimal()).unwrap();
        let mut tampered = bytes.clone();
        tampered[20] ^= 0x01; // first layer's kernel count
        assert!(matches!(
            load_weights(&tampered),
            Err(Error::ChecksumMismatch { .. })
        ));
        refresh_crc(&mut tampered);
        assert!(load_weights(&tampered).is_err());

        let mut wrong_len = bytes.clone();
        wrong_len[48..52].copy_from_slice(&11u32.to_le_bytes()); // dense out dim
        refresh_crc(&mut wrong_len);
        assert!(load_weights(&wrong_len).is_err());
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(load_weights(b"NOPE"), Err(Error::BadWeightsMagic)));
        assert!(matches!(
            load_weights(b"SBNN\x01\0\0\0"),
            Err(Error::Truncated { .. })
        ));
        let mut v2 = save_weights(&minimal()).unwrap();
        v2[4] = 2;
        assert!(matches!(
            load_weights(&v2),
            Err(Error::UnsupportedVersion(2))
        ));
        let mut tag = save_weights(&minimal()).unwrap();
        tag[16..20].copy_from_slice(&9u32.to_le_bytes());
        refresh_crc(&mut tag);
        assert!(matches!(load_weights(&tag), Err(Error::UnknownLayerTag(9))));
    }

    #[test]
    fn unserializable_specs_are_rejected() {
        let mut spec = minimal();
        if let Layer::Dense(d) = &mut spec.layers[1] {
            d.activation = Activation::Relu;
        }
        assert!(save_weights(&spec).is_err());
        let mut spec = minimal();
        spec.layers.swap(0, 1);
        assert!(save_weights(&spec).is_err());
    }

    #[test]
    fn default_topology_round_trips() {
        let kernels: Vec<_> = (0..32)
            .map(|k| {
                let w: Vec<f32> = (0..9).map(|i| ((k * 9 + i) % 7) as f32 - 3.0).collect();
                QuantizedKernel::quantize(&w, 3, 3, 1, 4).unwrap()
            })
            .collect();
        let spec = NetworkSpec {
            bits: 4,
            layers: vec![
                Layer::ScFirstConv(ScFirstConv {
                    kernel_height: 3,
                    kernel_width: 3,
                    in_channels: 1,
                    threshold: 2,
                    kernels,
                }),
                Layer::Conv(Conv2d {
                    out_channels: 4,
                    in_channels: 32,
                    kernel_height: 3,
                    kernel_width: 3,
                    weights: vec![0.01; 4 * 32 * 9],
                    bias: vec![0.0; 4],
                    activation: Activation::Relu,
                }),
                Layer::MaxPool2x2,
                Layer::Flatten,
                Layer::Dense(Dense {
                    out_dim: 10,
                    in_dim: 4 * 13 * 13,
                    weights: vec![0.02; 10 * 4 * 13 * 13],
                    bias: vec![0.0; 10],
                    activation: Activation::None,
                }),
            ],
        };
        let bytes = save_weights(&spec).unwrap();
        assert_eq!(load_weights(&bytes).unwrap(), spec);
    }

    fn small_spec() -> impl Strategy<Value = NetworkSpec> {
        (2u32..=8, 1usize..4, 1usize..4, 0u32..5, 1usize..6).prop_flat_map(
            |(bits, k, side, t, hidden)| {
                let full = 1i32 << bits;
                let taps =
                    prop::collection::vec(prop::collection::vec(-full..=full, side * side), k);
                let scales = prop::collection::vec(0.01f32..4.0, k);
                let inputs = k * 28 * 28;
                let w1 = prop::collection::vec(-1.0f32..1.0, hidden * inputs);
                let b1 = prop::collection::vec(-1.0f32..1.0, hidden);
                let w2 = prop::collection::vec(-1.0f32..1.0, 10 * hidden);
                let b2 = prop::collection::vec(-1.0f32..1.0, 10);
                (taps, scales, w1, b1, w2, b2).prop_map(move |(taps, scales, w1, b1, w2, b2)| {
                    let kernels = taps
                        .into_iter()
                        .zip(scales)
                        .map(|(q, s)| {
                            QuantizedKernel::from_taps(q, side, side, 1, bits, s).unwrap()
                        })
                        .collect();
                    NetworkSpec {
                        bits,
                        layers: vec![
                            Layer::ScFirstConv(ScFirstConv {
                                kernel_height: side,
                                kernel_width: side,
                                in_channels: 1,
                                threshold: t,
                                kernels,
                            }),
                            Layer::Flatten,
                            Layer::Dense(Dense {
                                out_dim: hidden,
                                in_dim: inputs,
                                weights: w1,
                                bias: b1,
                                activation: Activation::Relu,
                            }),
                            Layer::Dense(Dense {
                                out_dim: 10,
                                in_dim: hidden,
                                weights: w2,
                                bias: b2,
                                activation: Activation::None,
                            }),
                        ],
                    }
                })
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn load_inverts_save(spec in small_spec()) {
            let bytes = save_weights(&spec).unwrap();
            prop_assert_eq!(load_weights(&bytes).unwrap(), spec);
        }

        #[test]
        fn fuzzed_files_error_cleanly(flip in any::<prop::sample::Index>(), value in any::<u8>(), cut in any::<prop::sample::Index>()) {
            let mut bytes = save_weights(&minimal()).unwrap();
            let i = flip.index(bytes.len() - 4);
            bytes[i] = value;
            refresh_crc(&mut bytes);
            let _ = load_weights(&bytes);
            let n = cut.index(bytes.len());
            let _ = load_weights(&bytes[..n]);
        }
    }
}
