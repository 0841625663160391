//! IDX dataset parsing. IDX headers are big-endian.

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// 8-bit greyscale images stored contiguously, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl ImageSet {
    pub fn image(&self, index: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[index * size..(index + 1) * size]
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let word = bytes.get(offset..offset + 4).ok_or(Error::Truncated {
        needed: offset + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("four bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32_be(bytes, 0)?;
    if found != expected {
        return Err(Error::WrongMagic { expected, found });
    }
    Ok(())
}

/// Returns the payload after a header, which must be exactly `len` bytes.
fn payload(bytes: &[u8], header: usize, len: u128) -> Result<&[u8]> {
    let needed = header as u128 + len;
    if (bytes.len() as u128) < needed {
        return Err(Error::Truncated {
            needed: usize::try_from(needed).unwrap_or(usize::MAX),
            available: bytes.len(),
        });
    }
    if bytes.len() as u128 > needed {
        return Err(Error::DimensionMismatch(format!(
            "header declares {len} payload bytes, file has {}",
            bytes.len() - header
        )));
    }
    Ok(&bytes[header..])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32_be(bytes, 4)?;
    let rows = read_u32_be(bytes, 8)?;
    let cols = read_u32_be(bytes, 12)?;
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch(format!(
            "image size {rows}x{cols}"
        )));
    }
    let len = u128::from(count) * u128::from(rows) * u128::from(cols);
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(ImageSet {
        count: count as usize,
        rows: rows as usize,
        cols: cols as usize,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32_be(bytes, 4)?;
    let labels = payload(bytes, 8, u128::from(count))?;
    if let Some(index) = labels.iter().position(|&l| l > 9) {
        return Err(Error::LabelOutOfRange {
            index,
            value: labels[index],
        });
    }
    Ok(labels.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    #[test]
    fn single_blank_image() {
        let mut bytes = header(IMAGES_MAGIC, &[1, 28, 28]);
        bytes.extend(std::iter::repeat_n(0, 784));
        let set = parse_idx_images(&bytes).unwrap();
        assert_eq!((set.count, set.rows, set.cols), (1, 28, 28));
        assert!(set.image(0).iter().all(|&p| p == 0));
    }

    #[test]
    fn labels_file() {
        let mut bytes = header(LABELS_MAGIC, &[3]);
        bytes.extend([0, 5, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), [0, 5, 9]);
        *bytes.last_mut().unwrap() = 10;
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(Error::LabelOutOfRange {
                index: 2,
                value: 10
            })
        ));
    }

    #[test]
    fn distinct_errors() {
        let labels = header(LABELS_MAGIC, &[0]);
        assert!(matches!(
            parse_idx_images(&labels),
            Err(Error::WrongMagic {
                expected: IMAGES_MAGIC,
                found: LABELS_MAGIC
            })
        ));
        let mut short = header(IMAGES_MAGIC, &[2, 28, 28]);
        short.extend([0u8; 784]);
        assert!(matches!(
            parse_idx_images(&short),
            Err(Error::Truncated { .. })
        ));
        let mut long = header(IMAGES_MAGIC, &[1, 2, 2]);
        long.extend([0u8; 5]);
        assert!(matches!(
            parse_idx_images(&long),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            parse_idx_images(&header(IMAGES_MAGIC, &[1, 0, 28])),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            parse_idx_labels(&[0, 0]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn huge_declared_counts_do_not_allocate() {
        let bytes = header(IMAGES_MAGIC, &[u32::MAX, u32::MAX, u32::MAX]);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::Truncated { .. })
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = parse_idx_images(&bytes);
            let _ = parse_idx_labels(&bytes);
        }

        #[test]
        fn fuzzed_headers_never_panic(dims in prop::collection::vec(any::<u32>(), 0..4), tail in prop::collection::vec(any::<u8>(), 0..32)) {
            for magic in [IMAGES_MAGIC, LABELS_MAGIC] {
                let mut bytes = header(magic, &dims);
                bytes.extend(&tail);
                let _ = parse_idx_images(&bytes);
                let _ = parse_idx_labels(&bytes);
            }
        }
    }
}
