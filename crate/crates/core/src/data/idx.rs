//! IDX files, the MNIST distribution format: a big-endian magic number
//! (`0x00000803` for `u8` images, `0x00000801` for `u8` labels), one
//! big-endian `u32` per dimension, then the raw bytes.

use std::path::Path;

use crate::error::{arg_err, Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]`, stored image-major, row-major within an image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl ImageSet {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels_per_image();
        &self.pixels[i * p..(i + 1) * p]
    }
}

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset,
        message: message.into(),
    })
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes(b.try_into().expect("4 bytes"))),
        None => format_err(offset, format!("truncated header: missing {what}")),
    }
}

/// Validates the magic and dimensions; returns the dims and payload offset.
fn header(bytes: &[u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, usize)> {
    let found = read_u32(bytes, 0, "magic number")?;
    if found != magic {
        return format_err(0, format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"));
    }
    let dims = (0..ndims)
        .map(|i| read_u32(bytes, 4 + 4 * i, "dimension").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndims;
    let expected = dims.iter().product::<usize>();
    let have = bytes.len() - start;
    if have < expected {
        return format_err(bytes.len(), format!("truncated payload: {have} of {expected} bytes"));
    }
    if have > expected {
        return format_err(start + expected, "trailing bytes after payload");
    }
    Ok((dims, start))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let (dims, start) = header(bytes, IMAGE_MAGIC, 3)?;
    Ok(ImageSet {
        count: dims[0],
        rows: dims[1],
        cols: dims[2],
        pixels: bytes[start..].iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

/// Labels must be digits `0..=9`.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, start) = header(bytes, LABEL_MAGIC, 1)?;
    bytes[start..]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if b > 9 {
                arg_err(format!("label {b} at index {i} (byte {}) is not a digit", start + i))
            } else {
                Ok(b as usize)
            }
        })
        .collect()
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    parse_idx_images(&std::fs::read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_idx_labels(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = IMAGE_MAGIC.to_be_bytes().to_vec();
        for d in [count, rows, cols] {
            v.extend(d.to_be_bytes());
        }
        v.extend(pixels);
        v
    }

    #[test]
    fn parses_a_hand_built_image() {
        let set = parse_idx_images(&image_file(1, 2, 2, &[0, 51, 255, 102])).unwrap();
        assert_eq!((set.count, set.rows, set.cols), (1, 2, 2));
        assert_eq!(set.pixels, vec![0.0, 0.2, 1.0, 0.4]);
    }

    #[test]
    fn truncation_and_bad_magic_report_offsets() {
        match parse_idx_images(&image_file(1, 2, 2, &[0, 1, 2, 3])[..6]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match parse_idx_images(&image_file(1, 2, 2, &[0, 1, 2])) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("{other:?}"),
        }
        let mut labels = LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend(1u32.to_be_bytes());
        labels.push(3);
        assert!(matches!(parse_idx_images(&labels), Err(Error::Format { offset: 0, .. })));
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![3]);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut labels = LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend(2u32.to_be_bytes());
        labels.extend([9, 10]);
        assert!(matches!(parse_idx_labels(&labels), Err(Error::Argument(_))));
    }
}
