//! Big-endian IDX files (the MNIST container format).

use std::path::Path;

use crate::datasets::{LabeledImageSet, Provenance, UNLABELED};
use crate::error::{Error, Result};
use crate::ndmath::Array;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Label byte written for unlabelled images.
const UNLABELED_BYTE: u8 = 255;

/// Raw `u8` image tensor from an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

fn idx_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Idx {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_err(offset, "truncated header"))
}

fn expect_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(idx_err(
            0,
            format!("bad magic {found:#010x}, expected {magic:#010x}"),
        ));
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let available = bytes.len().saturating_sub(start);
    if available < len {
        return Err(idx_err(
            bytes.len(),
            format!("truncated payload: need {len} bytes after header, found {available}"),
        ));
    }
    if available > len {
        return Err(idx_err(
            start + len,
            format!("{} trailing bytes after payload", available - len),
        ));
    }
    Ok(&bytes[start..start + len])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    expect_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let height = read_u32(bytes, 8)? as usize;
    let width = read_u32(bytes, 12)? as usize;
    let pixels = payload(bytes, 16, count * height * width)?.to_vec();
    Ok(IdxImages {
        count,
        height,
        width,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    expect_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.height as u32,
        images.width as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a set from IDX bytes: pixels scaled by 1/255, label byte 255 read
/// as unlabelled, everything else manual. `class_count` is one past the
/// largest label.
pub fn set_from_idx_bytes(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledImageSet> {
    let images = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.count != labels.len() {
        return Err(idx_err(
            4,
            format!(
                "image file holds {} images but label file holds {} labels",
                images.count,
                labels.len()
            ),
        ));
    }
    let pixels: Vec<f32> = images.pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    let array = Array::new(&[images.count, 1, images.height, images.width], pixels)?;
    let class_count = labels
        .iter()
        .filter(|&&l| l != UNLABELED_BYTE)
        .map(|&l| usize::from(l) + 1)
        .max()
        .unwrap_or(0);
    let (ls, ps) = labels
        .iter()
        .map(|&l| {
            if l == UNLABELED_BYTE {
                (UNLABELED, Provenance::Unlabeled)
            } else {
                (i32::from(l), Provenance::Manual)
            }
        })
        .unzip();
    LabeledImageSet::new(array, ls, ps, class_count)
}

/// Reads an image/label IDX pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    set_from_idx_bytes(&image_bytes, &label_bytes)
}

/// Serializes a set to IDX bytes: pixels clamped to [0, 1] and rounded to
/// `u8`, unlabelled images written as label 255.
pub fn idx_bytes(set: &LabeledImageSet) -> (Vec<u8>, Vec<u8>) {
    let pixels = set
        .images()
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let images = IdxImages {
        count: set.len(),
        height: set.height(),
        width: set.width(),
        pixels,
    };
    let labels: Vec<u8> = set
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).unwrap_or(UNLABELED_BYTE))
        .collect();
    (write_idx_images(&images), write_idx_labels(&labels))
}

/// Writes a set as an image/label IDX pair.
pub fn write_idx(
    set: &LabeledImageSet,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (img, lab) = idx_bytes(set);
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn mnist_style_header_is_understood() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[10000, 28, 28]);
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        bytes.resize(16 + 10000 * 28 * 28, 0);
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!((parsed.count, parsed.height, parsed.width), (10000, 28, 28));
    }

    #[test]
    fn pixel_255_scales_to_one() {
        let mut img = header(IDX_IMAGES_MAGIC, &[1, 1, 2]);
        img.extend_from_slice(&[0, 255]);
        let mut lab = header(IDX_LABELS_MAGIC, &[1]);
        lab.push(3);
        let set = set_from_idx_bytes(&img, &lab).unwrap();
        assert_eq!(set.images().data(), &[0.0, 1.0]);
        assert_eq!(set.labels(), &[3]);
        assert_eq!(set.provenance(), &[Provenance::Manual]);
        assert_eq!(set.class_count(), 4);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let mut img = header(IDX_IMAGES_MAGIC, &[2, 1, 1]);
        img.extend_from_slice(&[1, 2]);
        let mut lab = header(IDX_LABELS_MAGIC, &[3]);
        lab.extend_from_slice(&[0, 1, 2]);
        assert!(matches!(set_from_idx_bytes(&img, &lab), Err(Error::Idx { .. })));
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let bytes = header(0x0000_0802, &[1, 1, 1]);
        match parse_idx_images(&bytes) {
            Err(Error::Idx { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let mut bytes = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        bytes.extend_from_slice(&[0; 5]);
        match parse_idx_images(&bytes) {
            Err(Error::Idx { offset, message }) => {
                assert_eq!(offset, 21);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Idx { offset: 0, .. })));
    }

    proptest! {
        #[test]
        fn idx_round_trip_is_byte_exact(
            n in 1usize..6, h in 1usize..5, w in 1usize..5,
            seed in any::<u64>(),
        ) {
            let pixels: Vec<u8> = (0..n * h * w)
                .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8)
                .collect();
            let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
            let img = write_idx_images(&IdxImages { count: n, height: h, width: w, pixels });
            let lab = write_idx_labels(&labels);
            let set = set_from_idx_bytes(&img, &lab).unwrap();
            let (img2, lab2) = idx_bytes(&set);
            prop_assert_eq!(img2, img);
            prop_assert_eq!(lab2, lab);
        }
    }
}
