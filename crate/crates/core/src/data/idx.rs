//! IDX image/label files (the MNIST family distribution format).
//!
//! Headers are big-endian: a 4-byte magic (`0x00000803` for u8 images of
//! rank 3, `0x00000801` for u8 labels of rank 1) followed by one u32 per
//! dimension. Files ending in `.gz` are decompressed transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::autodiff::Tensor;
use crate::error::{AmfError, Result};
use crate::fsutil;

use super::synth::Example;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// How IDX examples are assigned to modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxModes {
    /// Every example is mode 0.
    Single,
    /// Mode is `label % 2`.
    LabelParity,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fsutil::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| AmfError::format(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| AmfError::format(format!("{what}: truncated header")))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_images(buf: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(buf, 0, "idx images")?;
    if magic != IMAGES_MAGIC {
        return Err(AmfError::format(format!(
            "idx images: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(buf, 4, "idx images")? as usize;
    let rows = be_u32(buf, 8, "idx images")? as usize;
    let cols = be_u32(buf, 12, "idx images")? as usize;
    let body = &buf[16..];
    if body.len() != n * rows * cols {
        return Err(AmfError::format(format!(
            "idx images: header declares {n}x{rows}x{cols} but body has {} bytes",
            body.len()
        )));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_labels(buf: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(buf, 0, "idx labels")?;
    if magic != LABELS_MAGIC {
        return Err(AmfError::format(format!(
            "idx labels: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(buf, 4, "idx labels")? as usize;
    let body = &buf[8..];
    if body.len() != n {
        return Err(AmfError::format(format!(
            "idx labels: header declares {n} labels but body has {} bytes",
            body.len()
        )));
    }
    Ok(body)
}

/// Reads paired image/label files. Pixels are scaled by 1/255 into
/// `[0, 1]`; `limit` keeps the first examples in file order.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
    modes: IdxModes,
) -> Result<Vec<Example>> {
    let ibuf = read_maybe_gz(images_path)?;
    let lbuf = read_maybe_gz(labels_path)?;
    examples_from_idx(&ibuf, &lbuf, limit, modes)
}

pub fn examples_from_idx(
    images: &[u8],
    labels: &[u8],
    limit: Option<usize>,
    modes: IdxModes,
) -> Result<Vec<Example>> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(AmfError::format(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let take = limit.map_or(n, |l| l.min(n));
    let plane = rows * cols;
    (0..take)
        .map(|i| {
            let data = pixels[i * plane..(i + 1) * plane]
                .iter()
                .map(|&p| f32::from(p) / 255.0)
                .collect();
            let label = usize::from(labels[i]);
            Ok(Example {
                image: Tensor::from_vec(&[1, rows, cols], data)?,
                label,
                mode: match modes {
                    IdxModes::Single => 0,
                    IdxModes::LabelParity => (label % 2) as u8,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture(n: usize) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for d in [n as u32, 4, 4] {
            img.extend_from_slice(&d.to_be_bytes());
        }
        img.extend((0..n * 16).map(|i| (i % 256) as u8));
        let mut lab = Vec::new();
        lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        lab.extend((0..n).map(|i| (i % 10) as u8));
        (img, lab)
    }

    #[test]
    fn parses_and_scales() {
        let (img, lab) = fixture(12);
        let ex = examples_from_idx(&img, &lab, None, IdxModes::LabelParity).unwrap();
        assert_eq!(ex.len(), 12);
        assert_eq!(ex[0].image.shape(), &[1, 4, 4]);
        assert_eq!(ex[0].image.data()[1], 1.0 / 255.0);
        assert_eq!(ex[3].mode, 1);
        assert!(ex.iter().all(|e| e.label < 10));
    }

    #[test]
    fn limit_keeps_file_order() {
        let (img, lab) = fixture(12);
        let ex = examples_from_idx(&img, &lab, Some(5), IdxModes::Single).unwrap();
        assert_eq!(ex.len(), 5);
        assert_eq!(
            ex.iter().map(|e| e.label).collect::<Vec<_>>(),
            [0, 1, 2, 3, 4]
        );
        assert!(ex.iter().all(|e| e.mode == 0));
    }

    #[test]
    fn bad_magic_and_counts() {
        let (img, lab) = fixture(3);
        assert!(matches!(
            examples_from_idx(&lab, &lab, None, IdxModes::Single),
            Err(AmfError::Format(_))
        ));
        assert!(examples_from_idx(&img[..img.len() - 1], &lab, None, IdxModes::Single).is_err());
        let (_, lab4) = fixture(4);
        assert!(examples_from_idx(&img, &lab4, None, IdxModes::Single).is_err());
    }
}
