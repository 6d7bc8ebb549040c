//! Dataset files.
//!
//! ```text
//! "AMFDATA1"
//! u32 K_A, u32 K_B, u32 train/class, u32 val/class, u32 test/class,
//! u32 H, u32 W, u32 C, f32 noise_A, f32 noise_B, u64 seed
//! u32 train count, u32 val count, u32 test count
//! per example: u16 label, u8 mode, f32 pixels[C·H·W] row-major
//! ```
//!
//! Everything little-endian. Examples are stored train, then val, then test.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{AmfError, Result};
use crate::fsutil::{self, Reader};

use super::synth::{Example, MixtureDataset, MixtureSpec};

pub const DATASET_MAGIC: &[u8; 8] = b"AMFDATA1";

/// Bytes before the first example.
pub const HEADER_LEN: usize = 8 + 8 * 4 + 2 * 4 + 8 + 3 * 4;

pub fn encoded_len(ds: &MixtureDataset) -> usize {
    HEADER_LEN + ds.len() * (2 + 1 + 4 * ds.spec.pixels())
}

pub fn encode(ds: &MixtureDataset) -> Vec<u8> {
    let s = &ds.spec;
    let mut out = Vec::with_capacity(encoded_len(ds));
    out.extend_from_slice(DATASET_MAGIC);
    for v in [
        s.classes_a,
        s.classes_b,
        s.train_per_class,
        s.val_per_class,
        s.test_per_class,
        s.height,
        s.width,
        s.channels,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&s.noise_a.to_le_bytes());
    out.extend_from_slice(&s.noise_b.to_le_bytes());
    out.extend_from_slice(&s.seed.to_le_bytes());
    for split in [&ds.train, &ds.val, &ds.test] {
        out.extend_from_slice(&(split.len() as u32).to_le_bytes());
    }
    for ex in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        out.extend_from_slice(&(ex.label as u16).to_le_bytes());
        out.push(ex.mode);
        for v in ex.image.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<MixtureDataset> {
    let mut r = Reader::new(bytes, "dataset");
    if r.take(8)? != DATASET_MAGIC {
        return Err(AmfError::format("bad dataset magic or version"));
    }
    let mut u = || r.u32().map(|v| v as usize);
    let (classes_a, classes_b) = (u()?, u()?);
    let (train_per_class, val_per_class, test_per_class) = (u()?, u()?, u()?);
    let (height, width, channels) = (u()?, u()?, u()?);
    let spec = MixtureSpec {
        classes_a,
        classes_b,
        train_per_class,
        val_per_class,
        test_per_class,
        height,
        width,
        channels,
        noise_a: r.f32()?,
        noise_b: r.f32()?,
        seed: r.u64()?,
    };
    spec.validate()
        .map_err(|e| AmfError::format(format!("dataset header: {e}")))?;
    let counts = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let expected = [
        spec.classes() * train_per_class,
        spec.classes() * val_per_class,
        spec.classes() * test_per_class,
    ];
    if counts != expected {
        return Err(AmfError::format(format!(
            "split counts {counts:?} disagree with header (expected {expected:?})"
        )));
    }
    let mut splits: [Vec<Example>; 3] = Default::default();
    for (split, &n) in splits.iter_mut().zip(&counts) {
        split.reserve(n);
        for _ in 0..n {
            let label = r.u16()? as usize;
            let mode = r.u8()?;
            if label >= spec.classes() || mode != spec.mode_of(label) {
                return Err(AmfError::format(format!(
                    "example with label {label} and mode {mode} is inconsistent with the header"
                )));
            }
            let image = Tensor::from_vec(&[channels, height, width], r.f32s(spec.pixels())?)?;
            split.push(Example { image, label, mode });
        }
    }
    r.finish()?;
    let [train, val, test] = splits;
    Ok(MixtureDataset {
        spec,
        train,
        val,
        test,
    })
}

pub fn save(ds: &MixtureDataset, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode(ds))
}

pub fn load(path: &Path) -> Result<MixtureDataset> {
    decode(&fsutil::read(path)?)
}
