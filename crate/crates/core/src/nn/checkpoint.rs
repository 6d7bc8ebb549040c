//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AMFCKPT1"                      8-byte magic
//! u32                             parameter count
//! per parameter:
//!   u16 name length, UTF-8 name
//!   u8 rank, u32 dims[rank]
//!   f32 payload, row-major
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{AmfError, Result};
use crate::fsutil::{self, Reader};

use super::model::Model;
use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMFCKPT1";

/// Ordered parameter records as stored on disk.
pub type Checkpoint = ParamStore<f32>;

pub fn encode(store: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.numel() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| AmfError::usage(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(AmfError::format("bad checkpoint magic or version"));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| AmfError::format("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| AmfError::format(format!("{name}: shape overflows")))?;
        let data = r.f32s(numel)?;
        let t =
            Tensor::from_vec(&shape, data).map_err(|e| AmfError::format(format!("{name}: {e}")))?;
        store
            .insert(name, t)
            .map_err(|e| AmfError::format(e.to_string()))?;
    }
    r.finish()?;
    Ok(store)
}

pub fn save(store: &Checkpoint, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode(store)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fsutil::read(path)?)
}

/// Saves every parameter of `model`.
pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    save(&model.params, path)
}

/// Loads a checkpoint into a model built for the matching architecture.
pub fn load_into(model: &mut Model<f32>, path: &Path) -> Result<()> {
    model.load_params(&load(path)?)
}

/// One `source prefix → target prefix` rename used by [`transfer_init`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixMap {
    pub source: String,
    pub target: String,
}

impl PrefixMap {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }
}

/// Copies pretrained weights into `target`.
///
/// A target parameter `target_prefix + rest` receives the source parameter
/// `source_prefix + rest` when it exists. Unmapped target parameters keep
/// their current (freshly initialized) values. Returns the copied names.
/// Any shape conflict aborts before anything is written.
pub fn transfer_init(
    target: &mut Model<f32>,
    source: &Checkpoint,
    map: &[PrefixMap],
) -> Result<Vec<String>> {
    let mut plan = Vec::new();
    let mut conflicts = Vec::new();
    for (name, t) in target.params.iter() {
        let Some(src_name) = map.iter().find_map(|m| {
            name.strip_prefix(m.target.as_str())
                .map(|rest| format!("{}{rest}", m.source))
        }) else {
            continue;
        };
        match source.get(&src_name) {
            Some(s) if s.shape() == t.shape() => plan.push((name.to_string(), s.clone())),
            Some(_) => conflicts.push(name.to_string()),
            None => {}
        }
    }
    if !conflicts.is_empty() {
        return Err(AmfError::Compatibility {
            reason: "pretrained shapes differ from target".into(),
            names: conflicts,
        });
    }
    let copied = plan.iter().map(|(n, _)| n.clone()).collect();
    for (name, t) in plan {
        *target.params.get_mut(&name).expect("name came from target") = t;
    }
    Ok(copied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, ModelConfig};

    fn small(arch: Arch) -> Model<f32> {
        Model::init(ModelConfig::new(arch, 2, 4, 3).with_input(1, 8, 8), 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small(Arch::Amf);
        let bytes = encode(&m.params).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m.params);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_magic_rejected() {
        let bytes = encode(&small(Arch::Single).params).unwrap();
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(AmfError::Format(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[7] = b'2';
        assert!(matches!(decode(&bad), Err(AmfError::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode(&long), Err(AmfError::Format(_))));
    }

    #[test]
    fn empty_map_leaves_target_unchanged() {
        let mut t = small(Arch::Amf);
        let before = t.clone();
        let src = small(Arch::Single).params;
        assert!(transfer_init(&mut t, &src, &[]).unwrap().is_empty());
        assert_eq!(t, before);
    }

    #[test]
    fn shape_conflict_is_reported() {
        let mut t = small(Arch::Amf);
        let mut src = Checkpoint::new();
        src.insert(
            "backbone.conv1.weight",
            Tensor::zeros(&[2, 1, 3, 3]).unwrap(),
        )
        .unwrap();
        let err = transfer_init(&mut t, &src, &[PrefixMap::new("backbone.", "branch1.")]);
        match err {
            Err(AmfError::Compatibility { names, .. }) => {
                assert_eq!(names, vec!["branch1.conv1.weight".to_string()])
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
