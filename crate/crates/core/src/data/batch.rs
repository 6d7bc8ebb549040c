use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::error::{AmfError, Result};
use crate::rng;

use super::synth::Example;

/// A stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[N, C, H, W]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub modes: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Stacks examples in the given order.
pub fn stack<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Result<Batch> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut modes = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for ex in examples {
        match &shape {
            None => shape = Some(ex.image.shape().to_vec()),
            Some(s) if s.as_slice() != ex.image.shape() => {
                return Err(AmfError::shape(format!(
                    "cannot stack images {s:?} and {:?}",
                    ex.image.shape()
                )))
            }
            Some(_) => {}
        }
        data.extend_from_slice(ex.image.data());
        labels.push(ex.label);
        modes.push(ex.mode);
    }
    let shape = shape.ok_or_else(|| AmfError::usage("cannot batch an empty split"))?;
    let mut full = vec![labels.len()];
    full.extend(shape);
    Ok(Batch {
        images: Tensor::from_vec(&full, data)?,
        labels,
        modes,
    })
}

/// Shuffled minibatches for one epoch. The permutation is drawn from a
/// stream keyed by `(seed, epoch)`; the last batch may be short.
pub fn batches(
    split: &[Example],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(AmfError::usage("batch size must be at least 1"));
    }
    if split.is_empty() {
        return Err(AmfError::usage("cannot batch an empty split"));
    }
    let mut order: Vec<usize> = (0..split.len()).collect();
    order.shuffle(&mut rng::derived(seed, &[0xBA7C, epoch as u64]));
    order
        .chunks(batch_size)
        .map(|idx| stack(idx.iter().map(|&i| &split[i])))
        .collect()
}

/// In-order minibatches (evaluation).
pub fn sequential(split: &[Example], batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(AmfError::usage("batch size must be at least 1"));
    }
    if split.is_empty() {
        return Err(AmfError::usage("cannot batch an empty split"));
    }
    split.chunks(batch_size).map(stack).collect()
}
