//! Synthetic two-mode datasets, dataset files, batching and IDX input.

mod batch;
pub mod idx;
pub mod store;
mod synth;

pub use batch::{batches, sequential, stack, Batch};
pub use idx::{load_idx, IdxModes};
pub use synth::{
    gen_mixture, gen_source_task, render_bar, render_grating, Example, MixtureDataset, MixtureSpec,
    Split, SOURCE_FIRST_PERIOD,
};
