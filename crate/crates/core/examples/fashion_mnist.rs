//! Loads Fashion-MNIST from IDX files and fine-tunes a small CNN from
//! scratch. Set AMF_FASHION_MNIST_DIR to a directory holding the four
//! standard files (optionally gzipped); without it the example exits.

use std::path::{Path, PathBuf};

use amf::data::{load_idx, IdxModes, MixtureDataset, MixtureSpec};
use amf::harness::{evaluate, schedules, train, TrainConfig};
use amf::nn::{Arch, ModelConfig};
use amf::optim::OptimConfig;
use amf::Result;

fn find(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        plain
    } else {
        dir.join(format!("{stem}.gz"))
    }
}

fn main() -> Result<()> {
    let Some(dir) = std::env::var_os("AMF_FASHION_MNIST_DIR").map(PathBuf::from) else {
        println!("AMF_FASHION_MNIST_DIR is not set; nothing to do");
        return Ok(());
    };
    let mut train_set = load_idx(
        &find(&dir, "train-images-idx3-ubyte"),
        &find(&dir, "train-labels-idx1-ubyte"),
        None,
        IdxModes::Single,
    )?;
    let test = load_idx(
        &find(&dir, "t10k-images-idx3-ubyte"),
        &find(&dir, "t10k-labels-idx1-ubyte"),
        None,
        IdxModes::Single,
    )?;
    let val = train_set.split_off(55_000);
    println!(
        "train {} / val {} / test {}",
        train_set.len(),
        val.len(),
        test.len()
    );

    let spec = MixtureSpec {
        classes_a: 10,
        classes_b: 0,
        height: 28,
        width: 28,
        ..MixtureSpec::default()
    };
    let data = MixtureDataset {
        spec,
        train: train_set,
        val,
        test,
    };
    let model = ModelConfig::new(Arch::Single, 1, 64, 10);
    let config = TrainConfig {
        model,
        optim: OptimConfig {
            momentum: 0.9,
            schedules: schedules(
                &[("shallow", 0.01), ("deep", 0.01), ("classifier", 0.01)],
                1.0,
                1,
            ),
            layer_scale: None,
        },
        batch_size: 64,
        epochs: 5,
        init_seed: 0,
        data_seed: 0,
        transfer: Vec::new(),
    };
    let outcome = train(&config, &data, None)?;
    let mut best = outcome.model.clone();
    best.load_params(&outcome.best)?;
    println!(
        "test top-1 {:.4}",
        evaluate(&best, &data.test)?.top1_overall
    );
    Ok(())
}
