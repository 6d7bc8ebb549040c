//! On-disk formats: datasets, checkpoints and IDX files.

use std::io::Write;

use amf::autodiff::{Fill, Tensor};
use amf::data::{gen_mixture, load_idx, store, IdxModes, MixtureSpec};
use amf::harness::{evaluate, schedules, train, TrainConfig};
use amf::nn::{checkpoint, Arch, Checkpoint, Model, ModelConfig};
use amf::optim::OptimConfig;
use amf::AmfError;
use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;

fn is_format(e: &AmfError) -> bool {
    matches!(e, AmfError::Format(_))
}

fn tiny_spec(seed: u64) -> MixtureSpec {
    MixtureSpec {
        classes_a: 2,
        classes_b: 3,
        train_per_class: 2,
        val_per_class: 1,
        test_per_class: 1,
        height: 8,
        width: 8,
        seed,
        ..MixtureSpec::default()
    }
}

fn random_checkpoint(seed: u64, count: usize) -> Checkpoint {
    let mut c = Checkpoint::new();
    for i in 0..count {
        let rank = 1 + (seed as usize + i) % 4;
        let shape: Vec<usize> = (0..rank)
            .map(|r| 1 + (seed as usize + 3 * i + r) % 4)
            .collect();
        let t = Tensor::create(
            &shape,
            Fill::Gaussian {
                mean: 0.0,
                std: 1.0,
                seed: seed + i as u64,
            },
        )
        .unwrap();
        c.insert(format!("layer{i}.weight"), t).unwrap();
    }
    c
}

fn idx_images(n: usize, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::new();
    for v in [0x0803u32, n as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend((0..n * rows * cols).map(|i| (i * 37 % 256) as u8));
    let mut labels = Vec::new();
    for v in [0x0801u32, n as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend((0..n).map(|i| (i % 10) as u8));
    (images, labels)
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::default());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_round_trip_is_bit_exact(seed in any::<u64>()) {
        let ds = gen_mixture(&tiny_spec(seed)).unwrap();
        let bytes = store::encode(&ds);
        prop_assert_eq!(bytes.len(), store::encoded_len(&ds));
        let back = store::decode(&bytes).unwrap();
        prop_assert_eq!(store::encode(&back), bytes);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn dataset_truncation_and_trailing_bytes_rejected(seed in 0u64..50, cut in 1usize..2000) {
        let bytes = store::encode(&gen_mixture(&tiny_spec(seed)).unwrap());
        let cut = cut.min(bytes.len());
        prop_assert!(is_format(&store::decode(&bytes[..bytes.len() - cut]).unwrap_err()));
        let mut longer = bytes.clone();
        longer.push(0);
        prop_assert!(is_format(&store::decode(&longer).unwrap_err()));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), count in 0usize..6) {
        let c = random_checkpoint(seed, count);
        let bytes = checkpoint::encode(&c).unwrap();
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(checkpoint::encode(&back).unwrap(), bytes);
        for ((n1, t1), (n2, t2)) in c.iter().zip(back.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(t1), bits(t2));
        }
    }

    #[test]
    fn checkpoint_truncation_rejected(seed in 0u64..50, cut in 1usize..200) {
        let bytes = checkpoint::encode(&random_checkpoint(seed, 3)).unwrap();
        let cut = cut.min(bytes.len());
        prop_assert!(is_format(&checkpoint::decode(&bytes[..bytes.len() - cut]).unwrap_err()));
    }
}

#[test]
fn corrupted_headers_rejected() {
    let ds = store::encode(&gen_mixture(&tiny_spec(1)).unwrap());
    for at in 0..8 {
        let mut bad = ds.clone();
        bad[at] ^= 0x20;
        assert!(
            is_format(&store::decode(&bad).unwrap_err()),
            "dataset magic byte {at}"
        );
    }
    let ck = checkpoint::encode(&random_checkpoint(1, 2)).unwrap();
    for at in 0..8 {
        let mut bad = ck.clone();
        bad[at] ^= 0x20;
        assert!(
            is_format(&checkpoint::decode(&bad).unwrap_err()),
            "checkpoint magic byte {at}"
        );
    }
    // Tensor count in the checkpoint header.
    let mut bad = ck.clone();
    bad[8] += 1;
    assert!(is_format(&checkpoint::decode(&bad).unwrap_err()));
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_mixture(&tiny_spec(2)).unwrap();
    let path = dir.path().join("d.amfd");
    store::save(&ds, &path).unwrap();
    assert_eq!(store::load(&path).unwrap(), ds);
    let c = random_checkpoint(2, 4);
    let cpath = dir.path().join("c.ckpt");
    checkpoint::save(&c, &cpath).unwrap();
    assert_eq!(checkpoint::load(&cpath).unwrap(), c);
    let missing = store::load(&dir.path().join("absent.amfd")).unwrap_err();
    assert_eq!(missing.exit_code(), 3);
}

#[test]
fn idx_plain_and_gzip_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_images(12, 28, 28);
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("img"), &images).unwrap();
    std::fs::write(p("lbl"), &labels).unwrap();
    std::fs::write(p("img.gz"), gz(&images)).unwrap();
    std::fs::write(p("lbl.gz"), gz(&labels)).unwrap();
    let plain = load_idx(&p("img"), &p("lbl"), None, IdxModes::LabelParity).unwrap();
    let zipped = load_idx(&p("img.gz"), &p("lbl.gz"), None, IdxModes::LabelParity).unwrap();
    assert_eq!(plain, zipped);
    assert_eq!(plain.len(), 12);
    assert_eq!(plain[3].image.shape(), &[1, 28, 28]);
    assert_eq!(plain[3].label, 3);
    assert_eq!(plain[3].mode, 1);
    assert_eq!(plain[0].image.data()[1], 37.0 / 255.0);
    let limited = load_idx(&p("img"), &p("lbl"), Some(5), IdxModes::Single).unwrap();
    assert_eq!(limited.len(), 5);
    assert!(limited.iter().all(|e| e.mode == 0));

    std::fs::write(p("short"), &labels[..labels.len() - 1]).unwrap();
    assert!(is_format(
        &load_idx(&p("img"), &p("short"), None, IdxModes::Single).unwrap_err()
    ));
    std::fs::write(p("bad.gz"), b"not gzip").unwrap();
    assert!(is_format(
        &load_idx(&p("bad.gz"), &p("lbl"), None, IdxModes::Single).unwrap_err()
    ));
}

#[test]
fn idx_examples_train_a_28x28_model() {
    let (images, labels) = idx_images(40, 28, 28);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i"), &images).unwrap();
    std::fs::write(dir.path().join("l"), &labels).unwrap();
    let examples = load_idx(
        &dir.path().join("i"),
        &dir.path().join("l"),
        None,
        IdxModes::Single,
    )
    .unwrap();
    let spec = MixtureSpec {
        classes_a: 10,
        classes_b: 0,
        height: 28,
        width: 28,
        ..MixtureSpec::default()
    };
    let data = amf::data::MixtureDataset {
        spec,
        train: examples.clone(),
        val: examples.clone(),
        test: examples,
    };
    let model = ModelConfig::new(Arch::Single, 1, 16, 10);
    let cfg = TrainConfig {
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
        batch_size: 8,
        epochs: 1,
        init_seed: 0,
        data_seed: 0,
        transfer: Vec::new(),
    };
    let out = train(&cfg, &data, None).unwrap();
    let fresh = Model::<f32>::init(cfg.model_for(&data), 0).unwrap();
    assert_ne!(out.model.params, fresh.params);
    assert_eq!(evaluate(&out.model, &data.test).unwrap().count, 40);
}
