//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = "
data.classes_a = 2
data.classes_b = 2
data.train_per_class = 6
data.val_per_class = 3
data.test_per_class = 3
data.height = 16
data.width = 16
data.channels = 1
data.noise_a = 0.15
data.noise_b = 0.3
data.seed = 4
data.source_classes = 3
model.latent = 8
pretrain.epochs = 2
pretrain.batch_size = 8
pretrain.lr = 0.03
pretrain.momentum = 0.9
pretrain.seed = 1
optim.momentum = 0.9
train.batch_size = 8
train.epochs = 3
train.init_seed = 2
train.data_seed = 3
";

const AMF: &str = "
model.arch = amf
model.branches = 2
optim.layer_scale = 0.4
optim.branch1.lr = 0.01
optim.branch2.lr = 0.03
optim.classifier.lr = 0.03
optim.policy.lr = 0.001
";

const SINGLE: &str = "
model.arch = single
optim.shallow.lr = 0.01
optim.deep.lr = 0.01
optim.classifier.lr = 0.01
";

fn amf(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_amf"));
    cmd.args(args).env_remove("AMF_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.conf", &format!("{BASE}{AMF}"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = amf(&["gen-data", "--config", &cfg, "--out", s(&a)], &[]);
    let ob = amf(&["gen-data", "--config", &cfg, "--out", s(&b)], &[]);
    assert_eq!(oa.status.code(), Some(0), "{}", stderr(&oa));
    assert!(stdout(&oa)
        .contains("mixture: classes 4 (mode 0: 2, mode 1: 2), train 24, val 12, test 12"));
    assert!(stdout(&oa).contains("source: classes 3"));
    assert_eq!(stdout(&oa), stdout(&ob));
    for f in ["mixture.amfd", "source.amfd"] {
        let bytes = std::fs::read(a.join(f)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(f)).unwrap());
        amf::data::store::decode(&bytes).unwrap();
    }
    let c = dir.path().join("c");
    amf(
        &["gen-data", "--config", &cfg, "--out", s(&c), "--seed", "99"],
        &[],
    );
    assert_ne!(
        std::fs::read(a.join("mixture.amfd")).unwrap(),
        std::fs::read(c.join("mixture.amfd")).unwrap()
    );
}

#[test]
fn config_errors_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = write(dir.path(), "m.conf", &BASE.replace("data.seed = 4", ""));
    let o = amf(&["gen-data", "--config", &missing, "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.seed"), "{}", stderr(&o));

    let unknown = write(dir.path(), "u.conf", &format!("{BASE}data.colour = 3\n"));
    let o = amf(&["gen-data", "--config", &unknown, "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.colour"));

    let dup = write(dir.path(), "d.conf", &format!("{BASE}data.seed = 5\n"));
    assert_eq!(
        amf(&["gen-data", "--config", &dup, "--out", s(&out)], &[])
            .status
            .code(),
        Some(2)
    );

    let good = write(dir.path(), "g.conf", BASE);
    let o = amf(
        &["gen-data", "--config", &good, "--out", s(&out)],
        &[("AMF_THREADS", "zero")],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("AMF_THREADS"));

    assert_eq!(amf(&["train"], &[]).status.code(), Some(2));
    let o = amf(
        &[
            "eval",
            "--config",
            &good,
            "--data",
            "/nonexistent",
            "--ckpt",
            "/nonexistent",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn pipeline_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let amf_cfg = write(d, "amf.conf", &format!("{BASE}{AMF}"));
    let single_cfg = write(d, "single.conf", &format!("{BASE}{SINGLE}"));
    let data = d.join("data");
    assert_eq!(
        amf(&["gen-data", "--config", &amf_cfg, "--out", s(&data)], &[])
            .status
            .code(),
        Some(0)
    );
    let mixture = data.join("mixture.amfd");

    let o = amf(
        &[
            "pretrain",
            "--config",
            &amf_cfg,
            "--data",
            s(&data.join("source.amfd")),
            "--out",
            s(d),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("pretrain: 2 epochs"));
    let pre = d.join("pretrained.ckpt");

    let run = d.join("amf");
    let o = amf(
        &[
            "train",
            "--config",
            &amf_cfg,
            "--data",
            s(&mixture),
            "--ckpt",
            s(&pre),
            "--out",
            s(&run),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("arch amf, 3 epochs"));
    let csv = std::fs::read_to_string(run.join("monitor.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.split(',').all(|f| !f.is_empty())));

    let best = run.join("best.ckpt");
    let latents = d.join("latents.csv");
    let args = [
        "eval",
        "--config",
        &amf_cfg,
        "--data",
        s(&mixture),
        "--ckpt",
        s(&best),
    ];
    let e1 = amf(&args, &[]);
    assert_eq!(e1.status.code(), Some(0), "{}", stderr(&e1));
    let text = stdout(&e1);
    assert!(text.contains("assignment accuracy"));
    let json = text.lines().last().unwrap();
    assert!(
        json.starts_with("{\"arch\":\"amf\",\"split\":\"test\",\"count\":12,\"top1\":"),
        "{json}"
    );
    for key in [
        "\"loss\"",
        "\"top1_per_mode\"",
        "\"assign_overall\"",
        "\"assign_per_mode\"",
        "\"matching\"",
        "\"mean_h\"",
    ] {
        assert!(json.contains(key), "{key} missing from {json}");
    }
    let mut with_latents = args.to_vec();
    with_latents.extend(["--latents", s(&latents)]);
    let e2 = amf(&with_latents, &[]);
    assert_eq!(stdout(&e2), text);
    let rows = std::fs::read_to_string(&latents).unwrap();
    assert_eq!(rows.lines().count(), 13);
    assert_eq!(rows.lines().next().unwrap().split(',').count(), 2 * 8 + 2);

    // An AMF checkpoint does not fit a single fine-tune.
    let o = amf(
        &[
            "eval",
            "--config",
            &single_cfg,
            "--data",
            s(&mixture),
            "--ckpt",
            s(&best),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let srun = d.join("single");
    let o = amf(
        &[
            "train",
            "--config",
            &single_cfg,
            "--data",
            s(&mixture),
            "--out",
            s(&srun),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(srun.join("monitor.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "epoch,train_loss,val_top1_mode0,val_top1_mode1,mean_h_branch0,mean_h_branch1,assign_acc_mode0,assign_acc_mode1"
    );
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert!(fields[4..].iter().all(|f| f.is_empty()), "{line}");
    }
    let o = amf(
        &[
            "eval",
            "--config",
            &single_cfg,
            "--data",
            s(&mixture),
            "--ckpt",
            s(&srun.join("best.ckpt")),
            "--split",
            "val",
        ],
        &[],
    );
    assert!(stdout(&o)
        .lines()
        .last()
        .unwrap()
        .contains("\"assign_overall\":null"));
}

#[test]
fn train_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "amf.conf", &format!("{BASE}{AMF}"));
    let data = d.join("data");
    amf(&["gen-data", "--config", &cfg, "--out", s(&data)], &[]);
    let mixture = data.join("mixture.amfd");
    let (a, b) = (d.join("a"), d.join("b"));
    amf(
        &[
            "train",
            "--config",
            &cfg,
            "--data",
            s(&mixture),
            "--out",
            s(&a),
        ],
        &[],
    );
    let o = amf(
        &[
            "train",
            "--config",
            &cfg,
            "--data",
            s(&mixture),
            "--out",
            s(&b),
        ],
        &[("AMF_THREADS", "3")],
    );
    assert_eq!(o.status.code(), Some(0));
    for f in ["monitor.csv", "best.ckpt", "final.ckpt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn divergent_training_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = format!("{BASE}{SINGLE}").replace("= 0.01", "= 1e15");
    let cfg = write(d, "c.conf", &text);
    amf(&["gen-data", "--config", &cfg, "--out", s(d)], &[]);
    let o = amf(
        &[
            "train",
            "--config",
            &cfg,
            "--data",
            s(&d.join("mixture.amfd")),
            "--out",
            s(&d.join("r")),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite loss at epoch 0"));
}

#[test]
fn grad_check_lists_every_op_and_fails_on_fault() {
    let ok = amf(&["grad-check", "--instances", "3"], &[]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let text = stdout(&ok);
    let ops = [
        "matmul",
        "add_bias",
        "conv2d",
        "relu",
        "maxpool2",
        "reshape",
        "concat",
        "column",
        "scale_rows",
        "softmax",
        "cross_entropy",
        "mul",
        "sum",
        "amf_loss",
    ];
    for op in ops {
        let n = text
            .lines()
            .filter(|l| l.split_whitespace().next() == Some(op))
            .count();
        assert_eq!(n, 1, "{op} listed {n} times");
    }
    let bad = amf(
        &["grad-check", "--instances", "3", "--fault", "conv2d"],
        &[],
    );
    assert_eq!(bad.status.code(), Some(1));
    let last = stdout(&bad).lines().last().unwrap().to_string();
    assert!(last.starts_with("grad-check: FAILED: conv2d"), "{last}");
}
