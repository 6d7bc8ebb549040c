//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored and
//! whitespace around keys and values is trimmed. Keys are dotted
//! (`data.*`, `model.*`, `optim.*`, `train.*`, `pretrain.*`, `gradcheck.*`);
//! unknown and duplicate keys are rejected. Each command reads only the
//! keys it needs and reports the first missing or invalid one by name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::OpKind;
use crate::data::MixtureSpec;
use crate::error::{AmfError, Result};
use crate::fsutil;
use crate::gradsuite::SuiteConfig;
use crate::harness::{default_transfer_map, PretrainConfig, TrainConfig};
use crate::nn::{Arch, ModelConfig};
use crate::optim::{group_names, OptimConfig, ScheduleSpec};
use crate::rng::{derive_seed, name_tag};

const FIXED_KEYS: &[&str] = &[
    "data.classes_a",
    "data.classes_b",
    "data.train_per_class",
    "data.val_per_class",
    "data.test_per_class",
    "data.height",
    "data.width",
    "data.channels",
    "data.noise_a",
    "data.noise_b",
    "data.seed",
    "data.source_classes",
    "model.arch",
    "model.branches",
    "model.latent",
    "optim.momentum",
    "optim.layer_scale",
    "train.batch_size",
    "train.epochs",
    "train.init_seed",
    "train.data_seed",
    "pretrain.epochs",
    "pretrain.batch_size",
    "pretrain.lr",
    "pretrain.momentum",
    "pretrain.seed",
    "gradcheck.instances",
    "gradcheck.seed",
    "gradcheck.eps",
    "gradcheck.tol_f64",
    "gradcheck.tol_f32",
    "gradcheck.fault",
];

const SCHEDULE_FIELDS: &[&str] = &["lr", "decay_rate", "decay_epochs"];

/// `optim.<group>.<field>` with a lowercase alphanumeric group name.
fn schedule_key(key: &str) -> Option<(&str, &str)> {
    let rest = key.strip_prefix("optim.")?;
    let (group, field) = rest.split_once('.')?;
    let valid = !group.is_empty()
        && group
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit());
    (valid && SCHEDULE_FIELDS.contains(&field)).then_some((group, field))
}

fn known(key: &str) -> bool {
    FIXED_KEYS.contains(&key) || schedule_key(key).is_some()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl FromStr for Config {
    type Err = AmfError;

    fn from_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                AmfError::config(
                    format!("line {}", n + 1),
                    format!("expected key = value, got {line:?}"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if config.values.contains_key(key) {
                return Err(AmfError::config(key, "duplicate key"));
            }
            config.set(key, value)?;
        }
        Ok(config)
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| AmfError::config(path.display().to_string(), "config is not UTF-8"))?;
        text.parse()
    }

    /// Sets or overrides one key.
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !known(key) {
            return Err(AmfError::config(key, "unknown key"));
        }
        let value = value.to_string();
        if value.is_empty() {
            return Err(AmfError::config(key, "empty value"));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|_| {
                    AmfError::config(key, format!("cannot parse {v:?} as {}", type_label::<T>()))
                })
            })
            .transpose()
    }

    fn req<T: FromStr>(&self, key: &str) -> Result<T> {
        self.opt(key)?
            .ok_or_else(|| AmfError::config(key, "required key is missing"))
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v: f64 = self.req(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(AmfError::config(key, format!("must be > 0, got {v}")));
        }
        Ok(v)
    }

    fn momentum(&self, key: &str) -> Result<f64> {
        let v: f64 = self.req(key)?;
        if !(0.0..1.0).contains(&v) {
            return Err(AmfError::config(
                key,
                format!("must lie in [0, 1), got {v}"),
            ));
        }
        Ok(v)
    }

    fn at_least_one(&self, key: &str) -> Result<usize> {
        let v: usize = self.req(key)?;
        if v < 1 {
            return Err(AmfError::config(key, "must be at least 1"));
        }
        Ok(v)
    }

    pub fn mixture_spec(&self) -> Result<MixtureSpec> {
        let spec = MixtureSpec {
            classes_a: self.req("data.classes_a")?,
            classes_b: self.req("data.classes_b")?,
            train_per_class: self.req("data.train_per_class")?,
            val_per_class: self.req("data.val_per_class")?,
            test_per_class: self.req("data.test_per_class")?,
            height: self.req("data.height")?,
            width: self.req("data.width")?,
            channels: self.req("data.channels")?,
            noise_a: self.req("data.noise_a")?,
            noise_b: self.req("data.noise_b")?,
            seed: self.req("data.seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Seed of the pretraining source task, derived from `data.seed`.
    pub fn source_seed(&self) -> Result<u64> {
        Ok(derive_seed(self.req("data.seed")?, &[name_tag("source")]))
    }

    pub fn source_classes(&self) -> Result<usize> {
        let k = self.req::<usize>("data.source_classes")?;
        if k < 2 {
            return Err(AmfError::config(
                "data.source_classes",
                "must be at least 2",
            ));
        }
        Ok(k)
    }

    /// Architecture, branch count and latent width. The class count and
    /// input geometry are placeholders completed from the dataset.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let arch: Arch = self.req("model.arch")?;
        let branches = if arch == Arch::Single {
            self.opt("model.branches")?.unwrap_or(1)
        } else {
            self.at_least_one("model.branches")?
        };
        let config = ModelConfig::new(arch, branches, self.at_least_one("model.latent")?, 2);
        config.validate()?;
        Ok(config)
    }

    /// One schedule per group the architecture needs; schedules for other
    /// groups are rejected.
    pub fn optim_config(&self, model: &ModelConfig) -> Result<OptimConfig> {
        let groups = group_names(model);
        for key in self.keys() {
            if let Some((group, _)) = schedule_key(key) {
                if !groups.iter().any(|g| g == group) {
                    return Err(AmfError::config(
                        key,
                        format!(
                            "{} has no group {group:?} (groups: {})",
                            model.arch,
                            groups.join(", ")
                        ),
                    ));
                }
            }
        }
        let mut schedules = BTreeMap::new();
        for g in &groups {
            let spec = ScheduleSpec::new(
                self.positive(&format!("optim.{g}.lr"))?,
                self.opt(&format!("optim.{g}.decay_rate"))?.unwrap_or(1.0),
                self.opt(&format!("optim.{g}.decay_epochs"))?.unwrap_or(1),
            );
            spec.validate(g)?;
            schedules.insert(g.clone(), spec);
        }
        let layer_scale = self.opt::<f64>("optim.layer_scale")?;
        if let Some(f) = layer_scale {
            if !(f > 0.0 && f <= 1.0) {
                return Err(AmfError::config(
                    "optim.layer_scale",
                    format!("must lie in (0, 1], got {f}"),
                ));
            }
        }
        Ok(OptimConfig {
            momentum: self.momentum("optim.momentum")?,
            schedules,
            layer_scale,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let model = self.model_config()?;
        let config = TrainConfig {
            optim: self.optim_config(&model)?,
            batch_size: self.at_least_one("train.batch_size")?,
            epochs: self.at_least_one("train.epochs")?,
            init_seed: self.req("train.init_seed")?,
            data_seed: self.req("train.data_seed")?,
            transfer: default_transfer_map(&model),
            model,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            latent: self.at_least_one("model.latent")?,
            epochs: self.at_least_one("pretrain.epochs")?,
            batch_size: self.at_least_one("pretrain.batch_size")?,
            lr: self.positive("pretrain.lr")?,
            momentum: self.momentum("pretrain.momentum")?,
            seed: self.req("pretrain.seed")?,
        })
    }

    /// Gradient-suite settings; every key is optional.
    pub fn suite_config(&self) -> Result<SuiteConfig> {
        let d = SuiteConfig::default();
        let fault = self
            .get("gradcheck.fault")
            .map(|name| {
                OpKind::from_name(name).ok_or_else(|| {
                    AmfError::config(
                        "gradcheck.fault",
                        format!("no differentiable op named {name:?}"),
                    )
                })
            })
            .transpose()?;
        let config = SuiteConfig {
            instances: self.opt("gradcheck.instances")?.unwrap_or(d.instances),
            seed: self.opt("gradcheck.seed")?.unwrap_or(d.seed),
            eps: self.opt("gradcheck.eps")?.unwrap_or(d.eps),
            tol_f64: self.opt("gradcheck.tol_f64")?.unwrap_or(d.tol_f64),
            tol_f32: self.opt("gradcheck.tol_f32")?.unwrap_or(d.tol_f32),
            fault,
        };
        for (key, v) in [
            ("gradcheck.eps", config.eps),
            ("gradcheck.tol_f64", config.tol_f64),
            ("gradcheck.tol_f32", config.tol_f32),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AmfError::config(key, format!("must be > 0, got {v}")));
            }
        }
        if config.instances < 1 {
            return Err(AmfError::config(
                "gradcheck.instances",
                "must be at least 1",
            ));
        }
        Ok(config)
    }
}

fn type_label<T>() -> &'static str {
    let name = std::any::type_name::<T>();
    match name {
        "f64" | "f32" => "a number",
        "usize" | "u64" | "u32" => "a non-negative integer",
        _ => name.rsplit("::").next().unwrap_or(name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRAIN: &str = "
        model.arch = amf
        model.branches = 2
        model.latent = 8   # small
        optim.momentum = 0.9
        optim.layer_scale = 0.4
        optim.branch1.lr = 0.01
        optim.branch2.lr = 0.03
        optim.branch2.decay_rate = 0.9
        optim.branch2.decay_epochs = 20
        optim.classifier.lr = 0.03
        optim.policy.lr = 0.00003
        train.batch_size = 32
        train.epochs = 3
        train.init_seed = 1
        train.data_seed = 2
    ";

    fn key_of(e: AmfError) -> String {
        match e {
            AmfError::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn parses_train_config() {
        let c: Config = TRAIN.parse().unwrap();
        let t = c.train_config().unwrap();
        assert_eq!(t.model.arch, Arch::Amf);
        assert_eq!(t.optim.schedules.len(), 4);
        assert_eq!(t.optim.schedules["branch2"].lr_at_epoch(20), 0.03 * 0.9);
        assert_eq!(t.optim.schedules["branch1"].decay_rate, 1.0);
        assert_eq!(t.optim.layer_scale, Some(0.4));
    }

    #[test]
    fn order_and_whitespace_do_not_matter() {
        let reversed: String = TRAIN
            .lines()
            .rev()
            .map(|l| format!("  {}\t\n", l.trim()))
            .collect();
        assert_eq!(
            TRAIN.parse::<Config>().unwrap(),
            reversed.parse::<Config>().unwrap()
        );
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert_eq!(
            key_of("model.colour = red".parse::<Config>().unwrap_err()),
            "model.colour"
        );
        let dup = "train.epochs = 1\ntrain.epochs = 2";
        assert_eq!(key_of(dup.parse::<Config>().unwrap_err()), "train.epochs");
        assert_eq!(
            key_of("no equals sign".parse::<Config>().unwrap_err()),
            "line 1"
        );
    }

    #[test]
    fn missing_key_is_named() {
        let text = TRAIN.replace("train.init_seed = 1", "");
        let c: Config = text.parse().unwrap();
        assert_eq!(key_of(c.train_config().unwrap_err()), "train.init_seed");
        let c: Config = "data.classes_a = 8".parse().unwrap();
        assert_eq!(key_of(c.mixture_spec().unwrap_err()), "data.classes_b");
    }

    #[test]
    fn ranges_are_validated() {
        for (from, to, key) in [
            (
                "optim.policy.lr = 0.00003",
                "optim.policy.lr = 0",
                "optim.policy.lr",
            ),
            (
                "optim.momentum = 0.9",
                "optim.momentum = 1.0",
                "optim.momentum",
            ),
            (
                "optim.branch2.decay_rate = 0.9",
                "optim.branch2.decay_rate = 1.5",
                "optim.branch2.decay_rate",
            ),
            ("train.epochs = 3", "train.epochs = 0", "train.epochs"),
            (
                "optim.layer_scale = 0.4",
                "optim.layer_scale = 2",
                "optim.layer_scale",
            ),
            (
                "train.batch_size = 32",
                "train.batch_size = many",
                "train.batch_size",
            ),
        ] {
            let c: Config = TRAIN.replace(from, to).parse().unwrap();
            assert_eq!(key_of(c.train_config().unwrap_err()), key, "{to}");
        }
    }

    #[test]
    fn schedule_for_foreign_group_is_rejected() {
        let text = TRAIN.replace("model.arch = amf", "model.arch = multitune");
        let c: Config = text.parse().unwrap();
        assert_eq!(key_of(c.train_config().unwrap_err()), "optim.policy.lr");
    }

    #[test]
    fn suite_defaults_and_fault() {
        let c = Config::default();
        assert_eq!(c.suite_config().unwrap(), SuiteConfig::default());
        let c: Config = "gradcheck.fault = relu".parse().unwrap();
        assert_eq!(c.suite_config().unwrap().fault, Some(OpKind::Relu));
        let c: Config = "gradcheck.fault = tanh".parse().unwrap();
        assert_eq!(key_of(c.suite_config().unwrap_err()), "gradcheck.fault");
    }

    #[test]
    fn text_round_trip() {
        let c: Config = TRAIN.parse().unwrap();
        assert_eq!(c.to_text().parse::<Config>().unwrap(), c);
    }
}
