//! SGD with heavy-ball momentum over named parameter groups, each with its
//! own step-decay schedule and optional per-prefix learning-rate scaling.

use std::collections::{BTreeMap, BTreeSet};

use crate::autodiff::{Real, Tensor};
use crate::error::{AmfError, Result};
use crate::nn::{Arch, ModelConfig, ParamStore};

/// Step decay: `lr(e) = base_lr · decay_rate^⌊e / decay_epochs⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_epochs: usize,
}

impl ScheduleSpec {
    pub fn new(base_lr: f64, decay_rate: f64, decay_epochs: usize) -> Self {
        Self {
            base_lr,
            decay_rate,
            decay_epochs,
        }
    }

    pub fn constant(lr: f64) -> Self {
        Self::new(lr, 1.0, 1)
    }

    /// `base_lr` may be zero, which freezes a group.
    pub fn validate(&self, group: &str) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(AmfError::config(
                format!("optim.{group}.lr"),
                format!(
                    "learning rate must be finite and non-negative, got {}",
                    self.base_lr
                ),
            ));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(AmfError::config(
                format!("optim.{group}.decay_rate"),
                format!("must lie in (0, 1], got {}", self.decay_rate),
            ));
        }
        if self.decay_epochs < 1 {
            return Err(AmfError::config(
                format!("optim.{group}.decay_epochs"),
                "must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.decay_epochs) as i32;
        self.base_lr * self.decay_rate.powi(steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScale {
    pub prefix: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub members: Vec<String>,
    pub schedule: ScheduleSpec,
    pub momentum: f64,
    pub layer_scale: Vec<LayerScale>,
}

impl ParamGroup {
    /// Parameters of this group whose name starts with `prefix` train at
    /// `factor ×` the group learning rate.
    pub fn apply_layer_scale(&mut self, prefix: &str, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(AmfError::usage(format!(
                "layer scale factor must lie in (0, 1], got {factor}"
            )));
        }
        if !self.members.iter().any(|m| m.starts_with(prefix)) {
            return Err(AmfError::usage(format!(
                "prefix {prefix:?} matches no parameter of group {}",
                self.name
            )));
        }
        self.layer_scale.retain(|s| s.prefix != prefix);
        self.layer_scale.push(LayerScale {
            prefix: prefix.to_string(),
            factor,
        });
        Ok(())
    }

    pub fn scale_for(&self, param: &str) -> f64 {
        self.layer_scale
            .iter()
            .filter(|s| param.starts_with(&s.prefix))
            .map(|s| s.factor)
            .fold(1.0, f64::min)
    }

    pub fn effective_lr(&self, param: &str, epoch: usize) -> f64 {
        self.schedule.lr_at_epoch(epoch) * self.scale_for(param)
    }
}

/// Optimizer settings keyed by group name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub momentum: f64,
    pub schedules: BTreeMap<String, ScheduleSpec>,
    /// Factor for each branch's first conv block (AMF and MultiTune).
    pub layer_scale: Option<f64>,
}

/// Group names an architecture needs, in report order.
pub fn group_names(config: &ModelConfig) -> Vec<String> {
    let mut v = Vec::new();
    match config.arch {
        Arch::Single => {
            v.extend(["shallow", "deep"].map(String::from));
        }
        Arch::MultiTune | Arch::Amf => {
            v.extend((1..=config.branch_count()).map(|i| format!("branch{i}")));
        }
    }
    v.push("classifier".into());
    if config.arch == Arch::Amf {
        v.push("policy".into());
    }
    v
}

fn owning_group(arch: Arch, param: &str) -> Option<String> {
    if param.starts_with("classifier.") {
        return Some("classifier".into());
    }
    if arch == Arch::Amf && param.starts_with("policy.") {
        return Some("policy".into());
    }
    let (branch, rest) = param.split_once('.')?;
    branch.strip_prefix("branch")?.parse::<usize>().ok()?;
    match arch {
        Arch::Single if branch == "branch1" => Some(
            if rest.starts_with("conv1.") {
                "shallow"
            } else {
                "deep"
            }
            .into(),
        ),
        Arch::Single => None,
        _ => Some(branch.to_string()),
    }
}

/// Partitions the model's parameters into learning-rate groups: four for a
/// two-branch AMF (`branch1`, `branch2`, `classifier`, `policy`), three for
/// MultiTune, and `shallow`/`deep`/`classifier` for a single fine-tune.
pub fn build_groups<T: Real>(
    config: &ModelConfig,
    params: &ParamStore<T>,
    optim: &OptimConfig,
) -> Result<Vec<ParamGroup>> {
    if !(0.0..1.0).contains(&optim.momentum) {
        return Err(AmfError::config(
            "optim.momentum",
            format!("must lie in [0, 1), got {}", optim.momentum),
        ));
    }
    let names = group_names(config);
    for name in &names {
        let s = optim.schedules.get(name).ok_or_else(|| {
            AmfError::config(
                format!("optim.{name}.lr"),
                format!(
                    "missing schedule for group {name} of a {} model",
                    config.arch
                ),
            )
        })?;
        s.validate(name)?;
    }
    if let Some(extra) = optim.schedules.keys().find(|k| !names.contains(k)) {
        return Err(AmfError::config(
            format!("optim.{extra}.lr"),
            format!("group {extra} does not exist for a {} model", config.arch),
        ));
    }

    let mut groups: Vec<ParamGroup> = names
        .iter()
        .map(|n| ParamGroup {
            name: n.clone(),
            members: Vec::new(),
            schedule: optim.schedules[n],
            momentum: optim.momentum,
            layer_scale: Vec::new(),
        })
        .collect();
    for name in params.names() {
        if let Some(g) = owning_group(config.arch, name) {
            if let Some(group) = groups.iter_mut().find(|x| x.name == g) {
                group.members.push(name.to_string());
            }
        }
    }
    if let Some(factor) = optim.layer_scale {
        if config.arch != Arch::Single {
            for (i, group) in groups
                .iter_mut()
                .filter(|g| g.name.starts_with("branch"))
                .enumerate()
            {
                group.apply_layer_scale(&format!("branch{}.conv1.", i + 1), factor)?;
            }
        }
    }
    verify_cover(&groups, params)?;
    Ok(groups)
}

/// Every parameter must belong to exactly one group.
pub fn verify_cover<T: Real>(groups: &[ParamGroup], params: &ParamStore<T>) -> Result<()> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for g in groups {
        for m in &g.members {
            *seen.entry(m.as_str()).or_default() += 1;
        }
    }
    let all: BTreeSet<&str> = params.names().collect();
    let uncovered: Vec<_> = all.iter().filter(|n| !seen.contains_key(*n)).collect();
    let doubled: Vec<_> = seen
        .iter()
        .filter(|(_, &c)| c > 1)
        .map(|(n, _)| n)
        .collect();
    let unknown: Vec<_> = seen.keys().filter(|n| !all.contains(*n)).collect();
    if uncovered.is_empty() && doubled.is_empty() && unknown.is_empty() {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !uncovered.is_empty() {
        parts.push(format!("uncovered {uncovered:?}"));
    }
    if !doubled.is_empty() {
        parts.push(format!("in several groups {doubled:?}"));
    }
    if !unknown.is_empty() {
        parts.push(format!("not model parameters {unknown:?}"));
    }
    Err(AmfError::config("optim", parts.join("; ")))
}

/// Momentum buffers and the epoch used for schedule lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    velocities: ParamStore<T>,
    pub epoch: usize,
}

impl<T: Real> OptimizerState<T> {
    /// Zero velocities shaped like `params`.
    pub fn new(params: &ParamStore<T>) -> Self {
        let mut velocities = ParamStore::new();
        for (name, t) in params.iter() {
            velocities
                .insert(
                    name,
                    Tensor::zeros(t.shape()).expect("parameter shapes are valid"),
                )
                .expect("unique names");
        }
        Self {
            velocities,
            epoch: 0,
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor<T>> {
        self.velocities.get(name)
    }
}

/// One SGD step: per parameter `v ← μ·v + g; p ← p − η·v`, where `η` is the
/// group learning rate at the current epoch times any layer scale.
/// No weight decay.
pub fn sgd_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut OptimizerState<T>,
    groups: &[ParamGroup],
) -> Result<()> {
    for g in groups {
        for name in &g.members {
            if grads.get(name).is_none() {
                return Err(AmfError::usage(format!("missing gradient for {name}")));
            }
            if params.get(name).is_none() {
                return Err(AmfError::usage(format!("no parameter named {name}")));
            }
        }
    }
    for g in groups {
        let mu = g.momentum;
        for name in &g.members {
            let lr = g.effective_lr(name, state.epoch);
            let grad = grads.get(name).expect("checked");
            let v = state
                .velocities
                .get_mut(name)
                .ok_or_else(|| AmfError::usage(format!("no velocity for {name}")))?;
            let p = params.get_mut(name).expect("checked");
            if grad.shape() != p.shape() {
                return Err(AmfError::shape(format!(
                    "gradient {:?} for {name} {:?}",
                    grad.shape(),
                    p.shape()
                )));
            }
            for ((pv, vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(grad.data())
            {
                let nv = T::from_f64(mu * vv.to_f64() + gv.to_f64());
                *vv = nv;
                *pv = T::from_f64(pv.to_f64() - lr * nv.to_f64());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Model;

    fn one(name: &str, v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::from_f64s(&[1], &[v]).unwrap())
            .unwrap();
        s
    }

    fn group(name: &str, lr: f64, mu: f64) -> ParamGroup {
        ParamGroup {
            name: "g".into(),
            members: vec![name.into()],
            schedule: ScheduleSpec::constant(lr),
            momentum: mu,
            layer_scale: vec![],
        }
    }

    #[test]
    fn schedule_examples() {
        let s = ScheduleSpec::new(0.03, 0.9, 20);
        for e in 0..20 {
            assert_eq!(s.lr_at_epoch(e), 0.03);
        }
        assert!((s.lr_at_epoch(20) - 0.027).abs() < 1e-15);
        let c = ScheduleSpec::new(0.01, 1.0, 3);
        assert!((0..100).all(|e| c.lr_at_epoch(e) == 0.01));
        let p = ScheduleSpec::new(0.008, 0.9, 11);
        assert!((p.lr_at_epoch(22) - 0.00648).abs() < 1e-15);
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = one("w", 1.0);
        let g = one("w", 0.5);
        let mut st = OptimizerState::new(&p);
        sgd_step(&mut p, &g, &mut st, &[group("w", 0.1, 0.0)]).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.95);
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = one("w", 0.0);
        let g = one("w", 1.0);
        let mut st = OptimizerState::new(&p);
        let groups = [group("w", 1.0, 0.9)];
        sgd_step(&mut p, &g, &mut st, &groups).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], -1.0);
        sgd_step(&mut p, &g, &mut st, &groups).unwrap();
        assert!((p.get("w").unwrap().data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn decayed_lr_used_at_epoch_20() {
        let mut p = one("w", 0.0);
        let g = one("w", 1.0);
        let mut st = OptimizerState::new(&p);
        st.epoch = 20;
        let mut gr = group("w", 0.0, 0.0);
        gr.schedule = ScheduleSpec::new(0.03, 0.9, 20);
        sgd_step(&mut p, &g, &mut st, &[gr]).unwrap();
        assert!((p.get("w").unwrap().data()[0] + 0.027).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut p = one("w", 0.0);
        let g = one("other", 1.0);
        let mut st = OptimizerState::new(&p);
        let err = sgd_step(&mut p, &g, &mut st, &[group("w", 1.0, 0.0)]).unwrap_err();
        assert!(err.to_string().contains("w"));
    }

    #[test]
    fn layer_scale_rules() {
        let mut gr = group("branch1.conv1.weight", 1.0, 0.0);
        assert!(gr.apply_layer_scale("nope.", 0.4).is_err());
        assert!(gr.apply_layer_scale("branch1.conv1.", 0.0).is_err());
        assert!(gr.apply_layer_scale("branch1.conv1.", 1.5).is_err());
        gr.apply_layer_scale("branch1.conv1.", 0.4).unwrap();
        assert_eq!(gr.effective_lr("branch1.conv1.weight", 0), 0.4);
        assert_eq!(gr.effective_lr("branch1.conv2.weight", 0), 1.0);
    }

    fn optim(names: &[&str]) -> OptimConfig {
        OptimConfig {
            momentum: 0.9,
            schedules: names
                .iter()
                .map(|n| (n.to_string(), ScheduleSpec::new(0.01, 0.9, 20)))
                .collect(),
            layer_scale: Some(0.4),
        }
    }

    #[test]
    fn amf_gets_four_groups_covering_everything() {
        let cfg = ModelConfig::new(Arch::Amf, 2, 4, 3).with_input(1, 8, 8);
        let m = Model::<f32>::init(cfg, 1).unwrap();
        let groups = build_groups(
            &cfg,
            &m.params,
            &optim(&["branch1", "branch2", "classifier", "policy"]),
        )
        .unwrap();
        let names: Vec<_> = groups.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, ["branch1", "branch2", "classifier", "policy"]);
        let union: BTreeSet<_> = groups
            .iter()
            .flat_map(|g| g.members.iter().map(String::as_str))
            .collect();
        let all: BTreeSet<_> = m.params.names().collect();
        assert_eq!(union, all);
        assert_eq!(groups[1].effective_lr("branch2.conv1.bias", 0), 0.01 * 0.4);
    }

    #[test]
    fn single_gets_three_lr_structure() {
        let cfg = ModelConfig::new(Arch::Single, 1, 4, 3).with_input(1, 8, 8);
        let m = Model::<f32>::init(cfg, 1).unwrap();
        let groups =
            build_groups(&cfg, &m.params, &optim(&["shallow", "deep", "classifier"])).unwrap();
        assert_eq!(
            groups[0].members,
            ["branch1.conv1.weight", "branch1.conv1.bias"]
        );
        assert_eq!(groups.len(), 3);
    }

    #[test]
    fn schedule_set_must_match_arch() {
        let cfg = ModelConfig::new(Arch::MultiTune, 2, 4, 3).with_input(1, 8, 8);
        let m = Model::<f32>::init(cfg, 1).unwrap();
        let missing = build_groups(&cfg, &m.params, &optim(&["branch1", "classifier"]));
        assert!(matches!(missing, Err(AmfError::Config { .. })));
        let extra = build_groups(
            &cfg,
            &m.params,
            &optim(&["branch1", "branch2", "classifier", "policy"]),
        );
        assert!(matches!(extra, Err(AmfError::Config { .. })));
    }

    #[test]
    fn cover_violations_reported() {
        let cfg = ModelConfig::new(Arch::Single, 1, 4, 3).with_input(1, 8, 8);
        let m = Model::<f32>::init(cfg, 1).unwrap();
        let mut groups =
            build_groups(&cfg, &m.params, &optim(&["shallow", "deep", "classifier"])).unwrap();
        groups[2].members.push("branch1.conv1.bias".into());
        let dropped = groups[1].members.pop().unwrap();
        let err = verify_cover(&groups, &m.params).unwrap_err().to_string();
        assert!(err.contains(&dropped), "{err}");
        assert!(err.contains("branch1.conv1.bias"), "{err}");
    }
}
