//! Pretrain → transfer → fine-tune workflows.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId};
use crate::data::{batches, sequential, Batch, Example, MixtureDataset};
use crate::error::{AmfError, Result};
use crate::nn::{
    transfer_init, Arch, Bound, Checkpoint, Model, ModelConfig, ParamStore, PolicyNetwork,
    PrefixMap,
};
use crate::optim::{build_groups, sgd_step, OptimConfig, OptimizerState, ParamGroup, ScheduleSpec};
use crate::rng;

use super::eval::{argmax, evaluate, mode_count};
use super::monitor::{MonitorRecord, MonitorTrace};

/// Prefix used for the pretrained extractor in backbone checkpoints.
pub const BACKBONE_PREFIX: &str = "backbone.";
/// Prefix of the transferable policy feature block.
pub const POLICY_CONV_PREFIX: &str = "policy.conv.";

/// Consecutive epochs of a saturated, non-discriminating policy before a
/// dead-policy warning is recorded.
pub const DEAD_POLICY_EPOCHS: usize = 20;
pub const DEAD_POLICY_SATURATION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Architecture, n and d. Class count and input geometry are taken
    /// from the dataset.
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_seed: u64,
    pub data_seed: u64,
    /// Pretrained-name → model-name renames applied before training.
    pub transfer: Vec<PrefixMap>,
}

/// Maps the single pretrained extractor onto every branch and the
/// pretrained policy conv block onto the policy network.
pub fn default_transfer_map(config: &ModelConfig) -> Vec<PrefixMap> {
    let mut map: Vec<PrefixMap> = (1..=config.branch_count())
        .map(|i| PrefixMap::new(BACKBONE_PREFIX, format!("branch{i}.")))
        .collect();
    if config.arch == Arch::Amf {
        map.push(PrefixMap::new(POLICY_CONV_PREFIX, POLICY_CONV_PREFIX));
    }
    map
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(AmfError::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(AmfError::config("train.batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// The model configuration completed with the dataset's geometry.
    pub fn model_for(&self, data: &MixtureDataset) -> ModelConfig {
        let s = &data.spec;
        ModelConfig {
            classes: s.classes(),
            ..self.model
        }
        .with_input(s.channels, s.height, s.width)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub model: Model<f32>,
    pub trace: MonitorTrace,
    /// Parameters at the best validation top-1 (earliest on ties).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_top1: f64,
}

/// Something with parameters that maps an image batch to class logits.
pub trait Classifier {
    fn params(&self) -> &ParamStore<f32>;
    fn params_mut(&mut self) -> &mut ParamStore<f32>;
    fn logits(&self, g: &mut Graph<f32>, p: &Bound, x: NodeId) -> Result<NodeId>;
}

impl Classifier for Model<f32> {
    fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }
    fn logits(&self, g: &mut Graph<f32>, p: &Bound, x: NodeId) -> Result<NodeId> {
        Ok(self.forward(g, p, x)?.logits)
    }
}

/// A policy-shaped network trained directly as a classifier (pretraining).
#[derive(Debug, Clone)]
pub struct PolicyClassifier {
    pub net: PolicyNetwork,
    pub params: ParamStore<f32>,
}

impl Classifier for PolicyClassifier {
    fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }
    fn logits(&self, g: &mut Graph<f32>, p: &Bound, x: NodeId) -> Result<NodeId> {
        self.net.logits(g, p, x)
    }
}

/// One optimizer step on `batch`; returns the batch loss.
pub fn train_step<M: Classifier>(
    model: &mut M,
    batch: &Batch,
    state: &mut OptimizerState<f32>,
    groups: &[ParamGroup],
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let x = g.input(batch.images.clone());
    let logits = model.logits(&mut g, &bound, x)?;
    let loss = g.cross_entropy(logits, &batch.labels)?;
    let value = f64::from(g.value(loss).data()[0]);
    if !value.is_finite() {
        return Err(AmfError::NonFinite { epoch: state.epoch });
    }
    g.backward(loss)?;
    let grads = bound.grads(&g, model.params());
    sgd_step(model.params_mut(), &grads, state, groups)?;
    Ok(value)
}

/// One pass over `train` in a seeded order; returns the sample-weighted
/// mean loss.
pub fn train_epoch<M: Classifier>(
    model: &mut M,
    train: &[Example],
    batch_size: usize,
    data_seed: u64,
    state: &mut OptimizerState<f32>,
    groups: &[ParamGroup],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches(train, batch_size, data_seed, state.epoch)? {
        total += train_step(model, &batch, state, groups)? * batch.len() as f64;
        count += batch.len();
    }
    Ok(total / count as f64)
}

/// Top-1 of any [`Classifier`] on `examples`.
pub fn accuracy<M: Classifier>(model: &M, examples: &[Example]) -> Result<f64> {
    let mut correct = 0usize;
    for batch in sequential(examples, 128)? {
        let mut g = Graph::new();
        let bound = model.params().bind_frozen(&mut g);
        let x = g.input(batch.images.clone());
        let logits = model.logits(&mut g, &bound, x)?;
        let v = g.value(logits);
        correct += batch
            .labels
            .iter()
            .enumerate()
            .filter(|(s, &l)| argmax(v.row(*s)) == l)
            .count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Fine-tunes `config.model` on `data`, starting from `pretrained` when
/// given. After every epoch the model is evaluated on the validation split
/// and a monitor record appended; the best-validation parameters are kept.
pub fn train(
    config: &TrainConfig,
    data: &MixtureDataset,
    pretrained: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let model_cfg = config.model_for(data);
    let mut model = Model::<f32>::init(model_cfg, config.init_seed)?;
    if let Some(ckpt) = pretrained {
        transfer_init(&mut model, ckpt, &config.transfer)?;
    }
    let groups = build_groups(&model_cfg, &model.params, &config.optim)?;
    let mut state = OptimizerState::new(&model.params);

    let mut trace = MonitorTrace::default();
    let mut best = model.params.clone();
    let mut best_score: Option<(usize, f64)> = None;
    let mut dead_streak = 0usize;
    let val_modes = mode_count(&data.val).max(1);

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let train_loss = train_epoch(
            &mut model,
            &data.train,
            config.batch_size,
            config.data_seed,
            &mut state,
            &groups,
        )?;
        let report = evaluate(&model, &data.val)?;
        let record = MonitorRecord {
            epoch,
            train_loss,
            val_top1: report.top1_overall,
            val_top1_per_mode: (0..val_modes)
                .map(|m| report.top1_for_mode(m as u8))
                .collect(),
            mean_h: report.mean_weights.clone(),
            assign_per_mode: report.assignment.as_ref().map(|a| a.per_mode.clone()),
            assign_overall: report.assignment.as_ref().map(|a| a.overall),
        };

        if let (Some(h), Some(assign)) = (&record.mean_h, record.assign_overall) {
            let majority = report
                .top1_per_mode
                .iter()
                .map(|m| m.count)
                .max()
                .unwrap_or(0) as f64
                / report.count as f64;
            let saturated = h.iter().any(|&v| v > DEAD_POLICY_SATURATION);
            if saturated && assign <= majority + 0.05 {
                dead_streak += 1;
                if dead_streak == DEAD_POLICY_EPOCHS {
                    let msg = format!(
                        "dead policy network: one branch has held mean weight > {DEAD_POLICY_SATURATION} \
                         for {DEAD_POLICY_EPOCHS} epochs with chance-level assignment"
                    );
                    trace.warnings.push((epoch, msg));
                }
            } else {
                dead_streak = 0;
            }
        }

        if best_score.is_none_or(|(_, b)| record.val_top1 > b) {
            best_score = Some((epoch, record.val_top1));
            best = model.params.clone();
        }
        trace.records.push(record);
    }

    let (best_epoch, best_val_top1) = best_score.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        trace,
        best,
        best_epoch,
        best_val_top1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            latent: 64,
            epochs: 30,
            batch_size: 32,
            lr: 0.03,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// `backbone.*` extractor and `policy.conv.*` weights; no heads.
    pub checkpoint: Checkpoint,
    pub backbone_val_top1: f64,
    pub policy_val_top1: f64,
}

fn uniform_groups(params: &ParamStore<f32>, lr: f64, momentum: f64) -> Vec<ParamGroup> {
    vec![ParamGroup {
        name: "all".into(),
        members: params.names().map(String::from).collect(),
        schedule: ScheduleSpec::constant(lr),
        momentum,
        layer_scale: vec![],
    }]
}

/// Trains one extractor + classifier and one policy-shaped classifier on
/// the source task, then exports both feature blocks without their heads.
pub fn pretrain(config: &PretrainConfig, source: &MixtureDataset) -> Result<PretrainOutcome> {
    if config.epochs < 1 || config.batch_size < 1 {
        return Err(AmfError::config(
            "pretrain.epochs",
            "epochs and batch size must be positive",
        ));
    }
    let s = &source.spec;
    let backbone_cfg = ModelConfig::new(Arch::Single, 1, config.latent, s.classes())
        .with_input(s.channels, s.height, s.width);
    let mut backbone = Model::<f32>::init(backbone_cfg, rng::derive_seed(config.seed, &[1]))?;
    let net = PolicyNetwork {
        prefix: "policy".into(),
        channels: s.channels,
        outputs: s.classes(),
        height: s.height,
        width: s.width,
    };
    let mut policy = PolicyClassifier {
        params: net.init_params(rng::derive_seed(config.seed, &[2]))?,
        net,
    };

    let data_seed = rng::derive_seed(config.seed, &[3]);
    let bg = uniform_groups(&backbone.params, config.lr, config.momentum);
    let pg = uniform_groups(&policy.params, config.lr, config.momentum);
    let mut bs = OptimizerState::new(&backbone.params);
    let mut ps = OptimizerState::new(&policy.params);
    for epoch in 0..config.epochs {
        bs.epoch = epoch;
        ps.epoch = epoch;
        train_epoch(
            &mut backbone,
            &source.train,
            config.batch_size,
            data_seed,
            &mut bs,
            &bg,
        )?;
        train_epoch(
            &mut policy,
            &source.train,
            config.batch_size,
            data_seed,
            &mut ps,
            &pg,
        )?;
    }

    let mut checkpoint = Checkpoint::new();
    for (name, t) in backbone.params.iter() {
        if let Some(rest) = name.strip_prefix("branch1.") {
            checkpoint.insert(format!("{BACKBONE_PREFIX}{rest}"), t.clone())?;
        }
    }
    for (name, t) in policy.params.iter() {
        if name.starts_with(POLICY_CONV_PREFIX) {
            checkpoint.insert(name, t.clone())?;
        }
    }
    Ok(PretrainOutcome {
        checkpoint,
        backbone_val_top1: accuracy(&backbone, &source.val)?,
        policy_val_top1: accuracy(&policy, &source.val)?,
    })
}

/// One schedule per group name with shared decay settings.
pub fn schedules(
    lrs: &[(&str, f64)],
    decay_rate: f64,
    decay_epochs: usize,
) -> BTreeMap<String, ScheduleSpec> {
    lrs.iter()
        .map(|&(n, lr)| {
            (
                n.to_string(),
                ScheduleSpec::new(lr, decay_rate, decay_epochs),
            )
        })
        .collect()
}
