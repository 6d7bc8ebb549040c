//! Branch extractors, the policy network, and the three architectures
//! built from them.
//!
//! Parameter names are stable and form the checkpoint/optimizer contract:
//!
//! ```text
//! branch{i}.conv1.{weight,bias}   i = 1..=n
//! branch{i}.conv2.{weight,bias}
//! branch{i}.head.{weight,bias}
//! policy.conv.{weight,bias}       AMF only
//! policy.head.{weight,bias}
//! classifier.{weight,bias}
//! ```
//!
//! Dense weights are stored `[in, out]`; conv weights `[out, in, 3, 3]`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Fill, Graph, NodeId, Real, Tensor};
use crate::error::{AmfError, Result};
use crate::rng;

use super::params::{Bound, ParamStore};

/// Standard deviation of fully connected head initialization.
pub const HEAD_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Per-sample softmax-gated fusion of n branches.
    Amf,
    /// Static concatenation of n branches.
    MultiTune,
    /// One fine-tuned extractor.
    Single,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Amf => "amf",
            Arch::MultiTune => "multitune",
            Arch::Single => "single",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = AmfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amf" => Ok(Arch::Amf),
            "multitune" => Ok(Arch::MultiTune),
            "single" => Ok(Arch::Single),
            other => Err(AmfError::config(
                "model.arch",
                format!("unknown architecture {other:?} (amf|multitune|single)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Branch count n; forced to 1 for [`Arch::Single`].
    pub branches: usize,
    /// Latent width d.
    pub latent: usize,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    pub fn new(arch: Arch, branches: usize, latent: usize, classes: usize) -> Self {
        Self {
            arch,
            branches,
            latent,
            classes,
            channels: 1,
            height: 16,
            width: 16,
        }
    }

    pub fn with_input(mut self, channels: usize, height: usize, width: usize) -> Self {
        self.channels = channels;
        self.height = height;
        self.width = width;
        self
    }

    pub fn branch_count(&self) -> usize {
        match self.arch {
            Arch::Single => 1,
            _ => self.branches,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches < 1 {
            return Err(AmfError::usage("branch count must be at least 1"));
        }
        if self.classes < 2 {
            return Err(AmfError::usage("class count must be at least 2"));
        }
        if self.latent < 1 || self.channels < 1 {
            return Err(AmfError::usage(
                "latent width and channels must be positive",
            ));
        }
        if !self.height.is_multiple_of(4)
            || !self.width.is_multiple_of(4)
            || self.height == 0
            || self.width == 0
        {
            return Err(AmfError::shape(format!(
                "input {}x{} must be a positive multiple of 4",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// N(0, sqrt(2 / fan_in)).
    He(usize),
    Head,
    Zero,
}

fn conv_params(prefix: &str, out: usize, inp: usize) -> [(String, Vec<usize>, Init); 2] {
    [
        (
            format!("{prefix}.weight"),
            vec![out, inp, 3, 3],
            Init::He(inp * 9),
        ),
        (format!("{prefix}.bias"), vec![out], Init::Zero),
    ]
}

fn dense_params(
    prefix: &str,
    inp: usize,
    out: usize,
    init: Init,
) -> [(String, Vec<usize>, Init); 2] {
    [
        (format!("{prefix}.weight"), vec![inp, out], init),
        (format!("{prefix}.bias"), vec![out], Init::Zero),
    ]
}

fn dense<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w = p.id(&format!("{prefix}.weight"))?;
    let b = p.id(&format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn conv_block<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w = p.id(&format!("{prefix}.weight"))?;
    let b = p.id(&format!("{prefix}.bias"))?;
    let y = g.conv2d(x, w, b)?;
    let y = g.relu(y)?;
    g.maxpool2(y)
}

fn check_input<T: Real>(g: &Graph<T>, x: NodeId, channels: usize, divisor: usize) -> Result<()> {
    match g.value(x).shape() {
        &[_, c, h, w] if c == channels && h % divisor == 0 && w % divisor == 0 => Ok(()),
        s => Err(AmfError::shape(format!(
            "input {s:?} needs {channels} channels and spatial dims divisible by {divisor}"
        ))),
    }
}

/// Two conv blocks and a dense ReLU head producing a `[N, d]` latent.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchExtractor {
    pub prefix: String,
    pub channels: usize,
    pub latent: usize,
    pub height: usize,
    pub width: usize,
}

impl BranchExtractor {
    pub const CONV1: usize = 8;
    pub const CONV2: usize = 16;

    fn flat(&self) -> usize {
        Self::CONV2 * (self.height / 4) * (self.width / 4)
    }

    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let p = &self.prefix;
        let mut v = Vec::new();
        v.extend(conv_params(
            &format!("{p}.conv1"),
            Self::CONV1,
            self.channels,
        ));
        v.extend(conv_params(&format!("{p}.conv2"), Self::CONV2, Self::CONV1));
        v.extend(dense_params(
            &format!("{p}.head"),
            self.flat(),
            self.latent,
            Init::He(self.flat()),
        ));
        v
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        check_input(g, x, self.channels, 4)?;
        let p_ = &self.prefix;
        let y = conv_block(g, p, &format!("{p_}.conv1"), x)?;
        let y = conv_block(g, p, &format!("{p_}.conv2"), y)?;
        let y = g.flatten(y)?;
        let y = dense(g, p, &format!("{p_}.head"), y)?;
        g.relu(y)
    }
}

/// One conv block and a dense head producing `outputs` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub prefix: String,
    pub channels: usize,
    pub outputs: usize,
    pub height: usize,
    pub width: usize,
}

impl PolicyNetwork {
    pub const CONV: usize = 4;

    fn flat(&self) -> usize {
        Self::CONV * (self.height / 2) * (self.width / 2)
    }

    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let p = &self.prefix;
        let mut v = Vec::new();
        v.extend(conv_params(&format!("{p}.conv"), Self::CONV, self.channels));
        v.extend(dense_params(
            &format!("{p}.head"),
            self.flat(),
            self.outputs,
            Init::Head,
        ));
        v
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        check_input(g, x, self.channels, 2)?;
        let y = conv_block(g, p, &format!("{}.conv", self.prefix), x)?;
        let y = g.flatten(y)?;
        dense(g, p, &format!("{}.head", self.prefix), y)
    }

    /// Softmax-normalized per-sample branch weights `[N, outputs]`.
    pub fn weights<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        let l = self.logits(g, p, x)?;
        g.softmax(l)
    }

    /// Fresh parameters for a standalone policy-shaped network.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        fill_layout(&mut store, self.layout(), seed)?;
        Ok(store)
    }
}

fn fill_layout<T: Real>(
    store: &mut ParamStore<T>,
    layout: Vec<(String, Vec<usize>, Init)>,
    seed: u64,
) -> Result<()> {
    for (name, shape, init) in layout {
        let fill = match init {
            Init::Zero => Fill::Zeros,
            Init::He(fan_in) => Fill::Gaussian {
                mean: 0.0,
                std: (2.0 / fan_in as f64).sqrt(),
                seed: rng::derive_seed(seed, &[rng::name_tag(&name)]),
            },
            Init::Head => Fill::Gaussian {
                mean: 0.0,
                std: HEAD_INIT_STD,
                seed: rng::derive_seed(seed, &[rng::name_tag(&name)]),
            },
        };
        store.insert(name, Tensor::create(&shape, fill)?)?;
    }
    Ok(())
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: NodeId,
    pub probs: NodeId,
    /// Policy weights h `[N, n]`; AMF only.
    pub weights: Option<NodeId>,
    /// Branch latents m_i `[N, d]`.
    pub latents: Vec<NodeId>,
    /// Classifier input `[N, n·d]`.
    pub fused: NodeId,
}

/// Materialized outputs of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Real = f32> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub weights: Option<Tensor<T>>,
    pub latents: Vec<Tensor<T>>,
    pub fused: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Deterministic initialization: every parameter draws from its own
    /// stream derived from `seed` and its name. Conv and branch head weights
    /// are He-scaled, the classifier uses N(0, 0.1), and the policy head and
    /// all biases start at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        fill_layout(&mut params, Self::layout(&config), seed)?;
        Ok(Self { config, params })
    }

    fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
        let mut v = Vec::new();
        for b in Self::branch_descriptors(config) {
            v.extend(b.layout());
        }
        if let Some(p) = Self::policy_descriptor(config) {
            // A zero head makes every branch weight start at exactly 1/n.
            v.extend(
                p.layout()
                    .into_iter()
                    .map(|(name, shape, init)| match init {
                        Init::Head => (name, shape, Init::Zero),
                        other => (name, shape, other),
                    }),
            );
        }
        v.extend(dense_params(
            "classifier",
            config.branch_count() * config.latent,
            config.classes,
            Init::Head,
        ));
        v
    }

    fn branch_descriptors(config: &ModelConfig) -> Vec<BranchExtractor> {
        (1..=config.branch_count())
            .map(|i| BranchExtractor {
                prefix: format!("branch{i}"),
                channels: config.channels,
                latent: config.latent,
                height: config.height,
                width: config.width,
            })
            .collect()
    }

    fn policy_descriptor(config: &ModelConfig) -> Option<PolicyNetwork> {
        (config.arch == Arch::Amf).then(|| PolicyNetwork {
            prefix: "policy".into(),
            channels: config.channels,
            outputs: config.branches,
            height: config.height,
            width: config.width,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn branches(&self) -> Vec<BranchExtractor> {
        Self::branch_descriptors(&self.config)
    }

    pub fn policy(&self) -> Option<PolicyNetwork> {
        Self::policy_descriptor(&self.config)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Full forward pass on an already-bound graph.
    ///
    /// AMF: `z_i = h[:, i] ⊙ m_i`, fused = concat(z_1..z_n).
    /// MultiTune and single: fused = concat(m_1..m_n) unscaled.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<Forward> {
        let latents = self
            .branches()
            .iter()
            .map(|b| b.forward(g, p, x))
            .collect::<Result<Vec<_>>>()?;
        let (fused, weights) = match self.policy() {
            Some(policy) => {
                let h = policy.weights(g, p, x)?;
                let scaled = latents
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| {
                        let hi = g.column(h, i)?;
                        g.scale_rows(m, hi)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (g.concat(&scaled)?, Some(h))
            }
            None => (g.concat(&latents)?, None),
        };
        let logits = dense(g, p, "classifier", fused)?;
        let probs = g.softmax(logits)?;
        Ok(Forward {
            logits,
            probs,
            weights,
            latents,
            fused,
        })
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let xi = g.input(x.clone());
        let f = self.forward(&mut g, &bound, xi)?;
        Ok(Prediction {
            logits: g.value(f.logits).clone(),
            probs: g.value(f.probs).clone(),
            weights: f.weights.map(|h| g.value(h).clone()),
            latents: f.latents.iter().map(|&m| g.value(m).clone()).collect(),
            fused: g.value(f.fused).clone(),
        })
    }

    /// Replaces every parameter from `store`, which must carry exactly this
    /// model's names and shapes. Nothing is modified on error.
    pub fn load_params(&mut self, store: &ParamStore<T>) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        for (name, t) in self.params.iter() {
            match store.get(name) {
                Some(s) if s.shape() == t.shape() => {}
                _ => bad.push(name.to_string()),
            }
        }
        bad.extend(
            store
                .names()
                .filter(|n| !self.params.contains(n))
                .map(str::to_string),
        );
        if !bad.is_empty() {
            return Err(AmfError::Compatibility {
                reason: format!("checkpoint does not match a {} model", self.config.arch),
                names: bad,
            });
        }
        for (name, t) in self.params.iter_mut() {
            *t = store.get(name).expect("checked above").clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(arch: Arch, n: usize) -> ModelConfig {
        ModelConfig::new(arch, n, 8, 3).with_input(1, 8, 8)
    }

    #[test]
    fn policy_is_smaller_than_a_branch() {
        let m = Model::<f32>::init(ModelConfig::new(Arch::Amf, 2, 64, 16), 1).unwrap();
        let count = |prefix: &str| {
            m.params
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(_, t)| t.len())
                .sum::<usize>()
        };
        assert!(count("policy.") < count("branch1."));
    }

    #[test]
    fn layout_names() {
        let m = Model::<f32>::init(cfg(Arch::Amf, 2), 1).unwrap();
        let names: Vec<_> = m.params.names().collect();
        assert_eq!(names[0], "branch1.conv1.weight");
        assert!(names.contains(&"branch2.head.bias"));
        assert!(names.contains(&"policy.head.weight"));
        assert_eq!(*names.last().unwrap(), "classifier.bias");
        assert_eq!(
            m.params.require("classifier.weight").unwrap().shape(),
            &[16, 3]
        );

        let s = Model::<f32>::init(cfg(Arch::Single, 5), 1).unwrap();
        assert!(s
            .params
            .names()
            .all(|n| !n.starts_with("branch2") && !n.starts_with("policy")));
    }

    #[test]
    fn invalid_configs() {
        assert!(Model::<f32>::init(cfg(Arch::Amf, 0), 1).is_err());
        assert!(
            Model::<f32>::init(ModelConfig::new(Arch::Amf, 2, 8, 1).with_input(1, 8, 8), 1)
                .is_err()
        );
        assert!(
            Model::<f32>::init(ModelConfig::new(Arch::Amf, 2, 8, 3).with_input(1, 6, 8), 1)
                .is_err()
        );
    }

    #[test]
    fn output_shapes() {
        let m = Model::<f32>::init(cfg(Arch::Amf, 3), 4).unwrap();
        let x = Tensor::create(&[5, 1, 8, 8], Fill::Constant(0.5)).unwrap();
        let p = m.predict(&x).unwrap();
        assert_eq!(p.probs.shape(), &[5, 3]);
        assert_eq!(p.weights.as_ref().unwrap().shape(), &[5, 3]);
        assert_eq!(p.latents.len(), 3);
        assert_eq!(p.latents[0].shape(), &[5, 8]);
        assert_eq!(p.fused.shape(), &[5, 24]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let m = Model::<f32>::init(cfg(Arch::Single, 1), 4).unwrap();
        let x = Tensor::zeros(&[1, 1, 6, 8]).unwrap();
        assert!(matches!(m.predict(&x), Err(AmfError::Shape(_))));
    }

    #[test]
    fn load_params_reports_mismatches() {
        let mut amf = Model::<f32>::init(cfg(Arch::Amf, 2), 1).unwrap();
        let single = Model::<f32>::init(cfg(Arch::Single, 1), 1).unwrap();
        let before = amf.clone();
        match amf.load_params(&single.params) {
            Err(AmfError::Compatibility { names, .. }) => {
                assert!(names.iter().any(|n| n == "policy.conv.weight"));
                assert!(names.iter().any(|n| n == "classifier.weight"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(amf, before);
    }
}
