//! Finite-difference verification of every differentiable primitive and of
//! the full AMF loss, over many seeded random instances.
//!
//! Each primitive is checked through a random linear projection of its
//! output (`sum(op(x) ⊙ R)`), so every output coordinate contributes to the
//! checked gradient. Inputs feeding ReLU and max-pool are drawn away from
//! their kinks; any remaining boundary crossings are handled by the
//! checker's step shrinking.

use crate::autodiff::{Fill, GradChecker, Graph, NodeId, Objective, OpKind, Real, Tensor};
use crate::error::{AmfError, Result};
use crate::nn::{Arch, Bound, Model, ModelConfig};
use crate::rng;

/// Name of the whole-model entry in a suite report.
pub const AMF_LOSS: &str = "amf_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub eps: f64,
    pub tol_f64: f64,
    pub tol_f32: f64,
    /// Corrupts one op's backward rule (failure fixture).
    pub fault: Option<OpKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            eps: 1e-4,
            tol_f64: 1e-6,
            tol_f32: 1e-4,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    /// Op name, or [`AMF_LOSS`].
    pub name: String,
    pub max_rel_error_f64: f64,
    pub max_rel_error_f32: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

/// A randomly drawn instance: objective plus parameter values.
struct Case {
    objective: CaseObjective,
    params: Vec<Tensor<f64>>,
}

enum CaseObjective {
    Op {
        kind: OpKind,
        projection: Option<Tensor<f64>>,
        labels: Vec<usize>,
    },
    Amf {
        model: Box<Model<f64>>,
        names: Vec<String>,
        x: Tensor<f64>,
        labels: Vec<usize>,
    },
}

impl Objective for CaseObjective {
    fn build<T: Real>(&self, g: &mut Graph<T>, p: &[NodeId]) -> Result<NodeId> {
        match self {
            Self::Op {
                kind,
                projection,
                labels,
            } => {
                let y = apply(*kind, g, p, labels)?;
                match projection {
                    Some(r) => {
                        let r = g.input(r.cast());
                        let y = g.mul(y, r)?;
                        g.sum(y)
                    }
                    None => Ok(y),
                }
            }
            Self::Amf {
                model,
                names,
                x,
                labels,
            } => {
                let frozen = model.params.cast::<T>();
                let bound: Bound = frozen
                    .iter()
                    .map(|(name, t)| {
                        let id = match names.iter().position(|n| n == name) {
                            Some(i) => p[i],
                            None => g.input(t.clone()),
                        };
                        (name.to_string(), id)
                    })
                    .collect();
                let model = model.cast::<T>();
                let x = g.input(x.cast());
                let out = model.forward(g, &bound, x)?;
                g.cross_entropy(out.logits, labels)
            }
        }
    }
}

fn apply<T: Real>(
    kind: OpKind,
    g: &mut Graph<T>,
    p: &[NodeId],
    labels: &[usize],
) -> Result<NodeId> {
    match kind {
        OpKind::MatMul => g.matmul(p[0], p[1]),
        OpKind::AddBias => g.add_bias(p[0], p[1]),
        OpKind::Conv2d => g.conv2d(p[0], p[1], p[2]),
        OpKind::Relu => g.relu(p[0]),
        OpKind::MaxPool2 => g.maxpool2(p[0]),
        OpKind::Reshape => g.reshape(p[0], &[6, 4]),
        OpKind::Concat => g.concat(&[p[0], p[1]]),
        OpKind::Column => g.column(p[0], 2),
        OpKind::ScaleRows => g.scale_rows(p[0], p[1]),
        OpKind::Softmax => g.softmax(p[0]),
        OpKind::CrossEntropy => g.cross_entropy(p[0], labels),
        OpKind::Mul => g.mul(p[0], p[1]),
        OpKind::Sum => g.sum(p[0]),
        OpKind::Leaf => Err(AmfError::usage("leaf nodes have no backward rule")),
    }
}

/// Rounds through `f32` so constants are identical at both precisions.
fn representable(t: &Tensor<f64>) -> Tensor<f64> {
    t.cast::<f32>().cast()
}

fn gaussian(shape: &[usize], std: f64, seed: u64) -> Result<Tensor<f64>> {
    Ok(representable(&Tensor::create(
        shape,
        Fill::Gaussian {
            mean: 0.0,
            std,
            seed,
        },
    )?))
}

/// Magnitudes in `[0.1, 1]` with random sign: at least 0.1 from the ReLU
/// kink, and never a near-zero projection weight.
fn off_kink(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    let t = gaussian(shape, 1.0, seed)?;
    Ok(representable(&t.map(|v| {
        v.signum() * (0.1 + 0.9 * (v.abs() / 3.0).min(1.0))
    })))
}

/// Distinct values spaced 0.1 apart in shuffled order, so every pooling
/// window has a unique maximum with margin.
fn distinct(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    v.shuffle(&mut rng::rng(seed));
    Tensor::from_vec(shape, v)
}

fn op_case(kind: OpKind, seed: u64) -> Result<Case> {
    let s = |i: u64| rng::derive_seed(seed, &[i]);
    let params = match kind {
        OpKind::MatMul => vec![gaussian(&[3, 4], 1.0, s(1))?, gaussian(&[4, 5], 1.0, s(2))?],
        OpKind::AddBias => vec![gaussian(&[3, 4], 1.0, s(1))?, gaussian(&[4], 1.0, s(2))?],
        OpKind::Conv2d => vec![
            gaussian(&[2, 2, 5, 5], 1.0, s(1))?,
            gaussian(&[3, 2, 3, 3], 0.5, s(2))?,
            gaussian(&[3], 0.5, s(3))?,
        ],
        OpKind::Relu => vec![off_kink(&[3, 4], s(1))?],
        OpKind::MaxPool2 => vec![distinct(&[2, 2, 4, 4], s(1))?],
        OpKind::Reshape => vec![gaussian(&[2, 3, 4], 1.0, s(1))?],
        OpKind::Concat => vec![gaussian(&[3, 2], 1.0, s(1))?, gaussian(&[3, 4], 1.0, s(2))?],
        OpKind::Column => vec![gaussian(&[3, 4], 1.0, s(1))?],
        OpKind::ScaleRows => vec![gaussian(&[3, 4], 1.0, s(1))?, gaussian(&[3, 1], 1.0, s(2))?],
        OpKind::Softmax => vec![gaussian(&[3, 5], 2.0, s(1))?],
        OpKind::CrossEntropy => vec![gaussian(&[4, 5], 2.0, s(1))?],
        OpKind::Mul => vec![gaussian(&[3, 4], 1.0, s(1))?, gaussian(&[3, 4], 1.0, s(2))?],
        OpKind::Sum => vec![gaussian(&[3, 4], 1.0, s(1))?],
        OpKind::Leaf => return Err(AmfError::usage("leaf nodes have no backward rule")),
    };
    let labels: Vec<usize> = (0..4).map(|i| (seed as usize + 3 * i) % 5).collect();
    // Forward once to learn the output shape for the projection.
    let mut g = Graph::<f64>::new();
    let ids: Vec<_> = params.iter().map(|t| g.param(t.clone())).collect();
    let y = apply(kind, &mut g, &ids, &labels)?;
    let out_shape = g.value(y).shape().to_vec();
    let projection = if out_shape.is_empty() {
        None
    } else {
        Some(off_kink(&out_shape, s(9))?)
    };
    Ok(Case {
        objective: CaseObjective::Op {
            kind,
            projection,
            labels,
        },
        params,
    })
}

/// Smallest accepted `|∂L/∂h_1 − ∂L/∂h_2| / max(|∂L/∂h_1|, |∂L/∂h_2|)`.
/// The policy gradient carries this difference as a common factor, so when
/// the two branch sensitivities nearly cancel, 32-bit rounding of them
/// dominates every policy coordinate. Such instances are redrawn.
pub const MIN_POLICY_CONTRAST: f64 = 0.05;

/// Reduced AMF: n = 2, d = 4, 3 classes, one 1×4×4 input; the gradient is
/// taken with respect to every policy parameter.
fn amf_case(seed: u64) -> Result<Case> {
    for attempt in 0u64.. {
        let case = amf_instance(rng::derive_seed(seed, &[attempt]))?;
        if policy_contrast(&case)? >= MIN_POLICY_CONTRAST {
            return Ok(case);
        }
    }
    unreachable!("attempts are unbounded")
}

fn amf_instance(seed: u64) -> Result<Case> {
    let config = ModelConfig::new(Arch::Amf, 2, 4, 3).with_input(1, 4, 4);
    let mut model = Model::<f64>::init(config, rng::derive_seed(seed, &[1]))?;
    // A random policy head moves the weights away from uniform; a unit-scale
    // classifier keeps policy gradients well above finite-difference noise.
    for (name, t) in model.params.iter_mut() {
        let std = if name.starts_with("policy.head.") {
            0.5
        } else if name.starts_with("classifier.") {
            1.0
        } else {
            continue;
        };
        *t = gaussian(
            t.shape(),
            std,
            rng::derive_seed(seed, &[2, rng::name_tag(name)]),
        )?;
    }
    model.params = model.params.cast::<f32>().cast();
    let names: Vec<String> = model
        .params
        .names()
        .filter(|n| n.starts_with("policy."))
        .map(String::from)
        .collect();
    let params = names
        .iter()
        .map(|n| model.params.require(n).cloned())
        .collect::<Result<Vec<_>>>()?;
    let x = representable(&Tensor::create(
        &[1, 1, 4, 4],
        Fill::Gaussian {
            mean: 0.5,
            std: 0.3,
            seed: rng::derive_seed(seed, &[3]),
        },
    )?);
    let labels = vec![(seed % 3) as usize];
    Ok(Case {
        objective: CaseObjective::Amf {
            model: Box::new(model),
            names,
            x,
            labels,
        },
        params,
    })
}

fn policy_contrast(case: &Case) -> Result<f64> {
    let CaseObjective::Amf {
        model, x, labels, ..
    } = &case.objective
    else {
        return Ok(1.0);
    };
    let mut g = Graph::<f64>::new();
    let bound = model.params.bind(&mut g);
    let x = g.input(x.clone());
    let out = model.forward(&mut g, &bound, x)?;
    let loss = g.cross_entropy(out.logits, labels)?;
    g.backward(loss)?;
    let h = out
        .weights
        .ok_or_else(|| AmfError::usage("amf forward produced no weights"))?;
    let gh = g.grad_or_zeros(h);
    let (a, b) = (gh.data()[0], gh.data()[1]);
    Ok((a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
}

/// The whole-model entry measures error relative to each tensor's largest
/// gradient (max-norm relative error). Its deep chain of 32-bit
/// intermediates leaves coordinates that cancel to a tiny fraction of the
/// tensor's scale with rounding error far above their own magnitude, while
/// relative to the tensor scale the error stays near 1e-6.
pub const MODEL_SCALE_FLOOR: f64 = 1.0;

fn check_cases(
    name: &str,
    config: &SuiteConfig,
    scale_floor: f64,
    mut make: impl FnMut(u64) -> Result<Case>,
) -> Result<SuiteEntry> {
    let mut checker64 = GradChecker::new(config.eps, config.tol_f64);
    let mut checker32 = GradChecker::new(config.eps, config.tol_f32);
    for c in [&mut checker64, &mut checker32] {
        c.fault = config.fault;
        c.scale_floor = scale_floor;
    }
    let mut entry = SuiteEntry {
        name: name.to_string(),
        max_rel_error_f64: 0.0,
        max_rel_error_f32: 0.0,
        checked: 0,
        skipped: 0,
        passed: true,
    };
    for i in 0..config.instances {
        let case = make(rng::derive_seed(
            config.seed,
            &[rng::name_tag(name), i as u64],
        ))?;
        let r64 = checker64.check::<f64>(&case.objective, &case.params)?;
        let r32 = checker32.check::<f32>(&case.objective, &case.params)?;
        entry.max_rel_error_f64 = entry.max_rel_error_f64.max(r64.max_rel_error);
        entry.max_rel_error_f32 = entry.max_rel_error_f32.max(r32.max_rel_error);
        entry.checked += r64.checked + r32.checked;
        entry.skipped += r64.skipped + r32.skipped;
        entry.passed &= r64.passed() && r32.passed();
    }
    Ok(entry)
}

/// Runs every differentiable op, then the full AMF loss, each over
/// `config.instances` random instances in both precisions.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    if config.instances == 0 {
        return Err(AmfError::config(
            "gradcheck.instances",
            "must be at least 1",
        ));
    }
    let mut entries = Vec::new();
    for kind in OpKind::DIFFERENTIABLE {
        entries.push(check_cases(kind.name(), config, 0.0, |s| op_case(kind, s))?);
    }
    entries.push(check_cases(AMF_LOSS, config, MODEL_SCALE_FLOOR, amf_case)?);
    Ok(SuiteReport { entries })
}
