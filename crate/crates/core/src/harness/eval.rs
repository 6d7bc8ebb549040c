use crate::autodiff::{kernels, Real, Tensor};
use crate::data::{sequential, Example};
use crate::error::{AmfError, Result};
use crate::nn::{Arch, Model};

/// Policy routing quality under the best branch↔mode matching.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Fraction of each mode's samples routed to its matched branch.
    pub per_mode: Vec<f64>,
    pub overall: f64,
    /// `matching[mode]` = branch index serving that mode.
    pub matching: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTop1 {
    pub mode: u8,
    pub count: usize,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub arch: Arch,
    pub count: usize,
    pub top1_overall: f64,
    /// Only modes that occur in the split, ascending.
    pub top1_per_mode: Vec<ModeTop1>,
    /// Mean cross-entropy.
    pub loss: f64,
    /// AMF with as many branches as modes only.
    pub assignment: Option<Assignment>,
    /// Mean policy weight per branch (AMF only).
    pub mean_weights: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn top1_for_mode(&self, mode: u8) -> Option<f64> {
        self.top1_per_mode
            .iter()
            .find(|m| m.mode == mode)
            .map(|m| m.top1)
    }
}

/// First index of the maximum; ties resolve to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Each sample is routed to `argmax_i h_i`. Since branch identity is not
/// fixed a priori, the branch↔mode matching is the permutation maximizing
/// overall accuracy (ties: first in lexicographic order, i.e. identity
/// first). Per-mode accuracy is correct routings over samples of that mode.
pub fn assignment_accuracy<T: Real>(
    h: &Tensor<T>,
    modes: &[u8],
    mode_count: usize,
) -> Result<Assignment> {
    let (n, k) = match h.shape() {
        &[n, k] => (n, k),
        s => {
            return Err(AmfError::shape(format!(
                "weights must be [N, n], got {s:?}"
            )))
        }
    };
    if k != mode_count {
        return Err(AmfError::usage(format!(
            "{k} branches cannot be matched to {mode_count} modes"
        )));
    }
    if modes.len() != n {
        return Err(AmfError::shape(format!(
            "{} modes for {n} samples",
            modes.len()
        )));
    }
    if let Some(&m) = modes.iter().find(|&&m| usize::from(m) >= mode_count) {
        return Err(AmfError::usage(format!("mode {m} out of range")));
    }
    // confusion[mode][branch]
    let mut confusion = vec![vec![0usize; k]; mode_count];
    for (s, &m) in modes.iter().enumerate() {
        confusion[usize::from(m)][argmax(h.row(s))] += 1;
    }
    let totals: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let mut best: Option<(usize, Vec<usize>)> = None;
    for perm in permutations(k) {
        let correct: usize = perm.iter().enumerate().map(|(m, &b)| confusion[m][b]).sum();
        if best.as_ref().is_none_or(|(c, _)| correct > *c) {
            best = Some((correct, perm));
        }
    }
    let (correct, matching) = best.expect("at least one permutation");
    let per_mode = matching
        .iter()
        .enumerate()
        .map(|(m, &b)| {
            if totals[m] == 0 {
                0.0
            } else {
                confusion[m][b] as f64 / totals[m] as f64
            }
        })
        .collect();
    Ok(Assignment {
        per_mode,
        overall: if n == 0 {
            0.0
        } else {
            correct as f64 / n as f64
        },
        matching,
    })
}

/// Number of modes implied by a split (`max mode + 1`).
pub fn mode_count(examples: &[Example]) -> usize {
    examples
        .iter()
        .map(|e| usize::from(e.mode) + 1)
        .max()
        .unwrap_or(0)
}

/// Batched evaluation; parameters are only read.
pub fn evaluate<T: Real>(model: &Model<T>, examples: &[Example]) -> Result<EvalReport> {
    evaluate_batched(model, examples, 128)
}

pub fn evaluate_batched<T: Real>(
    model: &Model<T>,
    examples: &[Example],
    batch_size: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(AmfError::usage("cannot evaluate on an empty split"));
    }
    let n = examples.len();
    let classes = model.config().classes;
    let branches = model.config().branch_count();
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    let mut per_mode: Vec<(usize, usize)> = Vec::new();
    let mut weights: Vec<T> = Vec::new();
    let mut modes: Vec<u8> = Vec::with_capacity(n);
    for batch in sequential(examples, batch_size)? {
        let pred = model.predict(&batch.images.cast())?;
        let logits = pred.logits.to_f64_vec();
        let lse = kernels::logsumexp_rows(&logits, batch.len(), classes);
        for (s, (&label, &mode)) in batch.labels.iter().zip(&batch.modes).enumerate() {
            if label >= classes {
                return Err(AmfError::Data(format!(
                    "label {label} out of range for {classes} classes"
                )));
            }
            loss += lse[s] - logits[s * classes + label];
            let hit = argmax(pred.probs.row(s)) == label;
            let m = usize::from(mode);
            if per_mode.len() <= m {
                per_mode.resize(m + 1, (0, 0));
            }
            per_mode[m].1 += 1;
            if hit {
                correct += 1;
                per_mode[m].0 += 1;
            }
        }
        modes.extend_from_slice(&batch.modes);
        if let Some(h) = pred.weights {
            weights.extend_from_slice(h.data());
        }
    }

    let (assignment, mean_weights) = if model.arch() == Arch::Amf {
        let h = Tensor::from_vec(&[n, branches], weights)?;
        let mean = column_means(&h);
        let modes_present = mode_count(examples);
        let a = (modes_present == branches)
            .then(|| assignment_accuracy(&h, &modes, branches))
            .transpose()?;
        (a, Some(mean))
    } else {
        (None, None)
    };

    Ok(EvalReport {
        arch: model.arch(),
        count: n,
        top1_overall: correct as f64 / n as f64,
        top1_per_mode: per_mode
            .iter()
            .enumerate()
            .filter(|(_, (_, total))| *total > 0)
            .map(|(m, &(c, total))| ModeTop1 {
                mode: m as u8,
                count: total,
                top1: c as f64 / total as f64,
            })
            .collect(),
        loss: loss / n as f64,
        assignment,
        mean_weights,
    })
}

fn column_means<T: Real>(h: &Tensor<T>) -> Vec<f64> {
    let (n, k) = (h.shape()[0], h.shape()[1]);
    let mut sums = vec![0.0f64; k];
    for r in 0..n {
        for (s, v) in sums.iter_mut().zip(h.row(r)) {
            *s += v.to_f64();
        }
    }
    sums.into_iter().map(|s| s / n as f64).collect()
}

/// Mean policy weight per branch over `examples`.
pub fn weighting_trace<T: Real>(model: &Model<T>, examples: &[Example]) -> Result<Vec<f64>> {
    if model.arch() != Arch::Amf {
        return Err(AmfError::usage(format!(
            "weighting trace needs an amf model, got {}",
            model.arch()
        )));
    }
    evaluate(model, examples)?
        .mean_weights
        .ok_or_else(|| AmfError::usage("model produced no policy weights"))
}
