//! Central finite-difference verification of analytic gradients.
//!
//! The analytic side runs at the requested storage precision. The numeric
//! side always evaluates in `f64` at the same (precision-rounded) point, so
//! it stays an independent oracle for 32-bit runs too.

use super::graph::{Graph, NodeId, OpKind};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// A scalar function of a list of parameter tensors, buildable at any
/// storage precision.
pub trait Objective {
    fn build<T: Real>(&self, g: &mut Graph<T>, params: &[NodeId]) -> Result<NodeId>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates where every step size crossed a ReLU/max-pool boundary.
    pub skipped: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy)]
pub struct GradChecker {
    pub eps: f64,
    pub tol: f64,
    /// Retries with `eps / 10` when the perturbation changes a piecewise
    /// decision.
    pub shrink_retries: usize,
    pub fault: Option<OpKind>,
    /// Adds `scale_floor · max|numeric|` over the same tensor to the
    /// relative-error denominator. Zero (the default) gives the plain
    /// `|a − n| / max(|a|, |n|, 1e-8)`.
    pub scale_floor: f64,
}

impl GradChecker {
    pub fn new(eps: f64, tol: f64) -> Self {
        assert!(eps > 0.0, "finite-difference step must be positive");
        Self {
            eps,
            tol,
            shrink_retries: 3,
            fault: None,
            scale_floor: 0.0,
        }
    }

    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    fn eval(obj: &impl Objective, params: &[Tensor<f64>]) -> Result<(f64, u64)> {
        let mut g = Graph::<f64>::new();
        let ids: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
        let out = obj.build(&mut g, &ids)?;
        Ok((g.value(out).data()[0], g.decision_signature()))
    }

    pub fn analytic<T: Real>(
        &self,
        obj: &impl Objective,
        params: &[Tensor<T>],
    ) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::<T>::new();
        if let Some(kind) = self.fault {
            g.inject_fault(kind);
        }
        let ids: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
        let out = obj.build(&mut g, &ids)?;
        g.backward(out)?;
        Ok(ids
            .iter()
            .map(|&id| g.grad_or_zeros(id).to_f64_vec())
            .collect())
    }

    pub fn check<T: Real>(
        &self,
        obj: &impl Objective,
        params: &[Tensor<f64>],
    ) -> Result<GradCheckReport> {
        let stored: Vec<Tensor<T>> = params.iter().map(Tensor::cast).collect();
        let analytic = self.analytic(obj, &stored)?;
        let mut point: Vec<Tensor<f64>> = stored.iter().map(Tensor::cast).collect();
        let (_, base_sig) = Self::eval(obj, &point)?;

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            skipped: 0,
            tol: self.tol,
        };
        for p in 0..point.len() {
            let mut numeric = Vec::with_capacity(point[p].len());
            for i in 0..point[p].len() {
                let orig = point[p].data()[i];
                let mut eps = self.eps;
                let mut value = None;
                for _ in 0..=self.shrink_retries {
                    point[p].data_mut()[i] = orig + eps;
                    let (fp, sp) = Self::eval(obj, &point)?;
                    point[p].data_mut()[i] = orig - eps;
                    let (fm, sm) = Self::eval(obj, &point)?;
                    if sp == base_sig && sm == base_sig {
                        value = Some((fp - fm) / (2.0 * eps));
                        break;
                    }
                    eps /= 10.0;
                }
                point[p].data_mut()[i] = orig;
                numeric.push(value);
            }
            let floor =
                self.scale_floor * numeric.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, n) in numeric.into_iter().enumerate() {
                let Some(n) = n else {
                    report.skipped += 1;
                    continue;
                };
                report.checked += 1;
                let a = analytic[p][i];
                let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8).max(floor);
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some((p, i));
                }
            }
        }
        Ok(report)
    }
}

/// Central-difference check with default retry policy.
pub fn grad_check<T: Real>(
    obj: &impl Objective,
    params: &[Tensor<f64>],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    GradChecker::new(eps, tol).check::<T>(obj, params)
}
