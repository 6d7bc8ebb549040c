//! Verifies a hand-written objective against central finite differences,
//! then runs the built-in suite over every primitive and the full model loss.

use amf::autodiff::{grad_check, Graph, NodeId, Objective, Real, Tensor};
use amf::gradsuite::{run_suite, SuiteConfig};
use amf::Result;

/// `sum(relu(x W) ⊙ x W)` on a 2×3 input and a 3×3 weight.
struct GatedQuadratic;

impl Objective for GatedQuadratic {
    fn build<T: Real>(&self, g: &mut Graph<T>, p: &[NodeId]) -> Result<NodeId> {
        let xw = g.matmul(p[0], p[1])?;
        let r = g.relu(xw)?;
        let prod = g.mul(r, xw)?;
        g.sum(prod)
    }
}

fn main() -> Result<()> {
    let x = Tensor::from_f64s(&[2, 3], &[0.5, -1.25, 0.75, 1.0, 0.25, -0.5])?;
    // x·W is exactly zero at [0, 1]: the six coordinates feeding it sit on
    // the ReLU kink and are reported as skipped rather than checked.
    let w = Tensor::from_f64s(&[3, 3], &[0.3, -0.2, 0.9, 0.6, 0.4, -0.7, -0.1, 0.8, 0.5])?;
    for (label, report) in [
        (
            "f64",
            grad_check::<f64>(&GatedQuadratic, &[x.clone(), w.clone()], 1e-4, 1e-6)?,
        ),
        (
            "f32",
            grad_check::<f32>(&GatedQuadratic, &[x, w], 1e-4, 1e-4)?,
        ),
    ] {
        println!(
            "custom objective ({label}): max rel error {:.2e} over {} coordinates, {} skipped, {}",
            report.max_rel_error,
            report.checked,
            report.skipped,
            if report.passed() { "pass" } else { "FAIL" }
        );
    }

    let suite = run_suite(&SuiteConfig {
        instances: 10,
        ..SuiteConfig::default()
    })?;
    for e in &suite.entries {
        println!(
            "{:<14} f64 {:.2e}  f32 {:.2e}  {}",
            e.name,
            e.max_rel_error_f64,
            e.max_rel_error_f32,
            if e.passed { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}
