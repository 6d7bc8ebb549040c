//! Step-decay schedules, per-group learning rates with a layer scale, and
//! heavy-ball SGD descending a one-dimensional quadratic.

use amf::autodiff::Tensor;
use amf::nn::{Arch, ModelConfig, ParamStore};
use amf::optim::{group_names, sgd_step, OptimizerState, ParamGroup, ScheduleSpec};
use amf::Result;

fn main() -> Result<()> {
    let spec = ScheduleSpec::new(0.03, 0.9, 20);
    for epoch in [0, 19, 20, 40, 60] {
        println!("lr at epoch {epoch:>2}: {:.6}", spec.lr_at_epoch(epoch));
    }
    let amf = ModelConfig::new(Arch::Amf, 2, 64, 16);
    println!("groups for amf: {}", group_names(&amf).join(", "));

    // f(w) = w² / 2 has gradient w; with lr 0.1 and no momentum w_t = 0.9^t.
    let mut params = ParamStore::<f64>::new();
    params.insert("w", Tensor::from_f64s(&[1], &[1.0])?)?;
    let group = ParamGroup {
        name: "all".into(),
        members: vec!["w".into()],
        schedule: ScheduleSpec::constant(0.1),
        momentum: 0.0,
        layer_scale: Vec::new(),
    };
    let mut state = OptimizerState::new(&params);
    for t in 1..=5 {
        let mut grads = ParamStore::<f64>::new();
        grads.insert("w", params.require("w")?.clone())?;
        sgd_step(
            &mut params,
            &grads,
            &mut state,
            std::slice::from_ref(&group),
        )?;
        println!(
            "step {t}: w = {:.6} (0.9^{t} = {:.6})",
            params.require("w")?.data()[0],
            0.9f64.powi(t)
        );
    }
    Ok(())
}
