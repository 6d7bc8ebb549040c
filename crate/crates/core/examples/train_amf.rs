//! Trains a two-branch adaptive model on the synthetic mixture and prints
//! the per-epoch monitor: loss, validation top-1, mean policy weights and
//! assignment accuracy.

use amf::data::{gen_mixture, gen_source_task, MixtureSpec};
use amf::harness::{
    default_transfer_map, evaluate, pretrain, schedules, train, PretrainConfig, TrainConfig,
};
use amf::nn::{Arch, ModelConfig};
use amf::optim::OptimConfig;
use amf::Result;

fn main() -> Result<()> {
    let spec = MixtureSpec::default();
    let data = gen_mixture(&spec)?;
    let source = gen_source_task(&spec, 6, 1)?;
    let pre = pretrain(
        &PretrainConfig {
            epochs: 10,
            ..PretrainConfig::default()
        },
        &source,
    )?;

    let model = ModelConfig::new(Arch::Amf, 2, 64, spec.classes());
    let config = TrainConfig {
        model,
        optim: OptimConfig {
            momentum: 0.9,
            schedules: schedules(
                &[
                    ("branch1", 0.01),
                    ("branch2", 0.03),
                    ("classifier", 0.03),
                    ("policy", 3e-5),
                ],
                0.9,
                20,
            ),
            layer_scale: Some(0.4),
        },
        batch_size: 32,
        epochs: 20,
        init_seed: 0,
        data_seed: 7,
        transfer: default_transfer_map(&model),
    };
    let outcome = train(&config, &data, Some(&pre.checkpoint))?;
    print!("{}", outcome.trace.to_csv());
    for (epoch, msg) in &outcome.trace.warnings {
        println!("warning at epoch {epoch}: {msg}");
    }

    let mut best = outcome.model.clone();
    best.load_params(&outcome.best)?;
    let report = evaluate(&best, &data.test)?;
    println!(
        "best epoch {} (val {:.3}); test top-1 {:.3}; assignment {:.3}",
        outcome.best_epoch,
        outcome.best_val_top1,
        report.top1_overall,
        report.assignment.map_or(f64::NAN, |a| a.overall)
    );
    Ok(())
}
