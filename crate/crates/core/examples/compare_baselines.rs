//! One seed of the mixture comparison: the adaptive model against
//! multi-tuning and two single-rate standard fine-tunes.

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

    type Run<'a> = (&'a str, Arch, Vec<(&'a str, f64)>);
    let runs: [Run; 4] = [
        (
            "amf",
            Arch::Amf,
            vec![
                ("branch1", 0.01),
                ("branch2", 0.03),
                ("classifier", 0.03),
                ("policy", 3e-5),
            ],
        ),
        (
            "multitune",
            Arch::MultiTune,
            vec![("branch1", 0.01), ("branch2", 0.03), ("classifier", 0.03)],
        ),
        (
            "single, high lr",
            Arch::Single,
            vec![("shallow", 0.03), ("deep", 0.03), ("classifier", 0.03)],
        ),
        (
            "single, low lr",
            Arch::Single,
            vec![("shallow", 0.001), ("deep", 0.001), ("classifier", 0.001)],
        ),
    ];
    for (label, arch, lrs) in runs {
        let model = ModelConfig::new(arch, 2, 64, spec.classes());
        let config = TrainConfig {
            model,
            optim: OptimConfig {
                momentum: 0.9,
                schedules: schedules(&lrs, 0.9, 20),
                layer_scale: (arch != Arch::Single).then_some(0.4),
            },
            batch_size: 32,
            epochs: 20,
            init_seed: 0,
            data_seed: 7,
            transfer: default_transfer_map(&model),
        };
        let outcome = train(&config, &data, Some(&pre.checkpoint))?;
        let mut best = outcome.model.clone();
        best.load_params(&outcome.best)?;
        let r = evaluate(&best, &data.test)?;
        let modes: Vec<String> = r
            .top1_per_mode
            .iter()
            .map(|m| format!("{:.3}", m.top1))
            .collect();
        println!(
            "{label:<16} test top-1 {:.3} (per mode {})",
            r.top1_overall,
            modes.join(" / ")
        );
    }
    Ok(())
}
