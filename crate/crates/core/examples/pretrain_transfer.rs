//! Pretrains a backbone and policy feature block on the source task, then
//! transfers them into a two-branch adaptive model.

use amf::data::{gen_source_task, MixtureSpec};
use amf::harness::{default_transfer_map, pretrain, PretrainConfig};
use amf::nn::{transfer_init, Arch, Model, ModelConfig};
use amf::Result;

fn main() -> Result<()> {
    let spec = MixtureSpec::default();
    let source = gen_source_task(&spec, 6, 1)?;
    let config = PretrainConfig {
        epochs: 10,
        ..PretrainConfig::default()
    };
    let outcome = pretrain(&config, &source)?;
    println!(
        "source val top-1: backbone {:.3}, policy block {:.3}",
        outcome.backbone_val_top1, outcome.policy_val_top1
    );
    for (name, t) in outcome.checkpoint.iter() {
        println!("  exported {name} {:?}", t.shape());
    }

    let model_cfg = ModelConfig::new(Arch::Amf, 2, config.latent, spec.classes()).with_input(
        spec.channels,
        spec.height,
        spec.width,
    );
    let mut model = Model::<f32>::init(model_cfg, 0)?;
    let loaded = transfer_init(
        &mut model,
        &outcome.checkpoint,
        &default_transfer_map(&model_cfg),
    )?;
    println!(
        "transferred {} tensors; the rest keep their fresh init",
        loaded.len()
    );
    Ok(())
}
