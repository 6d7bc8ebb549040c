//! Saves a model checkpoint, reloads it into a fresh model and shows that
//! predictions are unchanged, then shows a mismatched load being refused.

use amf::data::{gen_mixture, MixtureSpec};
use amf::harness::evaluate;
use amf::nn::{checkpoint, Arch, Model, ModelConfig};
use amf::Result;

fn main() -> Result<()> {
    let spec = MixtureSpec::default();
    let data = gen_mixture(&spec)?;
    let cfg = ModelConfig::new(Arch::Amf, 2, 16, spec.classes()).with_input(
        spec.channels,
        spec.height,
        spec.width,
    );
    let model = Model::<f32>::init(cfg, 3)?;

    let path = std::env::temp_dir().join(format!("amf-example-{}.ckpt", std::process::id()));
    checkpoint::save_model(&model, &path)?;
    let mut reloaded = Model::<f32>::init(cfg, 99)?;
    checkpoint::load_into(&mut reloaded, &path)?;
    let before = evaluate(&model, &data.val)?;
    let after = evaluate(&reloaded, &data.val)?;
    println!("identical parameters: {}", model.params == reloaded.params);
    println!("identical evaluation: {}", before == after);

    let single = ModelConfig::new(Arch::Single, 1, 16, spec.classes()).with_input(
        spec.channels,
        spec.height,
        spec.width,
    );
    let mut other = Model::<f32>::init(single, 0)?;
    match checkpoint::load_into(&mut other, &path) {
        Ok(()) => println!("unexpected: mismatched load accepted"),
        Err(e) => println!("refused (exit code {}): {e}", e.exit_code()),
    }
    let _ = std::fs::remove_file(&path);
    Ok(())
}
