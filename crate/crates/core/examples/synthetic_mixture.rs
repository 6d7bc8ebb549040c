//! Generates the two-mode mixture and the texture source task, stores the
//! mixture to disk, reloads it and draws one example of each mode.

use amf::data::{gen_mixture, gen_source_task, store, Example, MixtureSpec};
use amf::Result;

fn draw(e: &Example, width: usize) {
    const SHADES: &[u8] = b" .:-=+*#%@";
    println!("label {} mode {}", e.label, e.mode);
    for row in e.image.data().chunks(width) {
        let line: String = row
            .iter()
            .map(|&v| {
                let i = (v.clamp(0.0, 1.0) * (SHADES.len() - 1) as f32).round() as usize;
                SHADES[i] as char
            })
            .collect();
        println!("  {line}");
    }
}

fn main() -> Result<()> {
    let spec = MixtureSpec::default();
    let mixture = gen_mixture(&spec)?;
    let source = gen_source_task(&spec, 6, 1)?;
    println!(
        "mixture: {} classes, {} train / {} val / {} test",
        spec.classes(),
        mixture.train.len(),
        mixture.val.len(),
        mixture.test.len()
    );
    println!(
        "source: {} classes, {} train",
        source.spec.classes(),
        source.train.len()
    );

    let path = std::env::temp_dir().join(format!("amf-mixture-{}.amfd", std::process::id()));
    store::save(&mixture, &path)?;
    let reloaded = store::load(&path)?;
    println!("round trip identical: {}", reloaded == mixture);
    let _ = std::fs::remove_file(&path);

    for mode in 0..2u8 {
        let e = mixture
            .train
            .iter()
            .find(|e| e.mode == mode)
            .expect("both modes present");
        draw(e, spec.width);
    }
    Ok(())
}
