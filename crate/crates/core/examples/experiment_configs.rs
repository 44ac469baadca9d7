//! Resolve experiment configs: defaults per dataset, JSON files merged on top,
//! dotted `key=value` overrides and key-naming validation errors.
//!
//! cargo run --release --example experiment_configs

use setcon::harness::ExperimentConfig;

fn main() -> setcon::Result<()> {
    let ablation = ExperimentConfig::resolve(None, &["data.num_colors=5".into(), "model.num_slots=6".into()])?;
    println!(
        "color ablation: {} objects, {} slots",
        ablation.data.objects(),
        ablation.model.num_slots
    );

    let balls = ExperimentConfig::resolve(
        Some(r#"{"data": {"dataset": "balls"}, "model": {"encoder": "fm_mlp"}}"#),
        &[],
    )?;
    println!("{}", balls.render());
    println!("effective lr: {:e}", balls.effective_lr());

    for bad in ["loss.tau=0", "model.slots=3", "train.lr=-1"] {
        match ExperimentConfig::resolve(None, &[bad.into()]) {
            Err(e) => println!("{bad:<16} -> {e}"),
            Ok(_) => println!("{bad:<16} -> accepted"),
        }
    }
    Ok(())
}
