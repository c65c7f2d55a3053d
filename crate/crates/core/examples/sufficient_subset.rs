//! Finds a small pixel subset on which a trained model keeps its
//! prediction, and writes the subset as an image.
//!
//! cargo run --release --example sufficient_subset -- /tmp/subset.ppm

use relmap::objectives::argmax;
use relmap::sis::{find_sis, replay, write_subset_ppm, SisConfig, SisOutcome};
use relmap::synthdata::{generate_dataset, DatasetConfig};
use relmap::trainer::{pretrain, PretrainConfig};
use relmap::vit::ViTConfig;

fn main() -> relmap::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "subset.ppm".into());
    let train = generate_dataset(&DatasetConfig { per_class: 100, ..Default::default() })?;
    let (model, _) = pretrain(&ViTConfig::default(), &train, &PretrainConfig { epochs: 12, ..Default::default() }, None)?;

    let test = generate_dataset(&DatasetConfig { per_class: 2, seed: 1, ..Default::default() })?;
    for sample in &test {
        let predicted = argmax(model.logits(&sample.image)?.data());
        match find_sis(&model, &sample.image, predicted, &SisConfig::default())? {
            SisOutcome::Insufficient { full_image_confidence, .. } => {
                println!("class {predicted}: full image only {full_image_confidence:.3}");
            }
            SisOutcome::Found(r) => {
                println!(
                    "class {predicted}: {} pixels ({:.1}%) keep p = {:.3}, replay {:.3}",
                    r.retained.len(),
                    100.0 * r.retained_fraction,
                    r.final_confidence,
                    replay(&model, &sample.image, &r)?
                );
                write_subset_ppm(&sample.image, &r, std::path::Path::new(&out))?;
                println!("wrote {out}");
                return Ok(());
            }
        }
    }
    println!("no confident prediction to explain");
    Ok(())
}
