//! Relevance map of a briefly trained model for one test image, written as
//! a grayscale PGM and a color PPM heatmap.
//!
//! cargo run --release --example relevance_map -- /tmp/relevance

use relmap::relevance::{relevance_map, upsample_map, write_heatmaps};
use relmap::synthdata::{generate_dataset, DatasetConfig};
use relmap::trainer::{pretrain, PretrainConfig};
use relmap::vit::ViTConfig;

fn main() -> relmap::Result<()> {
    let stem = std::env::args().nth(1).unwrap_or_else(|| "relevance".into());
    let train = generate_dataset(&DatasetConfig { per_class: 60, ..Default::default() })?;
    let (model, _) = pretrain(&ViTConfig::default(), &train, &PretrainConfig { epochs: 4, ..Default::default() }, None)?;

    let test = generate_dataset(&DatasetConfig { per_class: 1, seed: 1, ..Default::default() })?;
    let sample = &test[2];
    let map = relevance_map(&model, &sample.image, sample.label)?;
    for row in map.values.chunks(map.grid) {
        println!("{}", row.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "));
    }
    let pixels = upsample_map(&map, 32, 32)?;
    write_heatmaps(&pixels, std::path::Path::new(&stem))?;
    println!("wrote {stem}.pgm and {stem}.ppm");
    Ok(())
}
