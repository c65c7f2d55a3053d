//! Builds the default Vision Transformer, runs one image through it and
//! round-trips the weights through a checkpoint.

use relmap::synthdata::{generate_dataset, DatasetConfig};
use relmap::vit::{ViTConfig, ViTModel};

fn main() -> relmap::Result<()> {
    let model = ViTModel::init(ViTConfig::default(), 0)?;
    println!("{} parameters in {} tensors", model.num_parameters(), model.params().len());

    let sample = &generate_dataset(&DatasetConfig { per_class: 1, ..Default::default() })?[0];
    let (logits, attention) = model.forward(&sample.image)?;
    println!("logits {:?}", logits.data());
    for (i, a) in attention.iter().enumerate() {
        println!("block {i} attention {:?}", a.shape());
    }

    let path = std::env::temp_dir().join("relmap_example.ckpt");
    model.save_checkpoint(&path)?;
    let back = ViTModel::load_checkpoint(&path)?;
    println!("checkpoint round trip keeps weights: {}", back.weights_hash() == model.weights_hash());
    std::fs::remove_file(path)?;
    Ok(())
}
