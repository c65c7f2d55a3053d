//! Generates a small glyph dataset, writes it to disk with its masks, and
//! builds the shifted evaluation splits.
//!
//! cargo run --example synthetic_data -- /tmp/glyphs

use relmap::synthdata::{generate_dataset, make_shifted_variant, read_dataset, write_dataset, DatasetConfig, ShiftKind};

fn main() -> relmap::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "glyph_data".into());
    let config = DatasetConfig { per_class: 4, ..Default::default() };
    let samples = generate_dataset(&config)?;
    let masked = samples.iter().filter(|s| s.mask.is_some()).count();
    println!("{} samples, {masked} with masks", samples.len());

    write_dataset(&samples, std::path::Path::new(&dir))?;
    let back = read_dataset(std::path::Path::new(&dir))?;
    assert_eq!(back.len(), samples.len());
    println!("wrote and re-read {dir}");

    let s = &samples[0];
    for kind in ShiftKind::ALL {
        let v = make_shifted_variant(s, kind, 7, &config)?;
        println!(
            "{:16} label {} texture {:?} position {:?} scale {:.2}",
            kind.name(),
            v.label,
            v.scene.bg_texture,
            v.scene.position,
            v.scene.scale
        );
    }
    Ok(())
}
