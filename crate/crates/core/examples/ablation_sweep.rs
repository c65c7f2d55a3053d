//! Loss-term ablation and a sample-budget sweep on a quickly trained model.
//!
//! cargo run --release --example ablation_sweep

use relmap::evaluator::{ablation_suite, sensitivity_sweep, AblationSetting, SplitSuite};
use relmap::synthdata::{generate_dataset, DatasetConfig};
use relmap::trainer::{pretrain, select_finetune_samples, FinetuneConfig, PretrainConfig};
use relmap::vit::ViTConfig;

fn main() -> relmap::Result<()> {
    let train = generate_dataset(&DatasetConfig { per_class: 100, ..Default::default() })?;
    let test_config = DatasetConfig { per_class: 10, seed: 1, ..Default::default() };
    let suite = SplitSuite::build(&generate_dataset(&test_config)?, &test_config, 7)?;
    let (base, _) = pretrain(&ViTConfig::default(), &train, &PretrainConfig { epochs: 10, ..Default::default() }, None)?;

    let config = FinetuneConfig { epochs: 10, learning_rate: 3e-5, ..Default::default() };
    let samples = select_finetune_samples(&train, &config.class_subset(8), config.samples_per_class)?;
    let ablation = ablation_suite(&base, &samples, &config, &AblationSetting::standard_rows(), &suite)?;
    for row in &ablation.rows {
        println!(
            "{:24} in-dist {:+.3}  background_swap {:+.3}",
            row.setting.name, row.in_distribution_delta, row.background_swap_delta
        );
    }

    let sweep = sensitivity_sweep(&base, &train, &[1, 2], &[2, 4], &config, &suite)?;
    print!("{}", sweep.to_csv());
    Ok(())
}
