//! Pretrains a model on the spurious-cue data, finetunes it with the
//! relevance objective, and compares accuracy on every shifted split.
//!
//! cargo run --release --example finetune_robustness

use relmap::evaluator::{robustness_report, segmentation_eval, SplitSuite};
use relmap::synthdata::{generate_dataset, DatasetConfig};
use relmap::trainer::{
    finetune_relevance, pretrain, select_finetune_samples, FinetuneConfig, PretrainConfig,
    TargetClassMode,
};
use relmap::vit::ViTConfig;

fn main() -> relmap::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let train = generate_dataset(&DatasetConfig { per_class: 100, ..Default::default() })?;
    let test_config = DatasetConfig { per_class: 20, seed: 1, ..Default::default() };
    let test = generate_dataset(&test_config)?;
    let (base, _) = pretrain(&ViTConfig::default(), &train, &PretrainConfig { epochs: 10, ..Default::default() }, None)?;

    let config = FinetuneConfig { learning_rate: 3e-5, ..Default::default() };
    let subset = config.class_subset(8);
    let samples = select_finetune_samples(&train, &subset, config.samples_per_class)?;
    let (tuned, report) = finetune_relevance(&base, &samples, &config, None)?;
    let first = &report.epochs[0].losses;
    let last = &report.epochs.last().expect("at least one epoch").losses;
    println!("L_bg {:.4} -> {:.4}, L_fg {:.4} -> {:.4}", first.bg, last.bg, first.fg, last.fg);

    let suite = SplitSuite::build(&test, &test_config, 7)?;
    let r = robustness_report(&tuned, &base, &suite, &subset)?;
    for s in &r.splits {
        println!("{:16} top-1 {:.3} (was {:.3}, delta {:+.3})", s.split, s.top1, s.reference_top1, s.delta_top1);
    }
    let before = segmentation_eval(&base, &test, TargetClassMode::GroundTruth)?;
    let after = segmentation_eval(&tuned, &test, TargetClassMode::GroundTruth)?;
    println!("segmentation mIoU {:.3} -> {:.3}, mAP {:.3} -> {:.3}", before.miou, after.miou, before.map, after.map);
    Ok(())
}
