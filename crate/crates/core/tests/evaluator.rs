use relmap::evaluator::{
    ablation_suite, average_precision, in_top_k, robustness_report, segmentation_metrics,
    sensitivity_sweep, topk_accuracy, AblationSetting, SplitSuite, IN_DISTRIBUTION,
};
use relmap::image::Mask;
use relmap::synthdata::{generate_dataset, DatasetConfig, Sample};
use relmap::tensor::Tensor;
use relmap::trainer::{select_finetune_samples, FinetuneConfig};
use relmap::vit::{ViTConfig, ViTModel};

fn tiny() -> ViTConfig {
    ViTConfig { image_size: 16, patch_size: 8, embed_dim: 16, depth: 1, heads: 2, mlp_ratio: 2, num_classes: 8 }
}

fn dataset_config() -> DatasetConfig {
    DatasetConfig { per_class: 3, image_size: 16, seed: 11, ..Default::default() }
}

fn data() -> Vec<Sample> {
    generate_dataset(&dataset_config()).unwrap()
}

#[test]
fn top_k_membership() {
    let l = [0.1, 0.9, 0.5, 0.5];
    assert!(in_top_k(&l, 1, 1));
    assert!(!in_top_k(&l, 2, 1));
    assert!(in_top_k(&l, 2, 2));
    // ties go to the lower index
    assert!(!in_top_k(&l, 3, 2));
    assert!(in_top_k(&l, 0, 4));
}

#[test]
fn accuracy_contract() {
    let m = ViTModel::init(tiny(), 0).unwrap();
    let d = data();
    assert!(topk_accuracy(&m, &[], 1).is_err());
    assert!(topk_accuracy(&m, &d, 0).is_err());
    assert!(topk_accuracy(&m, &d, 9).is_err());
    assert_eq!(topk_accuracy(&m, &d, 8).unwrap(), 1.0);
}

#[test]
fn untrained_model_is_near_chance() {
    let d = generate_dataset(&DatasetConfig { per_class: 40, image_size: 16, seed: 2, ..Default::default() }).unwrap();
    let mean: f32 = (0..6)
        .map(|s| topk_accuracy(&ViTModel::init(tiny(), s).unwrap(), &d, 1).unwrap())
        .sum::<f32>()
        / 6.0;
    assert!((mean - 0.125).abs() < 0.08, "mean accuracy {mean}");
}

#[test]
fn self_comparison_has_zero_deltas() {
    let m = ViTModel::init(tiny(), 1).unwrap();
    let suite = SplitSuite::build(&data(), &dataset_config(), 3).unwrap();
    assert_eq!(suite.splits.len(), 5);
    let r = robustness_report(&m, &m, &suite, &[0, 1]).unwrap();
    for s in &r.splits {
        assert_eq!(s.delta_top1, 0.0);
        assert_eq!(s.train_classes_delta, Some(0.0));
        assert_eq!(s.heldout_classes_delta, Some(0.0));
        assert!(s.per_class.iter().all(|c| c.delta == 0.0));
    }
}

#[test]
fn per_class_counts_aggregate_to_split_accuracy() {
    let m = ViTModel::init(tiny(), 2).unwrap();
    let r0 = ViTModel::init(tiny(), 3).unwrap();
    let suite = SplitSuite::build(&data(), &dataset_config(), 3).unwrap();
    let r = robustness_report(&m, &r0, &suite, &[0, 1, 2]).unwrap();
    for s in &r.splits {
        let n: usize = s.per_class.iter().map(|c| c.count).sum();
        let hits: f32 = s.per_class.iter().map(|c| c.accuracy * c.count as f32).sum();
        assert!((hits / n as f32 - s.top1).abs() < 1e-5, "{}", s.split);
        assert!((s.top1 - s.reference_top1 - s.delta_top1).abs() < 1e-6);
    }
    assert!(r.split(IN_DISTRIBUTION).is_some());
}

fn map(values: &[f32]) -> Tensor {
    Tensor::new(&[2, 2], values.to_vec()).unwrap()
}

#[test]
fn segmentation_extremes() {
    let mask = Mask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
    let perfect = segmentation_metrics(&[map(&[1.0, 0.0, 0.0, 1.0])], std::slice::from_ref(&mask)).unwrap();
    assert_eq!((perfect.pixel_accuracy, perfect.miou, perfect.map), (1.0, 1.0, 1.0));
    let inverted = segmentation_metrics(&[map(&[0.0, 1.0, 1.0, 0.0])], std::slice::from_ref(&mask)).unwrap();
    assert_eq!((inverted.pixel_accuracy, inverted.miou), (0.0, 0.0));
    assert!(inverted.map < 1.0);
    // a constant map never exceeds its own mean: everything is background
    let flat = segmentation_metrics(&[map(&[0.3; 4])], std::slice::from_ref(&mask)).unwrap();
    assert_eq!(flat.pixel_accuracy, 0.5);
    assert!((flat.miou - 0.25).abs() < 1e-6);
    assert!((flat.map - 0.5).abs() < 1e-6);
    assert!(segmentation_metrics(&[], &[]).is_err());
    assert!(segmentation_metrics(&[Tensor::zeros(&[3, 3])], &[mask]).is_err());
}

#[test]
fn average_precision_hand_case() {
    // ranking fg, bg, fg gives (recall, precision) points (0.5, 1), (0.5, 0.5), (1, 2/3)
    let ap = average_precision(&[0.9, 0.5, 0.1], &[1, 0, 1]).unwrap();
    let expected = 0.5 * 1.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
    assert!((ap - expected).abs() < 1e-12);
    assert_eq!(average_precision(&[0.1, 0.2], &[1, 1]), None);
}

#[test]
fn ablation_and_sweep_shapes() {
    let base = ViTModel::init(tiny(), 4).unwrap();
    let d = data();
    let suite = SplitSuite::build(&d, &dataset_config(), 5).unwrap();
    let cfg = FinetuneConfig { epochs: 1, samples_per_class: 1, train_class_subset: Some(vec![0, 1]), ..Default::default() };
    let samples = select_finetune_samples(&d, &[0, 1], 1).unwrap();
    let rows = AblationSetting::standard_rows();
    let report = ablation_suite(&base, &samples, &cfg, &rows, &suite).unwrap();
    assert_eq!(report.rows.len(), rows.len());
    assert_eq!(report.rows[0].weights_hash, report.base_weights_hash);
    assert_eq!(report.rows[0].background_swap_delta, 0.0);

    let sweep = sensitivity_sweep(&base, &d, &[1, 2], &[2, 3, 4], &cfg, &suite).unwrap();
    assert_eq!(sweep.cells.len(), 6);
    let csv = sweep.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("samples_per_class,class_count,"));
    assert!(sensitivity_sweep(&base, &d, &[1], &[9], &cfg, &suite).is_err());
    assert!(sensitivity_sweep(&base, &d, &[], &[2], &cfg, &suite).is_err());
}
