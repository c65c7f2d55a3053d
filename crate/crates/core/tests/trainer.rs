use proptest::prelude::*;
use relmap::image::Mask;
use relmap::synthdata::{generate_dataset, DatasetConfig, Sample};
use relmap::tensor::Tensor;
use relmap::trainer::{
    finetune_objective, finetune_relevance, lr_grid_search, optimizer_step,
    select_finetune_samples, AdamState, FinetuneConfig, LossToggles, Method, OptimizerConfig,
};
use relmap::vit::{ViTConfig, ViTModel};
use relmap::Error;

fn tiny() -> ViTConfig {
    ViTConfig { image_size: 16, patch_size: 8, embed_dim: 16, depth: 2, heads: 2, mlp_ratio: 2, num_classes: 8 }
}

fn data() -> Vec<Sample> {
    generate_dataset(&DatasetConfig { per_class: 2, image_size: 16, seed: 3, ..Default::default() }).unwrap()
}

fn config() -> FinetuneConfig {
    FinetuneConfig {
        epochs: 2,
        samples_per_class: 1,
        train_class_subset: Some(vec![0, 1]),
        learning_rate: 1e-3,
        ..Default::default()
    }
}

fn pick(d: &[Sample], cfg: &FinetuneConfig) -> Vec<Sample> {
    select_finetune_samples(d, &cfg.class_subset(8), cfg.samples_per_class).unwrap()
}

#[test]
fn first_optimizer_step_moves_by_lr() {
    // bias correction makes the first update lr * g / (|g| + eps)
    let mut w = vec![Tensor::new(&[3], vec![1.0, -1.0, 0.5]).unwrap()];
    let g = vec![Tensor::new(&[3], vec![0.2, -4.0, 0.0]).unwrap()];
    let mut state = AdamState::new(&w);
    optimizer_step(&mut w, &g, &mut state, &OptimizerConfig::with_lr(0.1)).unwrap();
    let expected = [1.0 - 0.1 * 0.2 / (0.2 + 1e-8), -1.0 + 0.1 * 4.0 / (4.0 + 1e-8), 0.5];
    for (a, e) in w[0].data().iter().zip(expected) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
    assert_eq!(state.step, 1);
}

#[test]
fn weight_decay_is_decoupled() {
    let mut w = vec![Tensor::new(&[1], vec![2.0]).unwrap()];
    let g = vec![Tensor::zeros(&[1])];
    let mut state = AdamState::new(&w);
    let cfg = OptimizerConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
    optimizer_step(&mut w, &g, &mut state, &cfg).unwrap();
    assert!((w[0].data()[0] - 2.0 * 0.95).abs() < 1e-6);
}

#[test]
fn zero_gradient_is_a_no_op() {
    let mut w = vec![Tensor::new(&[2], vec![0.3, -0.7]).unwrap()];
    let before = w.clone();
    let mut state = AdamState::new(&w);
    for _ in 0..3 {
        optimizer_step(&mut w, &[Tensor::zeros(&[2])], &mut state, &OptimizerConfig::default()).unwrap();
    }
    assert_eq!(w, before);
}

#[test]
fn mismatched_gradients_are_rejected() {
    let mut w = vec![Tensor::zeros(&[2])];
    let mut state = AdamState::new(&w);
    let r = optimizer_step(&mut w, &[Tensor::zeros(&[3])], &mut state, &OptimizerConfig::default());
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn all_terms_off_leaves_weights_unchanged() {
    let base = ViTModel::init(tiny(), 1).unwrap();
    let d = data();
    for method in [Method::Ours, Method::Gradmask, Method::Rrr] {
        let cfg = FinetuneConfig { loss_toggles: LossToggles::all_off(), method, ..config() };
        let (tuned, report) = finetune_relevance(&base, &pick(&d, &cfg), &cfg, None).unwrap();
        assert_eq!(tuned.weights_hash(), base.weights_hash(), "{method:?}");
        assert_eq!(report.optimizer_steps, 2);
    }
}

#[test]
fn finetuning_is_deterministic_and_moves_weights() {
    let base = ViTModel::init(tiny(), 2).unwrap();
    let d = data();
    let cfg = config();
    let (a, ra) = finetune_relevance(&base, &pick(&d, &cfg), &cfg, None).unwrap();
    let (b, rb) = finetune_relevance(&base, &pick(&d, &cfg), &cfg, None).unwrap();
    assert_eq!(a.weights_hash(), b.weights_hash());
    // wall-clock time is the only field left out of the serialized form
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    assert_ne!(a.weights_hash(), base.weights_hash());
    assert_eq!(ra.epochs.len(), 2);
}

#[test]
fn baselines_run_and_record_penalties() {
    let base = ViTModel::init(tiny(), 2).unwrap();
    let d = data();
    for method in [Method::Gradmask, Method::Rrr] {
        let cfg = FinetuneConfig { method, ..config() };
        let (_, report) = finetune_relevance(&base, &pick(&d, &cfg), &cfg, None).unwrap();
        let l = &report.epochs[0].losses;
        assert!(l.ce_gt.is_some());
        assert_eq!(l.gradmask.is_some(), method == Method::Gradmask);
        assert_eq!(l.rrr.is_some(), method == Method::Rrr);
    }
}

#[test]
fn missing_mask_and_foreign_class_are_contract_errors() {
    let base = ViTModel::init(tiny(), 0).unwrap();
    let d = data();
    let cfg = config();
    let mut samples = pick(&d, &cfg);
    samples[0].mask = None;
    assert!(matches!(finetune_relevance(&base, &samples, &cfg, None), Err(Error::Contract(_))));
    assert!(matches!(finetune_objective(&base, &samples[0], &cfg), Err(Error::Contract(_))));

    let mut samples = pick(&d, &cfg);
    samples[1] = d.iter().find(|s| s.label == 5).unwrap().clone();
    assert!(matches!(finetune_relevance(&base, &samples, &cfg, None), Err(Error::Contract(_))));

    assert!(select_finetune_samples(&d, &[0], 3).is_err());
}

#[test]
fn zero_learning_rate_qualifies() {
    let base = ViTModel::init(tiny(), 0).unwrap();
    let d = data();
    let cfg = config();
    let validation: Vec<Sample> = d.iter().skip(1).step_by(2).cloned().collect();
    let report = lr_grid_search(&base, &[0.0], &cfg, &pick(&d, &cfg), &validation).unwrap();
    assert_eq!(report.chosen, 0.0);
    assert!(!report.fallback);
    assert!(report.candidates[0].qualifies);
    assert!(lr_grid_search(&base, &[], &cfg, &pick(&d, &cfg), &validation).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // with both relevance terms off the mask cannot reach the update
    #[test]
    fn disabled_terms_ignore_mask_changes(flips in prop::collection::vec(0usize..256, 1..40)) {
        let model = ViTModel::init(tiny(), 4).unwrap();
        let sample = data()[0].clone();
        let mut other = sample.clone();
        let m = other.mask.as_mut().unwrap();
        for f in flips {
            m.data[f] ^= 1;
        }
        let cfg = FinetuneConfig {
            loss_toggles: LossToggles { use_bg: false, use_fg: false, use_classification: true },
            ..config()
        };
        let a = finetune_objective(&model, &sample, &cfg).unwrap();
        let b = finetune_objective(&model, &other, &cfg).unwrap();
        prop_assert_eq!(a.grads, b.grads);
        prop_assert_eq!(a.losses.total, b.losses.total);
        prop_assert_eq!(a.losses.relevance, 0.0);
    }

    #[test]
    fn breakdown_total_matches_enabled_terms(bg in any::<bool>(), fg in any::<bool>(), cls in any::<bool>()) {
        let model = ViTModel::init(tiny(), 5).unwrap();
        let sample = data()[2].clone();
        let toggles = LossToggles { use_bg: bg, use_fg: fg, use_classification: cls };
        let cfg = FinetuneConfig { loss_toggles: toggles, ..config() };
        let step = finetune_objective(&model, &sample, &cfg).unwrap();
        let l = &step.losses;
        let w = cfg.weights;
        let rel = if bg { w.bg * l.bg } else { 0.0 } + if fg { w.fg * l.fg } else { 0.0 };
        let total = w.relevance * rel + if cls { w.classification * l.classification } else { 0.0 };
        prop_assert!((l.relevance - rel).abs() < 1e-6);
        prop_assert!((l.total - total).abs() < 1e-6);
        prop_assert_eq!(step.grads.is_some(), bg || fg || cls);
    }
}

#[test]
fn masks_must_match_image() {
    let base = ViTModel::init(tiny(), 0).unwrap();
    let mut s = data()[0].clone();
    s.mask = Some(Mask::filled(8, 8, 1));
    assert!(finetune_objective(&base, &s, &config()).is_err());
}
