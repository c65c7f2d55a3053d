//! Accuracy under distribution shift, segmentation quality of relevance
//! maps, ablations and sample-budget sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::relevance::{relevance_map, upsample_map};
use crate::synthdata::{shift_suite, DatasetConfig, Sample, ShiftKind};
use crate::tensor::Tensor;
use crate::trainer::{
    finetune_relevance, select_finetune_samples, ClassificationMode, FinetuneConfig, LossToggles,
    TargetClassMode,
};
use crate::vit::ViTModel;

/// Name of the unshifted test split.
pub const IN_DISTRIBUTION: &str = "in_distribution";

/// True when `label` ranks among the `k` largest logits, breaking ties
/// toward the lower class index.
pub fn in_top_k(logits: &[f32], label: usize, k: usize) -> bool {
    let target = logits[label];
    let ahead = logits
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > target || (v == target && i < label))
        .count();
    ahead < k
}

fn all_logits(model: &ViTModel, samples: &[Sample]) -> Result<Vec<Tensor>> {
    samples.par_iter().map(|s| model.logits(&s.image)).collect()
}

/// Fraction of `samples` whose label is in the model's top `k`.
pub fn topk_accuracy(model: &ViTModel, samples: &[Sample], k: usize) -> Result<f32> {
    let classes = model.config().num_classes;
    if samples.is_empty() {
        return Err(Error::contract("accuracy of an empty sample list"));
    }
    if k == 0 || k > classes {
        return Err(Error::contract(format!("k = {k} outside 1..={classes}")));
    }
    check_label_space(samples, classes)?;
    let hits = all_logits(model, samples)?
        .iter()
        .zip(samples)
        .filter(|(l, s)| in_top_k(l.data(), s.label, k))
        .count();
    Ok(hits as f32 / samples.len() as f32)
}

fn check_label_space(samples: &[Sample], classes: usize) -> Result<()> {
    match samples.iter().find(|s| s.label >= classes) {
        Some(s) => Err(Error::contract(format!("label {} outside 0..{classes}", s.label))),
        None => Ok(()),
    }
}

/// Named evaluation splits sharing one label space.
#[derive(Clone, Debug)]
pub struct SplitSuite {
    pub splits: Vec<(String, Vec<Sample>)>,
}

impl SplitSuite {
    /// The unshifted test set plus one shifted copy per [`ShiftKind`].
    pub fn build(test: &[Sample], config: &DatasetConfig, seed: u64) -> Result<Self> {
        let mut splits = vec![(IN_DISTRIBUTION.to_string(), test.to_vec())];
        for kind in ShiftKind::ALL {
            splits.push((kind.name().to_string(), shift_suite(test, kind, seed, config)?));
        }
        Ok(SplitSuite { splits })
    }

    pub fn get(&self, name: &str) -> Option<&[Sample]> {
        self.splits.iter().find(|(n, _)| n == name).map(|(_, s)| s.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: usize,
    pub count: usize,
    pub accuracy: f32,
    pub reference_accuracy: f32,
    pub delta: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub split: String,
    pub top1: f32,
    pub top5: f32,
    pub reference_top1: f32,
    pub reference_top5: f32,
    pub delta_top1: f32,
    pub per_class: Vec<ClassDelta>,
    /// Top-1 delta over samples of the finetuning classes.
    pub train_classes_delta: Option<f32>,
    /// Top-1 delta over samples of every other class.
    pub heldout_classes_delta: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub train_class_subset: Vec<usize>,
    pub splits: Vec<SplitAccuracy>,
}

impl RobustnessReport {
    pub fn split(&self, name: &str) -> Option<&SplitAccuracy> {
        self.splits.iter().find(|s| s.split == name)
    }
}

fn hits(logits: &[Tensor], samples: &[Sample], k: usize) -> Vec<bool> {
    logits.iter().zip(samples).map(|(l, s)| in_top_k(l.data(), s.label, k)).collect()
}

fn fraction(flags: impl Iterator<Item = bool>) -> Option<f32> {
    let (mut n, mut hit) = (0usize, 0usize);
    for f in flags {
        n += 1;
        hit += f as usize;
    }
    (n > 0).then(|| hit as f32 / n as f32)
}

/// Accuracies of `model` and `reference` on every split, with per-class
/// deltas and the train-class / held-out-class breakdown.
pub fn robustness_report(
    model: &ViTModel,
    reference: &ViTModel,
    suite: &SplitSuite,
    train_class_subset: &[usize],
) -> Result<RobustnessReport> {
    let classes = model.config().num_classes;
    if reference.config().num_classes != classes {
        return Err(Error::contract(format!(
            "models disagree on the label space: {classes} vs {}",
            reference.config().num_classes
        )));
    }
    let k5 = classes.min(5);
    let mut splits = Vec::with_capacity(suite.splits.len());
    for (name, samples) in &suite.splits {
        if samples.is_empty() {
            return Err(Error::contract(format!("split {name} is empty")));
        }
        check_label_space(samples, classes)?;
        let (lm, lr) = (all_logits(model, samples)?, all_logits(reference, samples)?);
        let (m1, r1) = (hits(&lm, samples, 1), hits(&lr, samples, 1));
        let top1 = fraction(m1.iter().copied()).unwrap_or(0.0);
        let ref_top1 = fraction(r1.iter().copied()).unwrap_or(0.0);
        let per_class = (0..classes)
            .filter_map(|c| {
                let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == c).collect();
                let acc = fraction(idx.iter().map(|&i| m1[i]))?;
                let racc = fraction(idx.iter().map(|&i| r1[i]))?;
                Some(ClassDelta { class: c, count: idx.len(), accuracy: acc, reference_accuracy: racc, delta: acc - racc })
            })
            .collect();
        let group_delta = |inside: bool| -> Option<f32> {
            let idx: Vec<usize> = (0..samples.len())
                .filter(|&i| train_class_subset.contains(&samples[i].label) == inside)
                .collect();
            Some(fraction(idx.iter().map(|&i| m1[i]))? - fraction(idx.iter().map(|&i| r1[i]))?)
        };
        splits.push(SplitAccuracy {
            split: name.clone(),
            top1,
            top5: fraction(hits(&lm, samples, k5).into_iter()).unwrap_or(0.0),
            reference_top1: ref_top1,
            reference_top5: fraction(hits(&lr, samples, k5).into_iter()).unwrap_or(0.0),
            delta_top1: top1 - ref_top1,
            per_class,
            train_classes_delta: group_delta(true),
            heldout_classes_delta: group_delta(false),
        });
    }
    Ok(RobustnessReport { train_class_subset: train_class_subset.to_vec(), splits })
}

/// Segmentation quality of relevance maps against pixel masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub pixel_accuracy: f32,
    pub miou: f32,
    pub map: f32,
    /// Images that had both foreground and background and so entered mAP.
    pub ap_images: usize,
}

/// Average precision of `scores` ranking the foreground pixels of `mask`,
/// by trapezoidal integration of the precision-recall curve. Tied scores
/// form one threshold. `None` when the mask is all foreground or all
/// background.
pub fn average_precision(scores: &[f32], mask: &[u8]) -> Option<f64> {
    let positives = mask.iter().filter(|&&m| m == 1).count();
    if positives == 0 || positives == mask.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        while i < order.len() && scores[order[i]] == v {
            tp += mask[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / seen as f64));
    }
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &p in &points {
        area += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
        prev = p;
    }
    Some(area)
}

/// Pixel accuracy and two-class mIoU after thresholding each map at its own
/// mean (strictly greater is foreground), plus per-image mAP.
pub fn segmentation_metrics(maps: &[Tensor], masks: &[Mask]) -> Result<SegReport> {
    if maps.len() != masks.len() || maps.is_empty() {
        return Err(Error::contract(format!(
            "{} relevance maps for {} masks",
            maps.len(),
            masks.len()
        )));
    }
    let (mut agree, mut total) = (0usize, 0usize);
    // [intersection, union] for background and foreground
    let mut iou = [[0usize; 2]; 2];
    let (mut ap_sum, mut ap_images) = (0.0f64, 0usize);
    for (map, mask) in maps.iter().zip(masks) {
        if map.numel() != mask.height * mask.width {
            return Err(Error::dim(format!(
                "relevance map {:?} does not match {}x{} mask",
                map.shape(),
                mask.height,
                mask.width
            )));
        }
        let values = map.data();
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        for (&v, &m) in values.iter().zip(&mask.data) {
            let pred = ((v as f64) > mean) as usize;
            let truth = m as usize;
            agree += (pred == truth) as usize;
            total += 1;
            for (class, counts) in iou.iter_mut().enumerate() {
                let (p, t) = (pred == class, truth == class);
                counts[0] += (p && t) as usize;
                counts[1] += (p || t) as usize;
            }
        }
        if let Some(ap) = average_precision(values, &mask.data) {
            ap_sum += ap;
            ap_images += 1;
        }
    }
    let class_iou = |c: [usize; 2]| if c[1] == 0 { 1.0 } else { c[0] as f64 / c[1] as f64 };
    Ok(SegReport {
        pixel_accuracy: (agree as f64 / total as f64) as f32,
        miou: ((class_iou(iou[0]) + class_iou(iou[1])) / 2.0) as f32,
        map: if ap_images > 0 { (ap_sum / ap_images as f64) as f32 } else { 0.0 },
        ap_images,
    })
}

/// Pixel-resolution relevance maps of `model` for every masked sample.
pub fn relevance_maps(
    model: &ViTModel,
    samples: &[Sample],
    target: TargetClassMode,
) -> Result<Vec<Tensor>> {
    samples
        .par_iter()
        .map(|s| {
            let class = match target {
                TargetClassMode::GroundTruth => s.label,
                TargetClassMode::Predicted => crate::objectives::argmax(model.logits(&s.image)?.data()),
            };
            let map = relevance_map(model, &s.image, class)?;
            upsample_map(&map, s.image.shape()[0], s.image.shape()[1])
        })
        .collect()
}

/// Segmentation metrics of `model`'s relevance maps over the masked samples.
pub fn segmentation_eval(
    model: &ViTModel,
    samples: &[Sample],
    target: TargetClassMode,
) -> Result<SegReport> {
    let masked: Vec<Sample> = samples.iter().filter(|s| s.mask.is_some()).cloned().collect();
    if masked.is_empty() {
        return Err(Error::contract("segmentation evaluation needs masked samples"));
    }
    let maps = relevance_maps(model, &masked, target)?;
    let masks: Vec<Mask> = masked.into_iter().map(|s| s.mask.unwrap()).collect();
    segmentation_metrics(&maps, &masks)
}

/// One configuration of an ablation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSetting {
    pub name: String,
    /// `false` evaluates the base model unchanged.
    pub finetune: bool,
    pub loss_toggles: LossToggles,
    pub classification_mode: ClassificationMode,
}

impl AblationSetting {
    fn new(name: &str, toggles: LossToggles, mode: ClassificationMode) -> Self {
        AblationSetting { name: name.into(), finetune: true, loss_toggles: toggles, classification_mode: mode }
    }

    /// Original, full, and one row per removed term or swapped classifier loss.
    pub fn standard_rows() -> Vec<AblationSetting> {
        let on = LossToggles::default();
        let conf = ClassificationMode::Confidence;
        vec![
            AblationSetting { finetune: false, ..Self::new("original", on, conf) },
            Self::new("full", on, conf),
            Self::new("without_classification", LossToggles { use_classification: false, ..on }, conf),
            Self::new("without_bg", LossToggles { use_bg: false, ..on }, conf),
            Self::new("without_fg", LossToggles { use_fg: false, ..on }, conf),
            Self::new("with_ground_truth", on, ClassificationMode::GroundTruthCe),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub weights_hash: String,
    pub in_distribution_delta: f32,
    pub background_swap_delta: f32,
    pub report: RobustnessReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub base_weights_hash: String,
    pub rows: Vec<AblationRow>,
}

fn delta(report: &RobustnessReport, split: &str) -> f32 {
    report.split(split).map(|s| s.delta_top1).unwrap_or(0.0)
}

/// Finetunes `base` once per setting and reports each against `base`.
pub fn ablation_suite(
    base: &ViTModel,
    finetune_samples: &[Sample],
    config: &FinetuneConfig,
    settings: &[AblationSetting],
    suite: &SplitSuite,
) -> Result<AblationReport> {
    let subset = config.class_subset(base.config().num_classes);
    let mut rows = Vec::with_capacity(settings.len());
    for setting in settings {
        let model = if setting.finetune {
            let cfg = FinetuneConfig {
                loss_toggles: setting.loss_toggles,
                classification_mode: setting.classification_mode,
                ..config.clone()
            };
            finetune_relevance(base, finetune_samples, &cfg, None)?.0
        } else {
            base.clone()
        };
        let report = robustness_report(&model, base, suite, &subset)?;
        log::info!(
            "ablation {}: in-dist {:+.3} bg-swap {:+.3}",
            setting.name,
            delta(&report, IN_DISTRIBUTION),
            delta(&report, ShiftKind::BackgroundSwap.name())
        );
        rows.push(AblationRow {
            setting: setting.clone(),
            weights_hash: model.weights_hash(),
            in_distribution_delta: delta(&report, IN_DISTRIBUTION),
            background_swap_delta: delta(&report, ShiftKind::BackgroundSwap.name()),
            report,
        });
    }
    Ok(AblationReport { base_weights_hash: base.weights_hash(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub samples_per_class: usize,
    pub class_count: usize,
    pub in_distribution_delta: f32,
    pub background_swap_delta: f32,
    pub train_classes_delta: Option<f32>,
    pub heldout_classes_delta: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f32>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "samples_per_class,class_count,in_distribution_delta,background_swap_delta,train_classes_delta,heldout_classes_delta\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.samples_per_class,
                c.class_count,
                c.in_distribution_delta,
                c.background_swap_delta,
                opt(c.train_classes_delta),
                opt(c.heldout_classes_delta)
            ));
        }
        out
    }
}

/// One finetune per (samples per class, number of classes) pair. The
/// classes are the first `class_count` labels; samples come from `pool`.
pub fn sensitivity_sweep(
    base: &ViTModel,
    pool: &[Sample],
    samples_per_class: &[usize],
    class_counts: &[usize],
    config: &FinetuneConfig,
    suite: &SplitSuite,
) -> Result<SweepReport> {
    if samples_per_class.is_empty() || class_counts.is_empty() {
        return Err(Error::contract("sweep lists must be nonempty"));
    }
    let classes = base.config().num_classes;
    let mut cells = Vec::with_capacity(samples_per_class.len() * class_counts.len());
    for &n in samples_per_class {
        for &c in class_counts {
            if c == 0 || c > classes {
                return Err(Error::contract(format!("class count {c} outside 1..={classes}")));
            }
            let subset: Vec<usize> = (0..c).collect();
            let cfg = FinetuneConfig {
                samples_per_class: n,
                train_class_subset: Some(subset.clone()),
                ..config.clone()
            };
            let samples = select_finetune_samples(pool, &subset, n)?;
            let (model, _) = finetune_relevance(base, &samples, &cfg, None)?;
            let report = robustness_report(&model, base, suite, &subset)?;
            let bg = report.split(ShiftKind::BackgroundSwap.name());
            cells.push(SweepCell {
                samples_per_class: n,
                class_count: c,
                in_distribution_delta: delta(&report, IN_DISTRIBUTION),
                background_swap_delta: delta(&report, ShiftKind::BackgroundSwap.name()),
                train_classes_delta: bg.and_then(|s| s.train_classes_delta),
                heldout_classes_delta: bg.and_then(|s| s.heldout_classes_delta),
            });
        }
    }
    Ok(SweepReport { cells })
}
