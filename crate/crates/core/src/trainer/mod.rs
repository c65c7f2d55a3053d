//! Pretraining, relevance-guided finetuning, baseline finetuning and the
//! learning-rate selection rule.
//!
//! Training is single-threaded and fully determined by the config and seed:
//! batches are drawn from seeded shuffles and per-sample gradients are summed
//! in batch order.

mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::topk_accuracy;
use crate::objectives::{
    argmax, gradmask_direction, loss_bg, loss_ce_ground_truth, loss_confidence, loss_fg,
    loss_gradmask, loss_rrr, rrr_direction, LossBreakdown, LossWeights, PatchMask,
};
use crate::relevance::relevance_on_tape;
use crate::synthdata::{item_rng, Sample};
use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::vit::{ViTConfig, ViTModel};

pub use optim::{optimizer_step, AdamState, OptimizerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClassMode {
    Predicted,
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationMode {
    /// Cross-entropy against the model's own prediction.
    Confidence,
    /// Cross-entropy against the label.
    GroundTruthCe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Gradmask,
    Rrr,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Method::Ours),
            "gradmask" => Ok(Method::Gradmask),
            "rrr" => Ok(Method::Rrr),
            _ => Err(Error::Config(format!("unknown method {s:?} (ours, gradmask, rrr)"))),
        }
    }
}

/// Independent switches for each loss term. A disabled term is never
/// added to the optimized total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossToggles {
    pub use_bg: bool,
    pub use_fg: bool,
    pub use_classification: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles { use_bg: true, use_fg: true, use_classification: true }
    }
}

impl LossToggles {
    pub fn all_off() -> Self {
        LossToggles { use_bg: false, use_fg: false, use_classification: false }
    }
}

/// Weights of the gradient-penalty baselines. Both use ground-truth
/// cross-entropy as their classification term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineWeights {
    pub gradmask_bg: f32,
    pub gradmask_classification: f32,
    pub rrr_bg: f32,
    pub rrr_classification: f32,
    /// Input-space step of the central difference that turns the
    /// gradient penalty into a weight gradient.
    pub input_step: f32,
}

impl Default for BaselineWeights {
    fn default() -> Self {
        BaselineWeights {
            gradmask_bg: 50.0,
            gradmask_classification: 3e-9,
            rrr_bg: 1e-10,
            rrr_classification: 2e-6,
            input_step: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f32,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    /// Probability mass spread uniformly over all classes in the target.
    pub label_smoothing: f32,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            weight_decay: 0.0,
            cosine_decay: true,
            label_smoothing: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub samples_per_class: usize,
    /// Classes whose samples are used for finetuning; `None` means the
    /// first half of the label space.
    pub train_class_subset: Option<Vec<usize>>,
    pub seed: u64,
    pub target_class_mode: TargetClassMode,
    pub loss_toggles: LossToggles,
    pub classification_mode: ClassificationMode,
    pub method: Method,
    pub baseline: BaselineWeights,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 8,
            weights: LossWeights::default(),
            samples_per_class: 3,
            train_class_subset: None,
            seed: 0,
            target_class_mode: TargetClassMode::Predicted,
            loss_toggles: LossToggles::default(),
            classification_mode: ClassificationMode::Confidence,
            method: Method::Ours,
            baseline: BaselineWeights::default(),
        }
    }
}

impl FinetuneConfig {
    /// The finetuning classes for a model with `num_classes` outputs.
    pub fn class_subset(&self, num_classes: usize) -> Vec<usize> {
        match &self.train_class_subset {
            Some(s) => s.clone(),
            None => (0..num_classes / 2).collect(),
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be at least 1".into()));
        }
        let subset = self.class_subset(num_classes);
        if subset.is_empty() {
            return Err(Error::Config("train_class_subset is empty".into()));
        }
        if let Some(&c) = subset.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Config(format!("subset class {c} outside 0..{num_classes}")));
        }
        Ok(())
    }
}

/// Metrics recorded at the end of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's samples, measured before each step.
    pub losses: LossBreakdown,
    pub train_accuracy: f32,
    pub validation_accuracy: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub initial_validation_accuracy: Option<f32>,
    pub samples_per_epoch: usize,
    pub optimizer_steps: u64,
    pub weights_hash: String,
    /// Set by callers that save the final weights.
    pub checkpoint: Option<String>,
    /// Excluded from serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

fn param_grads(grads: &Gradients, params: &[Var<'_>]) -> Vec<Tensor> {
    params.iter().map(|&p| grads.wrt(p)).collect()
}

fn zeros_like(model: &ViTModel) -> Vec<Tensor> {
    model.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
}

fn add_scaled(acc: &mut [Tensor], g: &[Tensor], scale: f32) {
    for (a, g) in acc.iter_mut().zip(g) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += scale * y;
        }
    }
}

fn check_labels(samples: &[Sample], num_classes: usize) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
        return Err(Error::contract(format!("label {} outside 0..{num_classes}", s.label)));
    }
    Ok(())
}

fn shuffled_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut item_rng(seed, epoch as u64));
    order
}

fn validation_accuracy(model: &ViTModel, validation: Option<&[Sample]>) -> Result<Option<f32>> {
    validation
        .filter(|v| !v.is_empty())
        .map(|v| topk_accuracy(model, v, 1))
        .transpose()
}

fn smoothed_cross_entropy<'t>(logits: Var<'t>, label: usize, smoothing: f32) -> Result<Var<'t>> {
    let ce = loss_ce_ground_truth(logits, label)?;
    if smoothing == 0.0 {
        return Ok(ce);
    }
    let k = logits.numel() as f32;
    let uniform = logits.log_softmax()?.sum().scale(-1.0 / k);
    ce.scale(1.0 - smoothing).add(uniform.scale(smoothing))
}

/// Trains a fresh model with ground-truth cross-entropy.
pub fn pretrain(
    model_config: &ViTConfig,
    dataset: &[Sample],
    config: &PretrainConfig,
    validation: Option<&[Sample]>,
) -> Result<(ViTModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::contract("pretraining needs a nonempty dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    check_labels(dataset, model_config.num_classes)?;
    let start = Instant::now();
    let mut model = ViTModel::init(model_config.clone(), config.seed)?;
    let mut opt = OptimizerConfig {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        ..Default::default()
    };
    let mut state = AdamState::new(model.params());
    let mut epochs = Vec::with_capacity(config.epochs);
    let total_steps = (config.epochs * dataset.len().div_ceil(config.batch_size)) as f32;
    for epoch in 0..config.epochs {
        let order = shuffled_order(dataset.len(), config.seed, epoch);
        let mut losses = Vec::with_capacity(dataset.len());
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc = zeros_like(&model);
            for &i in batch {
                let s = &dataset[i];
                let tape = Tape::new();
                let f = model.forward_on(&tape, tape.constant(s.image.clone()), true)?;
                correct += (argmax(f.logits.value().data()) == s.label) as usize;
                let ce = smoothed_cross_entropy(f.logits, s.label, config.label_smoothing)?;
                let value = ce.value().item();
                add_scaled(&mut acc, &param_grads(&tape.backward(ce)?, &f.params), 1.0);
                losses.push(LossBreakdown {
                    classification: value,
                    total: value,
                    ce_gt: Some(value),
                    ..Default::default()
                });
            }
            let inv = 1.0 / batch.len() as f32;
            acc.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= inv));
            if config.cosine_decay {
                let progress = state.step as f32 / total_steps;
                opt.lr = config.learning_rate * 0.5 * (1.0 + (std::f32::consts::PI * progress).cos());
            }
            optimizer_step(model.params_mut(), &acc, &mut state, &opt)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            losses: LossBreakdown::mean(&losses),
            train_accuracy: correct as f32 / dataset.len() as f32,
            validation_accuracy: validation_accuracy(&model, validation)?,
        };
        log::info!(
            "pretrain epoch {}: ce {:.4} train acc {:.3} val {:?}",
            record.epoch,
            record.losses.total,
            record.train_accuracy,
            record.validation_accuracy
        );
        epochs.push(record);
    }
    let report = TrainReport {
        epochs,
        initial_validation_accuracy: None,
        samples_per_epoch: dataset.len(),
        optimizer_steps: state.step,
        weights_hash: model.weights_hash(),
        checkpoint: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// The first `samples_per_class` masked samples of every subset class, in
/// dataset order.
pub fn select_finetune_samples(
    samples: &[Sample],
    subset: &[usize],
    samples_per_class: usize,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(subset.len() * samples_per_class);
    for &class in subset {
        let picked: Vec<&Sample> = samples
            .iter()
            .filter(|s| s.label == class && s.mask.is_some())
            .take(samples_per_class)
            .collect();
        if picked.len() < samples_per_class {
            return Err(Error::contract(format!(
                "class {class} has {} masked samples, {samples_per_class} needed",
                picked.len()
            )));
        }
        out.extend(picked.into_iter().cloned());
    }
    Ok(out)
}

/// Loss values and weight gradient of one finetuning sample.
#[derive(Clone, Debug)]
pub struct SampleStep {
    pub losses: LossBreakdown,
    /// `None` when every term is disabled.
    pub grads: Option<Vec<Tensor>>,
    pub correct: bool,
}

/// Evaluates the configured finetuning objective on one sample.
pub fn finetune_objective(
    model: &ViTModel,
    sample: &Sample,
    config: &FinetuneConfig,
) -> Result<SampleStep> {
    let mask = sample
        .mask
        .as_ref()
        .ok_or_else(|| Error::contract("finetuning sample has no foreground mask"))?;
    match config.method {
        Method::Ours => relevance_objective(model, sample, mask, config),
        Method::Gradmask | Method::Rrr => gradient_penalty_objective(model, sample, mask, config),
    }
}

fn relevance_objective(
    model: &ViTModel,
    sample: &Sample,
    mask: &crate::image::Mask,
    config: &FinetuneConfig,
) -> Result<SampleStep> {
    let (w, t) = (&config.weights, &config.loss_toggles);
    let tape = Tape::new();
    let f = model.forward_on(&tape, tape.constant(sample.image.clone()), true)?;
    let predicted = argmax(f.logits.value().data());
    let target = match config.target_class_mode {
        TargetClassMode::Predicted => predicted,
        TargetClassMode::GroundTruth => sample.label,
    };
    let relevance = relevance_on_tape(&tape, &f, target)?;
    let patch_mask = PatchMask::from_pixels(mask, model.config().patch_size)?;
    let bg = loss_bg(relevance, &patch_mask)?;
    let fg = loss_fg(relevance, &patch_mask)?;
    let cls = match config.classification_mode {
        ClassificationMode::Confidence => loss_confidence(f.logits)?,
        ClassificationMode::GroundTruthCe => loss_ce_ground_truth(f.logits, sample.label)?,
    };

    let mut terms: Vec<Var<'_>> = Vec::new();
    if t.use_bg {
        terms.push(bg.scale(w.relevance * w.bg));
    }
    if t.use_fg {
        terms.push(fg.scale(w.relevance * w.fg));
    }
    if t.use_classification {
        terms.push(cls.scale(w.classification));
    }
    let (bg_v, fg_v, cls_v) = (bg.value().item(), fg.value().item(), cls.value().item());
    let on = |flag: bool, v: f32| if flag { v } else { 0.0 };
    let rel_v = w.bg * on(t.use_bg, bg_v) + w.fg * on(t.use_fg, fg_v);
    let losses = LossBreakdown {
        bg: bg_v,
        fg: fg_v,
        relevance: rel_v,
        classification: cls_v,
        total: w.relevance * rel_v + w.classification * on(t.use_classification, cls_v),
        ..Default::default()
    };
    let grads = match terms.split_first() {
        None => None,
        Some((first, rest)) => {
            let mut total = *first;
            for term in rest {
                total = total.add(*term)?;
            }
            Some(param_grads(&tape.backward(total)?, &f.params))
        }
    };
    Ok(SampleStep { losses, grads, correct: predicted == sample.label })
}

/// The scalar whose input gradient a baseline penalizes.
fn explained_output<'t>(logits: Var<'t>, method: Method, label: usize) -> Result<Var<'t>> {
    match method {
        Method::Rrr => Ok(logits.log_softmax()?.sum()),
        _ => logits.slice(0, label, 1),
    }
}

/// Gradient of the explained output with respect to the input image.
pub fn input_gradient(model: &ViTModel, image: &Tensor, method: Method, label: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.var(image.clone());
    let f = model.forward_on(&tape, x, false)?;
    let out = explained_output(f.logits, method, label)?;
    Ok(tape.backward_for(out, &[x])?.wrt(x))
}

fn output_weight_gradient(model: &ViTModel, image: &Tensor, method: Method, label: usize) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let f = model.forward_on(&tape, tape.constant(image.clone()), true)?;
    let out = explained_output(f.logits, method, label)?;
    Ok(param_grads(&tape.backward(out)?, &f.params))
}

// The penalty depends on the weights through the input gradient g. With
// v = dL/dg held fixed, dL/dθ = d/dθ (v · g), and v · g is the directional
// derivative of the explained output along v, taken here as a central
// difference in input space.
fn gradient_penalty_objective(
    model: &ViTModel,
    sample: &Sample,
    mask: &crate::image::Mask,
    config: &FinetuneConfig,
) -> Result<SampleStep> {
    let t = &config.loss_toggles;
    let b = &config.baseline;
    let (lambda_bg, lambda_cls) = match config.method {
        Method::Gradmask => (b.gradmask_bg, b.gradmask_classification),
        _ => (b.rrr_bg, b.rrr_classification),
    };
    let g = input_gradient(model, &sample.image, config.method, sample.label)?;
    let (penalty, direction) = match config.method {
        Method::Gradmask => (loss_gradmask(&g, mask)?, gradmask_direction(&g, mask)?),
        _ => (loss_rrr(&g, mask)?, rrr_direction(&g, mask)?),
    };

    let tape = Tape::new();
    let f = model.forward_on(&tape, tape.constant(sample.image.clone()), true)?;
    let predicted = argmax(f.logits.value().data());
    let ce = loss_ce_ground_truth(f.logits, sample.label)?;
    let ce_v = ce.value().item();

    let mut grads: Option<Vec<Tensor>> = None;
    if t.use_classification {
        let mut acc = param_grads(&tape.backward(ce)?, &f.params);
        acc.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= lambda_cls));
        grads = Some(acc);
    }
    if t.use_bg {
        let acc = grads.get_or_insert_with(|| zeros_like(model));
        let norm = direction.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            let h = b.input_step;
            let shifted = |sign: f32| {
                let data = sample
                    .image
                    .data()
                    .iter()
                    .zip(direction.data())
                    .map(|(x, d)| x + sign * h * (*d as f64 / norm) as f32)
                    .collect();
                Tensor::new(sample.image.shape(), data)
            };
            let plus = output_weight_gradient(model, &shifted(1.0)?, config.method, sample.label)?;
            let minus = output_weight_gradient(model, &shifted(-1.0)?, config.method, sample.label)?;
            let scale = lambda_bg * (norm / (2.0 * h as f64)) as f32;
            add_scaled(acc, &plus, scale);
            add_scaled(acc, &minus, -scale);
        }
    }
    let on = |flag: bool, v: f32| if flag { v } else { 0.0 };
    let losses = LossBreakdown {
        classification: ce_v,
        total: lambda_bg * on(t.use_bg, penalty) + lambda_cls * on(t.use_classification, ce_v),
        ce_gt: Some(ce_v),
        gradmask: (config.method == Method::Gradmask).then_some(penalty),
        rrr: (config.method == Method::Rrr).then_some(penalty),
        ..Default::default()
    };
    Ok(SampleStep { losses, grads, correct: predicted == sample.label })
}

fn check_finetune_samples(samples: &[Sample], config: &FinetuneConfig, num_classes: usize) -> Result<()> {
    config.validate(num_classes)?;
    let subset = config.class_subset(num_classes);
    if samples.iter().any(|s| s.mask.is_none()) {
        return Err(Error::contract("every finetuning sample needs a foreground mask"));
    }
    if let Some(s) = samples.iter().find(|s| !subset.contains(&s.label)) {
        return Err(Error::contract(format!(
            "sample of class {} is outside the finetuning subset {subset:?}",
            s.label
        )));
    }
    for &class in &subset {
        let n = samples.iter().filter(|s| s.label == class).count();
        if n != config.samples_per_class {
            return Err(Error::contract(format!(
                "class {class} has {n} finetuning samples, expected {}",
                config.samples_per_class
            )));
        }
    }
    Ok(())
}

/// Finetunes a copy of `model` on the masked `samples`.
pub fn finetune_relevance(
    model: &ViTModel,
    samples: &[Sample],
    config: &FinetuneConfig,
    validation: Option<&[Sample]>,
) -> Result<(ViTModel, TrainReport)> {
    check_finetune_samples(samples, config, model.config().num_classes)?;
    let start = Instant::now();
    let mut model = model.clone();
    let opt = OptimizerConfig::with_lr(config.learning_rate);
    let mut state = AdamState::new(model.params());
    let initial_validation_accuracy = validation_accuracy(&model, validation)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = shuffled_order(samples.len(), config.seed, epoch);
        let mut losses = Vec::with_capacity(samples.len());
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc = zeros_like(&model);
            for &i in batch {
                let step = finetune_objective(&model, &samples[i], config)?;
                if let Some(g) = &step.grads {
                    add_scaled(&mut acc, g, 1.0 / batch.len() as f32);
                }
                correct += step.correct as usize;
                losses.push(step.losses);
            }
            optimizer_step(model.params_mut(), &acc, &mut state, &opt)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            losses: LossBreakdown::mean(&losses),
            train_accuracy: correct as f32 / samples.len() as f32,
            validation_accuracy: validation_accuracy(&model, validation)?,
        };
        log::debug!(
            "finetune epoch {}: total {:.4} bg {:.4} fg {:.4} cls {:.4}",
            record.epoch,
            record.losses.total,
            record.losses.bg,
            record.losses.fg,
            record.losses.classification
        );
        epochs.push(record);
    }
    let report = TrainReport {
        epochs,
        initial_validation_accuracy,
        samples_per_epoch: samples.len(),
        optimizer_steps: state.step,
        weights_hash: model.weights_hash(),
        checkpoint: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Outcome of one learning-rate candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrCandidate {
    pub learning_rate: f32,
    pub initial_validation_accuracy: f32,
    pub final_validation_accuracy: f32,
    pub initial_classification_loss: f32,
    pub final_classification_loss: f32,
    pub qualifies: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSearchReport {
    pub chosen: f32,
    /// True when no candidate qualified and the smallest was returned.
    pub fallback: bool,
    pub candidates: Vec<LrCandidate>,
}

/// Largest allowed validation-accuracy drop, in accuracy fraction.
pub const LR_MAX_ACCURACY_DROP: f32 = 0.03;

/// Mean classification loss of `model` over `samples` under `config`.
pub fn mean_classification_loss(model: &ViTModel, samples: &[Sample], config: &FinetuneConfig) -> Result<f32> {
    let mut total = 0.0f64;
    for s in samples {
        let logits = model.logits(&s.image)?;
        let tape = Tape::new();
        let l = tape.constant(logits);
        let v = match config.classification_mode {
            ClassificationMode::Confidence => loss_confidence(l)?,
            ClassificationMode::GroundTruthCe => loss_ce_ground_truth(l, s.label)?,
        };
        total += v.value().item() as f64;
    }
    Ok((total / samples.len().max(1) as f64) as f32)
}

/// Picks the largest candidate whose finetune keeps validation accuracy
/// within three points and does not increase the classification loss.
pub fn lr_grid_search(
    model: &ViTModel,
    candidates: &[f32],
    config: &FinetuneConfig,
    samples: &[Sample],
    validation: &[Sample],
) -> Result<LrSearchReport> {
    if candidates.is_empty() {
        return Err(Error::contract("learning-rate search needs at least one candidate"));
    }
    if validation.is_empty() {
        return Err(Error::contract("learning-rate search needs a validation set"));
    }
    let initial_acc = topk_accuracy(model, validation, 1)?;
    let initial_cls = mean_classification_loss(model, samples, config)?;
    let mut results = Vec::with_capacity(candidates.len());
    for &lr in candidates {
        let cfg = FinetuneConfig { learning_rate: lr, ..config.clone() };
        let (tuned, _) = finetune_relevance(model, samples, &cfg, None)?;
        let final_acc = topk_accuracy(&tuned, validation, 1)?;
        let final_cls = mean_classification_loss(&tuned, samples, config)?;
        let qualifies = initial_acc - final_acc <= LR_MAX_ACCURACY_DROP + 1e-6 && final_cls <= initial_cls;
        log::info!("lr {lr}: val acc {initial_acc:.3} -> {final_acc:.3}, cls {initial_cls:.4} -> {final_cls:.4}, qualifies {qualifies}");
        results.push(LrCandidate {
            learning_rate: lr,
            initial_validation_accuracy: initial_acc,
            final_validation_accuracy: final_acc,
            initial_classification_loss: initial_cls,
            final_classification_loss: final_cls,
            qualifies,
        });
    }
    let best = results
        .iter()
        .filter(|c| c.qualifies)
        .map(|c| c.learning_rate)
        .fold(None, |acc: Option<f32>, lr| Some(acc.map_or(lr, |a| a.max(lr))));
    let (chosen, fallback) = match best {
        Some(lr) => (lr, false),
        None => {
            let smallest = candidates.iter().copied().fold(f32::INFINITY, f32::min);
            log::warn!("no learning rate qualified; falling back to {smallest}");
            (smallest, true)
        }
    };
    Ok(LrSearchReport { chosen, fallback, candidates: results })
}
