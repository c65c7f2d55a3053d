//! Training objectives.
//!
//! The relevance-guided objective pushes background relevance to 0 and
//! foreground relevance to 1, both as MSE over all patch positions, and
//! adds a confidence term: cross-entropy against the model's own argmax.
//! GradMask and RRR penalize background input gradients instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::tensor::{Tape, Tensor, Var};

/// Soft foreground fraction per patch, row-major over the patch grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMask {
    pub grid: usize,
    pub values: Vec<f32>,
}

impl PatchMask {
    /// Each patch value is the mean of its pixels.
    pub fn from_pixels(mask: &Mask, patch_size: usize) -> Result<Self> {
        if patch_size == 0
            || mask.height != mask.width
            || !mask.height.is_multiple_of(patch_size)
        {
            return Err(Error::dim(format!(
                "{}x{} mask is not tiled by square patches of {patch_size}",
                mask.height, mask.width
            )));
        }
        let grid = mask.height / patch_size;
        let mut values = vec![0.0f32; grid * grid];
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.get(y, x) {
                    values[(y / patch_size) * grid + x / patch_size] += 1.0;
                }
            }
        }
        let per_patch = (patch_size * patch_size) as f32;
        for v in &mut values {
            *v /= per_patch;
        }
        Ok(PatchMask { grid, values })
    }

    pub fn complement(&self) -> Vec<f32> {
        self.values.iter().map(|v| 1.0 - v).collect()
    }

    fn check(&self, r: &Var<'_>) -> Result<()> {
        if r.numel() != self.values.len() {
            return Err(Error::dim(format!(
                "relevance has {} patches, mask has {}",
                r.numel(),
                self.values.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub bg: f32,
    pub fg: f32,
    pub relevance: f32,
    pub classification: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { bg: 2.0, fg: 0.3, relevance: 0.8, classification: 0.2 }
    }
}

/// Scalar values of every loss term for one sample or one epoch mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bg: f32,
    pub fg: f32,
    pub relevance: f32,
    pub classification: f32,
    pub total: f32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ce_gt: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gradmask: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rrr: Option<f32>,
}

impl LossBreakdown {
    /// Elementwise mean; optional fields average over the entries that
    /// carry them.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f32;
        let avg = |f: fn(&LossBreakdown) -> f32| items.iter().map(f).sum::<f32>() / n;
        let avg_opt = |f: fn(&LossBreakdown) -> Option<f32>| {
            let v: Vec<f32> = items.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f32>() / v.len() as f32)
        };
        LossBreakdown {
            bg: avg(|b| b.bg),
            fg: avg(|b| b.fg),
            relevance: avg(|b| b.relevance),
            classification: avg(|b| b.classification),
            total: avg(|b| b.total),
            ce_gt: avg_opt(|b| b.ce_gt),
            gradmask: avg_opt(|b| b.gradmask),
            rrr: avg_opt(|b| b.rrr),
        }
    }
}

fn constant<'t>(tape: &'t Tape, values: Vec<f32>) -> Var<'t> {
    let n = values.len();
    tape.constant(Tensor::new(&[n], values).expect("length matches"))
}

/// Mean over all patches of `(R ⊙ (1 - S))^2`.
pub fn loss_bg<'t>(relevance: Var<'t>, mask: &PatchMask) -> Result<Var<'t>> {
    mask.check(&relevance)?;
    let r = relevance.reshape(&[mask.values.len()])?;
    let bg = r.mul(constant(r.tape(), mask.complement()))?;
    Ok(bg.mul(bg)?.mean())
}

/// Mean over all patches of `(R ⊙ S - 1)^2`. Background patches contribute
/// a constant 1 with zero gradient.
pub fn loss_fg<'t>(relevance: Var<'t>, mask: &PatchMask) -> Result<Var<'t>> {
    mask.check(&relevance)?;
    let r = relevance.reshape(&[mask.values.len()])?;
    let tape = r.tape();
    let diff = r
        .mul(constant(tape, mask.values.clone()))?
        .add(tape.constant(Tensor::scalar(-1.0)))?;
    Ok(diff.mul(diff)?.mean())
}

pub fn loss_relevance(bg: f32, fg: f32, w: &LossWeights) -> f32 {
    w.bg * bg + w.fg * fg
}

pub fn loss_total(relevance: f32, classification: f32, w: &LossWeights) -> f32 {
    w.relevance * relevance + w.classification * classification
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy against the one-hot of the model's own prediction. The
/// predicted index is read from the values and carries no gradient.
pub fn loss_confidence<'t>(logits: Var<'t>) -> Result<Var<'t>> {
    let k = logits.numel();
    if k < 2 {
        return Err(Error::contract(format!("confidence loss needs >= 2 classes, got {k}")));
    }
    let target = argmax(logits.value().data());
    pick_neg_log_prob(logits, target)
}

/// `-log softmax(logits)[label]`.
pub fn loss_ce_ground_truth<'t>(logits: Var<'t>, label: usize) -> Result<Var<'t>> {
    let k = logits.numel();
    if label >= k {
        return Err(Error::contract(format!("label {label} outside 0..{k}")));
    }
    pick_neg_log_prob(logits, label)
}

fn pick_neg_log_prob<'t>(logits: Var<'t>, index: usize) -> Result<Var<'t>> {
    let k = logits.numel();
    logits.reshape(&[k])?.log_softmax()?.slice(0, index, 1)?.scale(-1.0).reshape(&[1])
}

fn background_masked(grad: &Tensor, mask: &Mask) -> Result<Vec<f32>> {
    let s = grad.shape();
    if s.len() != 3 || s[0] != mask.height || s[1] != mask.width || s[2] == 0 {
        return Err(Error::dim(format!(
            "gradient {:?} does not match {}x{} mask",
            grad.shape(),
            mask.height,
            mask.width
        )));
    }
    Ok(grad
        .data()
        .chunks_exact(s[2])
        .zip(&mask.data)
        .flat_map(|(px, &m)| {
            let keep = if m == 1 { 0.0 } else { 1.0 };
            px.iter().map(move |v| v * keep)
        })
        .collect())
}

/// GradMask background penalty: L2 norm of the background part of the
/// input gradient.
pub fn loss_gradmask(input_grad: &Tensor, mask: &Mask) -> Result<f32> {
    let bg = background_masked(input_grad, mask)?;
    Ok(bg.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() as f32)
}

/// RRR background penalty: squared sum of the background part of the
/// log-probability-sum input gradient.
pub fn loss_rrr(logprob_sum_grad: &Tensor, mask: &Mask) -> Result<f32> {
    let bg = background_masked(logprob_sum_grad, mask)?;
    Ok(bg.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() as f32)
}

/// Derivative of [`loss_gradmask`] with respect to the gradient itself.
pub fn gradmask_direction(input_grad: &Tensor, mask: &Mask) -> Result<Tensor> {
    let bg = background_masked(input_grad, mask)?;
    let norm = bg.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    Tensor::new(input_grad.shape(), bg.iter().map(|v| (*v as f64 * scale) as f32).collect())
}

/// Derivative of [`loss_rrr`] with respect to the gradient itself.
pub fn rrr_direction(logprob_sum_grad: &Tensor, mask: &Mask) -> Result<Tensor> {
    let bg = background_masked(logprob_sum_grad, mask)?;
    Tensor::new(logprob_sum_grad.shape(), bg.iter().map(|v| 2.0 * v).collect())
}
