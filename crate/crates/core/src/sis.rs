//! Sufficient input subsets by gradient-guided backward elimination.
//!
//! Starting from the full image, batches of the least salient retained
//! pixels (saliency `sum_c |dp/dx_c * x_c|`) are blanked while the target
//! probability stays at or above the threshold. A rejected batch is undone
//! and the batch fraction halved; the search ends when even the single
//! least salient pixel cannot go. No pixel values are ever optimized.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::apply_pixel_mask;
use crate::tensor::{Tape, Tensor};
use crate::vit::ViTModel;

/// Value given to eliminated pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Black.
    #[default]
    Zero,
    /// Per-channel mean of the original image.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SisConfig {
    pub threshold: f32,
    pub batch_eliminate_fraction: f32,
    pub fill: FillMode,
}

impl Default for SisConfig {
    fn default() -> Self {
        SisConfig { threshold: 0.9, batch_eliminate_fraction: 0.05, fill: FillMode::Zero }
    }
}

impl SisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::contract(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.batch_eliminate_fraction > 0.0 && self.batch_eliminate_fraction <= 1.0) {
            return Err(Error::contract(format!(
                "batch_eliminate_fraction {} outside (0, 1]",
                self.batch_eliminate_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SisResult {
    pub target_class: usize,
    /// Row-major pixel indices still shown to the model, ascending.
    pub retained: Vec<usize>,
    pub final_confidence: f32,
    /// Target probability after the full image and after each accepted round.
    pub confidence_trace: Vec<f32>,
    /// Retained pixel count after the full image and after each accepted round.
    pub retained_trace: Vec<usize>,
    pub retained_fraction: f32,
    pub fill: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SisOutcome {
    Found(SisResult),
    /// The full image is already below the threshold, so elimination
    /// cannot start.
    Insufficient { target_class: usize, full_image_confidence: f32 },
}

impl SisOutcome {
    pub fn found(&self) -> Option<&SisResult> {
        match self {
            SisOutcome::Found(r) => Some(r),
            SisOutcome::Insufficient { .. } => None,
        }
    }
}

fn fill_value(image: &Tensor, mode: FillMode) -> [f32; 3] {
    match mode {
        FillMode::Zero => [0.0; 3],
        FillMode::Mean => {
            let mut sum = [0.0f64; 3];
            for px in image.data().chunks_exact(3) {
                for c in 0..3 {
                    sum[c] += px[c] as f64;
                }
            }
            let n = (image.numel() / 3).max(1) as f64;
            sum.map(|s| (s / n) as f32)
        }
    }
}

fn probability(model: &ViTModel, image: &Tensor, target: usize) -> Result<f32> {
    let tape = Tape::new();
    let f = model.forward_on(&tape, tape.constant(image.clone()), false)?;
    Ok(f.logits.softmax()?.value().data()[target])
}

fn probability_gradient(model: &ViTModel, image: &Tensor, target: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.var(image.clone());
    let f = model.forward_on(&tape, x, false)?;
    let p = f.logits.softmax()?.slice(0, target, 1)?;
    Ok(tape.backward_for(p, &[x])?.wrt(x))
}

fn keep_set(retained: &[usize], pixels: usize) -> Vec<bool> {
    let mut keep = vec![false; pixels];
    for &i in retained {
        keep[i] = true;
    }
    keep
}

/// Searches for a sparse pixel subset on which `target_class` keeps
/// probability at least `config.threshold`.
pub fn find_sis(
    model: &ViTModel,
    image: &Tensor,
    target_class: usize,
    config: &SisConfig,
) -> Result<SisOutcome> {
    config.validate()?;
    let mc = model.config();
    if target_class >= mc.num_classes {
        return Err(Error::contract(format!(
            "target class {target_class} outside 0..{}",
            mc.num_classes
        )));
    }
    crate::image::check_image(image, mc.image_size)?;

    let pixels = mc.image_size * mc.image_size;
    let fill = fill_value(image, config.fill);
    let full = probability(model, image, target_class)?;
    if full < config.threshold {
        return Ok(SisOutcome::Insufficient { target_class, full_image_confidence: full });
    }

    let mut retained: Vec<usize> = (0..pixels).collect();
    let mut current = image.clone();
    let mut confidence = full;
    let mut confidence_trace = vec![full];
    let mut retained_trace = vec![pixels];
    let mut fraction = config.batch_eliminate_fraction;
    let mut grad = probability_gradient(model, &current, target_class)?;

    while retained.len() > 1 {
        let k = ((fraction * retained.len() as f32).floor() as usize).clamp(1, retained.len() - 1);
        let mut ranked: Vec<(f32, usize)> = retained
            .iter()
            .map(|&p| {
                let s: f32 = (0..3).map(|c| (grad.data()[3 * p + c] * image.data()[3 * p + c]).abs()).sum();
                (s, p)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut candidate: Vec<usize> = ranked[k..].iter().map(|&(_, p)| p).collect();
        candidate.sort_unstable();

        let trial = apply_pixel_mask(image, &keep_set(&candidate, pixels), fill);
        let p = probability(model, &trial, target_class)?;
        if p >= config.threshold {
            retained = candidate;
            current = trial;
            confidence = p;
            confidence_trace.push(p);
            retained_trace.push(retained.len());
            grad = probability_gradient(model, &current, target_class)?;
        } else if k == 1 {
            break;
        } else {
            fraction /= 2.0;
        }
    }

    let retained_fraction = retained.len() as f32 / pixels as f32;
    Ok(SisOutcome::Found(SisResult {
        target_class,
        retained,
        final_confidence: confidence,
        confidence_trace,
        retained_trace,
        retained_fraction,
        fill,
    }))
}

/// The image the model sees for a search result.
pub fn masked_image(image: &Tensor, result: &SisResult) -> Tensor {
    apply_pixel_mask(image, &keep_set(&result.retained, image.numel() / 3), result.fill)
}

/// Target probability on the retained subset alone.
pub fn replay(model: &ViTModel, image: &Tensor, result: &SisResult) -> Result<f32> {
    crate::image::check_image(image, model.config().image_size)?;
    if result.retained.iter().any(|&p| p >= image.numel() / 3) {
        return Err(Error::contract("retained pixel index outside the image"));
    }
    probability(model, &masked_image(image, result), result.target_class)
}

/// Writes the subset as a PPM: retained pixels keep their color, the rest
/// take the fill value.
pub fn write_subset_ppm(image: &Tensor, result: &SisResult, path: &Path) -> Result<()> {
    let bytes = crate::synthdata::encode_ppm(&masked_image(image, result));
    std::fs::write(path, bytes)?;
    Ok(())
}
