//! Gradient-weighted attention relevance for the class token.
//!
//! Per block, the attention map `A` (heads x T x T) is weighted by the
//! gradient of the explained logit with respect to `A`, clamped at zero and
//! averaged over heads. Blocks are then folded in network order as
//! `R <- R + A_bar R` starting from the identity, and the class-token row of
//! `R` (minus its self entry) is the per-patch relevance.
//!
//! The attention gradient enters as a constant. When the map feeds a
//! training loss, gradients therefore reach the weights only through `A`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::vit::{Forward, ViTModel};

/// Maxima below this are treated as an all-zero map.
pub const ZERO_MAP_THRESHOLD: f32 = 1e-12;

/// Per-patch relevance on the patch grid, normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    /// Patches per side.
    pub grid: usize,
    /// Row-major, `grid * grid` entries.
    pub values: Vec<f32>,
    pub target_class: usize,
}

impl RelevanceMap {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.grid + col]
    }
}

/// Head-averaged, positively clamped `grad ⊙ A` for one block.
pub fn layer_relevance<'t>(attention: Var<'t>, grad: &Tensor) -> Result<Var<'t>> {
    let shape = attention.shape();
    if shape.len() != 3 || shape[1] != shape[2] || shape != grad.shape() {
        return Err(Error::dim(format!(
            "attention {shape:?} and gradient {:?} must share a heads x T x T shape",
            grad.shape()
        )));
    }
    let (heads, t) = (shape[0], shape[1]);
    let tape = attention.tape();
    let weighted = attention.mul(tape.constant(grad.clone()))?.positive_part();
    let mut acc = weighted.slice(0, 0, 1)?;
    for h in 1..heads {
        acc = acc.add(weighted.slice(0, h, 1)?)?;
    }
    acc.scale(1.0 / heads as f32).reshape(&[t, t])
}

/// Folds per-block relevance from the first block to the last, starting
/// from the `n_tokens` identity. An empty list yields the identity.
pub fn aggregate_relevance<'t>(
    tape: &'t Tape,
    layers: &[Var<'t>],
    n_tokens: usize,
) -> Result<Var<'t>> {
    let mut r = tape.constant(Tensor::eye(n_tokens));
    for (i, a) in layers.iter().enumerate() {
        if a.shape() != [n_tokens, n_tokens] {
            return Err(Error::dim(format!(
                "layer {i} relevance has shape {:?}, expected [{n_tokens}, {n_tokens}]",
                a.shape()
            )));
        }
        r = r.add(a.matmul(r)?)?;
    }
    Ok(r)
}

/// Class-token row of `r` without its self entry, divided by its maximum.
///
/// Returns an all-zero constant when the maximum is below
/// [`ZERO_MAP_THRESHOLD`].
pub fn cls_patch_relevance<'t>(r: Var<'t>) -> Result<Var<'t>> {
    let shape = r.shape();
    if shape.len() != 2 || shape[0] != shape[1] || shape[0] < 2 {
        return Err(Error::dim(format!("relevance matrix must be square with T >= 2, got {shape:?}")));
    }
    let patches = shape[0] - 1;
    let row = r.slice(0, 0, 1)?.slice(1, 1, patches)?.reshape(&[patches])?;
    let max = row.max()?;
    if max.value().item() < ZERO_MAP_THRESHOLD {
        return Ok(r.tape().constant(Tensor::zeros(&[patches])));
    }
    row.mul(max.recip())
}

/// Differentiable relevance of `target` given a recorded forward pass.
///
/// Runs a backward pass from the target logit to the attention maps; the
/// resulting gradients are frozen.
pub fn relevance_on_tape<'t>(
    tape: &'t Tape,
    forward: &Forward<'t>,
    target: usize,
) -> Result<Var<'t>> {
    let k = forward.logits.numel();
    if target >= k {
        return Err(Error::contract(format!("target class {target} outside 0..{k}")));
    }
    let logit = forward.logits.slice(0, target, 1)?;
    let grads = tape.backward_for(logit, &forward.attention)?;
    let layers = forward
        .attention
        .iter()
        .map(|&a| layer_relevance(a, &grads.wrt(a)))
        .collect::<Result<Vec<_>>>()?;
    let t = forward.attention.first().map(|a| a.shape()[1]).unwrap_or(1);
    let r = aggregate_relevance(tape, &layers, t)?;
    cls_patch_relevance(r)
}

/// Relevance map of `image` for `target_class`.
pub fn relevance_map(model: &ViTModel, image: &Tensor, target_class: usize) -> Result<RelevanceMap> {
    let k = model.config().num_classes;
    if target_class >= k {
        return Err(Error::contract(format!("target class {target_class} outside 0..{k}")));
    }
    let tape = Tape::new();
    let forward = model.forward_on(&tape, tape.constant(image.clone()), false)?;
    let map = relevance_on_tape(&tape, &forward, target_class)?;
    let values = map.value().data().to_vec();
    Ok(RelevanceMap { grid: model.config().grid(), values, target_class })
}

/// Bilinear resize of the patch-grid map to `height x width` pixels, using
/// pixel-center alignment with edge clamping. Output is row-major.
pub fn upsample_map(map: &RelevanceMap, height: usize, width: usize) -> Result<Tensor> {
    if height == 0 || width == 0 {
        return Err(Error::contract("upsample target size must be positive"));
    }
    let g = map.grid;
    if g == 0 || map.values.len() != g * g {
        return Err(Error::dim(format!("map of {} values is not a {g}x{g} grid", map.values.len())));
    }
    let src = |size: usize, i: usize| -> (usize, usize, f32) {
        let pos = ((i as f32 + 0.5) * g as f32 / size as f32 - 0.5).clamp(0.0, (g - 1) as f32);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(g - 1);
        (lo, hi, pos - lo as f32)
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = src(height, y);
        for x in 0..width {
            let (x0, x1, fx) = src(width, x);
            let top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
            let bottom = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(&[height, width], out)
}

fn to_byte(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Black → red → yellow, linear between stops at 0, 0.5 and 1.
pub fn colormap(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        [to_byte(2.0 * v), 0, 0]
    } else {
        [255, to_byte(2.0 * (v - 0.5)), 0]
    }
}

/// Binary grayscale PGM (P5) of a row-major `[0, 1]` map.
pub fn encode_pgm(values: &[f32], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::dim(format!("{} values for a {width}x{height} image", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Binary color PPM (P6) of a row-major `[0, 1]` map through [`colormap`].
pub fn encode_heatmap_ppm(values: &[f32], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::dim(format!("{} values for a {width}x{height} image", values.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &v in values {
        out.extend(colormap(v));
    }
    Ok(out)
}

/// Writes `<stem>.pgm` and `<stem>.ppm` heatmaps for a pixel map.
pub fn write_heatmaps(pixels: &Tensor, stem: &Path) -> Result<()> {
    let (h, w) = match pixels.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::dim(format!("heatmap expects a 2D map, got {s:?}"))),
    };
    std::fs::write(stem.with_extension("pgm"), encode_pgm(pixels.data(), w, h)?)?;
    std::fs::write(stem.with_extension("ppm"), encode_heatmap_ppm(pixels.data(), w, h)?)?;
    Ok(())
}
