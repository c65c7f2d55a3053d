//! Pixel-level image and mask helpers. Images are `H x W x 3` tensors with
//! values in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary pixel mask, row-major, 1 = foreground.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "mask of {} pixels for {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::contract("mask values must be 0 or 1"));
        }
        Ok(Mask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Mask { height, width, data: vec![value.min(1); height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn foreground_fraction(&self) -> f32 {
        self.area() as f32 / self.data.len().max(1) as f32
    }
}

/// Checks that `image` is `size x size x 3`.
pub fn check_image(image: &Tensor, size: usize) -> Result<()> {
    if image.shape() != [size, size, 3] {
        return Err(Error::dim(format!(
            "image shape {:?} is not [{size}, {size}, 3]",
            image.shape()
        )));
    }
    Ok(())
}

/// Copy of `image` with every pixel outside `keep` set to `fill`.
pub fn apply_pixel_mask(image: &Tensor, keep: &[bool], fill: [f32; 3]) -> Tensor {
    let mut out = image.clone();
    for (px, &k) in out.data_mut().chunks_exact_mut(3).zip(keep) {
        if !k {
            px.copy_from_slice(&fill);
        }
    }
    out
}
