//! Procedural spurious-cue benchmark.
//!
//! Every class owns one glyph shape and one background texture. Training data
//! pairs the class with its texture at rate `cue_correlation`, so a classifier
//! can score well by looking at the background alone. The shift variants
//! break that pairing (`BackgroundSwap`) or move the glyph around
//! (`Location`, `Rotation`, `Size`) while keeping the label.

mod io;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::tensor::Tensor;

pub use io::{encode_ppm, read_dataset, read_ppm, write_dataset, ManifestRow, MANIFEST_FILE};

/// Maximum number of classes; one glyph and one texture per class.
pub const MAX_CLASSES: usize = 8;
const RESAMPLE_LIMIT: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Glyph {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Bar,
    LShape,
    Diamond,
}

impl Glyph {
    pub const ALL: [Glyph; 8] = [
        Glyph::Disk,
        Glyph::Square,
        Glyph::Triangle,
        Glyph::Cross,
        Glyph::Ring,
        Glyph::Bar,
        Glyph::LShape,
        Glyph::Diamond,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&g| g == self).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Solid,
    Stripes,
    Checker,
    Gradient,
    Noise,
    Dots,
    Grid,
    Rings,
}

impl Texture {
    pub const ALL: [Texture; 8] = [
        Texture::Solid,
        Texture::Stripes,
        Texture::Checker,
        Texture::Gradient,
        Texture::Noise,
        Texture::Dots,
        Texture::Grid,
        Texture::Rings,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }
}

/// Everything needed to re-render a sample bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class_id: usize,
    pub glyph: Glyph,
    pub fg_color: [f32; 3],
    pub bg_texture: Texture,
    /// Glyph center in pixels, `(x, y)`.
    pub position: [f32; 2],
    /// Degrees, counter-clockwise.
    pub rotation: f32,
    /// Glyph diameter as a fraction of the image side.
    pub scale: f32,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Option<Mask>,
    pub label: usize,
    pub scene: SceneSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    BackgroundSwap,
    Location,
    Rotation,
    Size,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 4] =
        [ShiftKind::BackgroundSwap, ShiftKind::Location, ShiftKind::Rotation, ShiftKind::Size];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::BackgroundSwap => "background_swap",
            ShiftKind::Location => "location",
            ShiftKind::Rotation => "rotation",
            ShiftKind::Size => "size",
        }
    }
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ShiftKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shift kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub per_class: usize,
    pub cue_correlation: f32,
    pub image_size: usize,
    pub seed: u64,
    /// Glyph scale range `[min, max]`.
    pub scale_range: [f32; 2],
    /// Rotation range in degrees.
    pub rotation_range: [f32; 2],
    /// Maximum center offset from the image middle, as a fraction of the side.
    pub center_jitter: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 8,
            per_class: 200,
            cue_correlation: 0.95,
            image_size: 32,
            seed: 0,
            scale_range: [0.45, 0.65],
            rotation_range: [-15.0, 15.0],
            center_jitter: 0.12,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cue_correlation) {
            return Err(Error::contract(format!(
                "cue_correlation {} is outside [0, 1]",
                self.cue_correlation
            )));
        }
        if self.classes < 2 || self.classes > MAX_CLASSES {
            return Err(Error::contract(format!(
                "classes must be in 2..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::contract(format!("bad scale_range {:?}", self.scale_range)));
        }
        if self.rotation_range[0] > self.rotation_range[1] || self.center_jitter < 0.0 {
            return Err(Error::contract("bad rotation_range or center_jitter"));
        }
        if self.image_size < 8 {
            return Err(Error::contract("image_size must be at least 8"));
        }
        Ok(())
    }
}

/// Renders `spec` into an image and its exact foreground mask.
pub fn render_scene(spec: &SceneSpec, image_size: usize) -> Result<Sample> {
    let (image, mask) = render::render(spec, image_size)?;
    Ok(Sample { image, mask: Some(mask), label: spec.class_id, scene: spec.clone() })
}

/// Membership test in the glyph frame, where the glyph spans at most the
/// unit disk. Rendering maps the unit radius to `scale * image_size / 2` pixels.
pub fn glyph_contains(glyph: Glyph, u: f32, v: f32) -> bool {
    render::glyph_contains(glyph, u, v)
}

/// Stream-separated RNG for item `index` under `seed`. Every seeded draw in
/// the crate goes through this so runs are reproducible from one seed.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Half-width, in turns, of the hue band each class draws its glyph color from.
const GLYPH_HUE_JITTER: f32 = 0.06;

fn draw_color(rng: &mut ChaCha8Rng, class_id: usize) -> [f32; 3] {
    // bright, saturated glyphs stand out from the muted backgrounds; the
    // class hue sits opposite the hue of the class texture
    let band = class_id as f32 / Glyph::ALL.len() as f32 + 0.5;
    let hue = band + rng.random_range(-GLYPH_HUE_JITTER..GLYPH_HUE_JITTER);
    render::hsv(hue, 0.8, 0.95)
}

fn clamp_center(c: f32, radius: f32, size: f32) -> f32 {
    c.clamp(radius, size - radius)
}

fn draw_scene(config: &DatasetConfig, index: usize) -> SceneSpec {
    let mut rng = item_rng(config.seed, index as u64);
    let class_id = index % config.classes;
    let cued = rng.random_bool(config.cue_correlation as f64);
    let bg_texture = if cued {
        Texture::ALL[class_id]
    } else {
        let other = rng.random_range(0..Texture::ALL.len() - 1);
        Texture::ALL[if other >= class_id { other + 1 } else { other }]
    };
    let [slo, shi] = config.scale_range;
    let scale = if slo < shi { rng.random_range(slo..=shi) } else { slo };
    let [rlo, rhi] = config.rotation_range;
    let rotation = if rlo < rhi { rng.random_range(rlo..=rhi) } else { rlo };
    let size = config.image_size as f32;
    let radius = render::glyph_radius(scale, config.image_size) * render::GLYPH_BOUND;
    let jitter = config.center_jitter * size;
    let mut offset = || if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
    let position = [
        clamp_center(size / 2.0 + offset(), radius, size),
        clamp_center(size / 2.0 + offset(), radius, size),
    ];
    let fg_color = draw_color(&mut rng, class_id);
    SceneSpec {
        class_id,
        glyph: Glyph::ALL[class_id],
        fg_color,
        bg_texture,
        position,
        rotation,
        scale,
        noise_seed: rng.random(),
    }
}

/// Generates `classes * per_class` samples, interleaving classes.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..config.classes * config.per_class)
        .into_par_iter()
        .map(|i| render_scene(&draw_scene(config, i), config.image_size))
        .collect()
}

/// Re-renders `sample` under the given shift. The label and glyph never
/// change; `seed` and the sample's own noise seed pick the new parameters.
pub fn make_shifted_variant(
    sample: &Sample,
    kind: ShiftKind,
    seed: u64,
    config: &DatasetConfig,
) -> Result<Sample> {
    let size = sample.image.shape()[0];
    let mut rng = item_rng(seed ^ sample.scene.noise_seed, 1 + kind as u64);
    let [slo, shi] = config.scale_range;
    for _ in 0..RESAMPLE_LIMIT {
        let mut spec = sample.scene.clone();
        match kind {
            ShiftKind::BackgroundSwap => {
                let other = rng.random_range(0..Texture::ALL.len() - 1);
                let class_tex = spec.class_id;
                spec.bg_texture = Texture::ALL[if other >= class_tex { other + 1 } else { other }];
            }
            ShiftKind::Location => {
                let r = render::glyph_radius(spec.scale, size) * render::GLYPH_BOUND;
                let (lo, hi) = (r, size as f32 - r);
                if lo > hi {
                    continue;
                }
                spec.position = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
            }
            ShiftKind::Rotation => spec.rotation = rng.random_range(0.0..360.0),
            ShiftKind::Size => {
                spec.scale = rng.random_range(0.5 * slo..=1.5 * shi);
                let r = render::glyph_radius(spec.scale, size) * render::GLYPH_BOUND;
                let s = size as f32;
                spec.position = [
                    clamp_center(spec.position[0], r, s),
                    clamp_center(spec.position[1], r, s),
                ];
            }
        }
        if render::fits(&spec, size) {
            let mut out = render_scene(&spec, size)?;
            if sample.mask.is_none() {
                out.mask = None;
            }
            return Ok(out);
        }
    }
    Err(Error::contract(format!(
        "no in-bounds {} variant after {RESAMPLE_LIMIT} draws",
        kind.name()
    )))
}

/// Applies `kind` to every sample, with per-sample seeds derived from `seed`.
pub fn shift_suite(
    samples: &[Sample],
    kind: ShiftKind,
    seed: u64,
    config: &DatasetConfig,
) -> Result<Vec<Sample>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| make_shifted_variant(s, kind, seed.wrapping_add(i as u64), config))
        .collect()
}

/// SHA-256 over the manifest rows `write_dataset` would produce.
pub fn manifest_hash(samples: &[Sample]) -> String {
    let mut hasher = Sha256::new();
    for (i, s) in samples.iter().enumerate() {
        let row = ManifestRow::for_sample(i, s);
        hasher.update(serde_json::to_vec(&row).expect("manifest rows serialize"));
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
