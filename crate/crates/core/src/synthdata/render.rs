// Glyph rasterization and procedural background textures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Glyph, SceneSpec, Texture};
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::tensor::Tensor;

/// Subsamples per pixel side for edge coverage.
const SUPERSAMPLE: usize = 5;
/// Amplitude of the per-pixel noise added to backgrounds and glyphs.
const NOISE_AMPLITUDE: f32 = 0.03;
/// Half-width, in turns, of the hue band around each texture's hue.
const TEXTURE_HUE_JITTER: f32 = 0.04;

/// Every glyph lies within this radius of its center in glyph units.
pub(crate) const GLYPH_BOUND: f32 = 1.0;

const TRIANGLE: [(f32, f32); 3] = [(0.0, -1.0), (-0.866_025_4, 0.5), (0.866_025_4, 0.5)];

fn inside_convex(u: f32, v: f32, verts: &[(f32, f32)]) -> bool {
    let n = verts.len();
    (0..n).all(|i| {
        let (x0, y0) = verts[i];
        let (x1, y1) = verts[(i + 1) % n];
        (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) <= 0.0
    })
}

/// Membership test in the glyph frame, where the glyph spans `[-1, 1]`.
pub(crate) fn glyph_contains(glyph: Glyph, u: f32, v: f32) -> bool {
    let r2 = u * u + v * v;
    match glyph {
        Glyph::Disk => r2 <= 1.0,
        Glyph::Square => u.abs() <= 0.7 && v.abs() <= 0.7,
        Glyph::Triangle => inside_convex(u, v, &TRIANGLE),
        Glyph::Cross => {
            (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95)
        }
        Glyph::Ring => (0.3025..=1.0).contains(&r2),
        Glyph::Bar => u.abs() <= 0.95 && v.abs() <= 0.3,
        Glyph::LShape => {
            ((-0.7..=-0.2).contains(&u) && (-0.7..=0.7).contains(&v))
                || ((-0.7..=0.7).contains(&u) && (0.2..=0.7).contains(&v))
        }
        Glyph::Diamond => u.abs() + v.abs() <= 1.0,
    }
}

/// Glyph radius in pixels.
pub(crate) fn glyph_radius(scale: f32, image_size: usize) -> f32 {
    scale * image_size as f32 / 2.0
}

pub(crate) fn fits(spec: &SceneSpec, image_size: usize) -> bool {
    let r = glyph_radius(spec.scale, image_size) * GLYPH_BOUND;
    let s = image_size as f32;
    let [x, y] = spec.position;
    spec.scale > 0.0 && x - r >= 0.0 && x + r <= s && y - r >= 0.0 && y + r <= s
}

/// Fraction of each pixel covered by the glyph, row-major.
pub(crate) fn coverage(spec: &SceneSpec, image_size: usize) -> Vec<f32> {
    let r = glyph_radius(spec.scale, image_size);
    let (sin, cos) = spec.rotation.to_radians().sin_cos();
    let [cx, cy] = spec.position;
    let step = 1.0 / SUPERSAMPLE as f32;
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    let mut out = vec![0.0; image_size * image_size];
    for y in 0..image_size {
        for x in 0..image_size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let dx = x as f32 + (sx as f32 + 0.5) * step - cx;
                    let dy = y as f32 + (sy as f32 + 0.5) * step - cy;
                    // rotate the sample point back into the glyph frame
                    let u = (cos * dx + sin * dy) / r;
                    let v = (-sin * dx + cos * dy) / r;
                    if glyph_contains(spec.glyph, u, v) {
                        hits += 1;
                    }
                }
            }
            out[y * image_size + x] = hits as f32 / total;
        }
    }
    out
}

struct TextureParams {
    base: [f32; 3],
    accent: [f32; 3],
    angle: f32,
    period: f32,
    phase: f32,
    offset: (f32, f32),
    lattice: Vec<f32>,
}

/// HSV to RGB with hue in turns.
pub(crate) fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

// Each texture has its own hue family, so the background color alone is a
// usable (spurious) cue, much like grass behind cows.
fn texture_params(texture: Texture, noise_seed: u64) -> TextureParams {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(1 + texture.index() as u64);
    let jitter = rng.random_range(-TEXTURE_HUE_JITTER..TEXTURE_HUE_JITTER);
    let hue = texture.index() as f32 / Texture::ALL.len() as f32 + jitter;
    let sat = rng.random_range(0.35..0.6);
    let base = hsv(hue, sat, rng.random_range(0.3..0.45));
    let accent = hsv(hue, sat, rng.random_range(0.55..0.7));
    TextureParams {
        base,
        accent,
        angle: rng.random_range(0.0..std::f32::consts::PI),
        period: rng.random_range(4.0..7.0),
        phase: rng.random_range(0.0..1.0),
        offset: (rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)),
        lattice: (0..36).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn texture_at(texture: Texture, p: &TextureParams, x: f32, y: f32, size: f32) -> [f32; 3] {
    let (sin, cos) = p.angle.sin_cos();
    let pick = |on: bool| if on { p.accent } else { p.base };
    match texture {
        Texture::Solid => p.base,
        Texture::Stripes => pick(((x * cos + y * sin) / p.period + p.phase).rem_euclid(1.0) < 0.5),
        Texture::Checker => {
            let cell = p.period.round();
            let cx = ((x + p.offset.0) / cell).floor() as i64;
            let cy = ((y + p.offset.1) / cell).floor() as i64;
            pick((cx + cy).rem_euclid(2) == 0)
        }
        Texture::Gradient => {
            let t = ((x - size / 2.0) * cos + (y - size / 2.0) * sin) / size + 0.5;
            mix(p.base, p.accent, t.clamp(0.0, 1.0))
        }
        Texture::Noise => {
            // value noise on a 6x6 lattice with smoothstep interpolation
            let gx = x / size * 5.0;
            let gy = y / size * 5.0;
            let (ix, iy) = (gx.floor().min(4.0) as usize, gy.floor().min(4.0) as usize);
            let (fx, fy) = (gx - ix as f32, gy - iy as f32);
            let s = |t: f32| t * t * (3.0 - 2.0 * t);
            let l = |i: usize, j: usize| p.lattice[j * 6 + i];
            let top = l(ix, iy) + (l(ix + 1, iy) - l(ix, iy)) * s(fx);
            let bot = l(ix, iy + 1) + (l(ix + 1, iy + 1) - l(ix, iy + 1)) * s(fx);
            mix(p.base, p.accent, top + (bot - top) * s(fy))
        }
        Texture::Dots => {
            let cell = p.period + 1.0;
            let fx = ((x + p.offset.0) / cell).rem_euclid(1.0) - 0.5;
            let fy = ((y + p.offset.1) / cell).rem_euclid(1.0) - 0.5;
            pick(fx * fx + fy * fy < 0.09)
        }
        Texture::Grid => {
            let cell = p.period + 1.0;
            let fx = (x + p.offset.0).rem_euclid(cell);
            let fy = (y + p.offset.1).rem_euclid(cell);
            pick(fx < 1.0 || fy < 1.0)
        }
        Texture::Rings => {
            let dx = x - p.offset.0 * size / 8.0;
            let dy = y - p.offset.1 * size / 8.0;
            pick(((dx * dx + dy * dy).sqrt() / p.period + p.phase).rem_euclid(1.0) < 0.5)
        }
    }
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders the scene; the mask is the set of pixels at least half covered
/// by the glyph, and those pixels carry only glyph color.
pub(crate) fn render(spec: &SceneSpec, image_size: usize) -> Result<(Tensor, Mask)> {
    if !fits(spec, image_size) {
        return Err(Error::contract(format!(
            "glyph at {:?} with scale {} leaves the {image_size}px image",
            spec.position, spec.scale
        )));
    }
    let cov = coverage(spec, image_size);
    let params = texture_params(spec.bg_texture, spec.noise_seed);
    let mut bg_noise = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    bg_noise.set_stream(100);
    let mut fg_noise = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    fg_noise.set_stream(200);

    let n = image_size * image_size;
    let mut data = Vec::with_capacity(n * 3);
    let mut mask = Vec::with_capacity(n);
    for (i, &c) in cov.iter().enumerate() {
        let (x, y) = ((i % image_size) as f32 + 0.5, (i / image_size) as f32 + 0.5);
        let mut bg = texture_at(spec.bg_texture, &params, x, y, image_size as f32);
        let mut fg = spec.fg_color;
        for ch in 0..3 {
            bg[ch] += bg_noise.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
            fg[ch] += fg_noise.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
        }
        let inside = c >= 0.5;
        mask.push(inside as u8);
        let px = if inside { fg } else { mix(bg, fg, c) };
        data.extend(px.iter().map(|&v| quantize(v)));
    }
    Ok((Tensor::new(&[image_size, image_size, 3], data)?, Mask::new(image_size, image_size, mask)?))
}
