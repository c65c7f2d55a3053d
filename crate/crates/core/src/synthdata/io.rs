// Dataset directories: PPM images, PGM masks, and a JSON-lines manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Sample, SceneSpec};
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One manifest line. Paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_path: String,
    pub mask_path: Option<String>,
    pub label: usize,
    #[serde(flatten)]
    pub scene: SceneSpec,
}

impl ManifestRow {
    pub(crate) fn for_sample(index: usize, sample: &Sample) -> Self {
        ManifestRow {
            image_path: format!("images/{index:05}.ppm"),
            mask_path: sample.mask.as_ref().map(|_| format!("masks/{index:05}.pgm")),
            label: sample.label,
            scene: sample.scene.clone(),
        }
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255) of an `H x W x 3` image in `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    out
}

pub(crate) fn encode_mask_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&v| v * 255));
    out
}

/// Parses a binary netpbm file with the given magic; returns (width, height, raster).
fn decode_netpbm<'a>(bytes: &'a [u8], magic: &str, path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let bad = |reason: &str| Error::MalformedImage { path: path.to_owned(), reason: reason.into() };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != magic {
        return Err(bad(&format!("expected magic {magic}, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    let channels = if magic == "P6" { 3 } else { 1 };
    let need = w * h * channels;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("raster shorter than header says"))?;
    Ok((w, h, raster))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
        _ => Error::Io(e),
    })
}

/// Reads a binary PPM into an `H x W x 3` image in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let (w, h, raster) = decode_netpbm(&bytes, "P6", path)?;
    Tensor::new(&[h, w, 3], raster.iter().map(|&b| b as f32 / 255.0).collect())
}

pub(crate) fn read_mask_pgm(path: &Path) -> Result<Mask> {
    let bytes = read_file(path)?;
    let (w, h, raster) = decode_netpbm(&bytes, "P5", path)?;
    let data = raster
        .iter()
        .map(|&b| match b {
            0 => Ok(0),
            255 => Ok(1),
            _ => Err(Error::MalformedImage {
                path: path.to_owned(),
                reason: format!("mask value {b} is neither 0 nor 255"),
            }),
        })
        .collect::<Result<Vec<u8>>>()?;
    Mask::new(h, w, data)
}

/// Writes images, masks and the manifest under `dir`, creating it if needed.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    if samples.iter().any(|s| s.mask.is_some()) {
        fs::create_dir_all(dir.join("masks"))?;
    }
    let mut manifest = String::new();
    for (i, sample) in samples.iter().enumerate() {
        let row = ManifestRow::for_sample(i, sample);
        fs::write(dir.join(&row.image_path), encode_ppm(&sample.image))?;
        if let (Some(mask), Some(path)) = (&sample.mask, &row.mask_path) {
            fs::write(dir.join(path), encode_mask_pgm(mask))?;
        }
        manifest.push_str(&serde_json::to_string(&row)?);
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads a directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = String::from_utf8(read_file(&manifest_path)?)
        .map_err(|_| Error::MalformedManifest { line: 1, reason: "not UTF-8".into() })?;
    let resolve = |p: &str| -> PathBuf { dir.join(p) };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let row: ManifestRow = serde_json::from_str(line)
                .map_err(|e| Error::MalformedManifest { line: i + 1, reason: e.to_string() })?;
            let image = read_ppm(&resolve(&row.image_path))?;
            let mask = row.mask_path.as_deref().map(|p| read_mask_pgm(&resolve(p))).transpose()?;
            Ok(Sample { image, mask, label: row.label, scene: row.scene })
        })
        .collect()
}
