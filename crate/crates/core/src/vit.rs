//! Miniature pre-norm Vision Transformer that records every block's
//! post-softmax attention map.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

const INIT_STD: f32 = 0.02;
const CHECKPOINT_FORMAT: &str = "relmap-vit";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        ViTConfig {
            image_size: 32,
            patch_size: 8,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 2,
            num_classes: 8,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} is not a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.depth == 0 || self.mlp_ratio == 0 {
            return bad("depth and mlp_ratio must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Xavier,
    Zeros,
    Ones,
}

fn param_specs(c: &ViTConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.embed_dim;
    let hidden = d * c.mlp_ratio;
    let mut specs = vec![
        ("patch.weight".to_string(), vec![c.patch_dim(), d], Init::Xavier),
        ("patch.bias".to_string(), vec![d], Init::Zeros),
        ("cls_token".to_string(), vec![1, d], Init::Normal),
        ("pos_embed".to_string(), vec![c.tokens(), d], Init::Normal),
    ];
    for b in 0..c.depth {
        let p = |s: &str| format!("blocks.{b}.{s}");
        specs.extend([
            (p("ln1.gamma"), vec![d], Init::Ones),
            (p("ln1.beta"), vec![d], Init::Zeros),
            (p("attn.qkv.weight"), vec![d, 3 * d], Init::Xavier),
            (p("attn.qkv.bias"), vec![3 * d], Init::Zeros),
            (p("attn.proj.weight"), vec![d, d], Init::Xavier),
            (p("attn.proj.bias"), vec![d], Init::Zeros),
            (p("ln2.gamma"), vec![d], Init::Ones),
            (p("ln2.beta"), vec![d], Init::Zeros),
            (p("mlp.fc1.weight"), vec![d, hidden], Init::Xavier),
            (p("mlp.fc1.bias"), vec![hidden], Init::Zeros),
            (p("mlp.fc2.weight"), vec![hidden, d], Init::Xavier),
            (p("mlp.fc2.bias"), vec![d], Init::Zeros),
        ]);
    }
    specs.extend([
        ("norm.gamma".to_string(), vec![d], Init::Ones),
        ("norm.beta".to_string(), vec![d], Init::Zeros),
        ("head.weight".to_string(), vec![d, c.num_classes], Init::Xavier),
        ("head.bias".to_string(), vec![c.num_classes], Init::Zeros),
    ]);
    specs
}

const BLOCK_BASE: usize = 4;
const PER_BLOCK: usize = 12;

/// Transformer weights in a fixed order (see [`ViTModel::param_names`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ViTModel {
    config: ViTConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Tape handles produced by [`ViTModel::forward_on`].
pub struct Forward<'t> {
    /// `num_classes` logits.
    pub logits: Var<'t>,
    /// One `heads x tokens x tokens` post-softmax map per block, each
    /// tracked for gradients.
    pub attention: Vec<Var<'t>>,
    /// Parameter leaves in [`ViTModel::param_names`] order.
    pub params: Vec<Var<'t>>,
}

impl ViTModel {
    /// Fresh weights: Xavier-uniform projection matrices, truncated normal
    /// (std 0.02, cut at two standard deviations) class token and position
    /// embeddings, zero biases, unit norm gains.
    pub fn init(config: ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, init) in param_specs(&config) {
            let numel: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
                Init::Xavier => {
                    let bound = (6.0 / (shape[0] + shape[1]) as f32).sqrt();
                    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Normal => (0..numel)
                    .map(|_| loop {
                        let v = normal.sample(&mut rng);
                        if v.abs() <= 2.0 * INIT_STD {
                            break v;
                        }
                    })
                    .collect(),
            };
            names.push(name);
            params.push(Tensor::new(&shape, data)?);
        }
        Ok(ViTModel { config, names, params })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Positional embedding rows (patches + class token).
    pub fn positional_tokens(&self) -> usize {
        self.params[3].shape()[0]
    }

    /// Hex SHA-256 over all weights in order; equal models hash equal.
    pub fn weights_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Records a forward pass on `tape`. Parameters become differentiable
    /// leaves when `trainable`, constants otherwise; attention maps are
    /// tracked for gradients either way.
    pub fn forward_on<'t>(
        &self,
        tape: &'t Tape,
        image: Var<'t>,
        trainable: bool,
    ) -> Result<Forward<'t>> {
        let c = &self.config;
        let s = image.shape();
        if s != [c.image_size, c.image_size, 3] {
            return Err(Error::dim(format!(
                "image shape {s:?} does not match configured size {}",
                c.image_size
            )));
        }
        let p: Vec<Var<'t>> = self
            .params
            .iter()
            .map(|t| if trainable { tape.var(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let (d, heads, dh, t) = (c.embed_dim, c.heads, c.head_dim(), c.tokens());

        let patches = image.patchify(c.patch_size)?;
        let embedded = patches.matmul(p[0])?.add(p[1])?;
        let mut x = tape.concat(&[p[2], embedded], 0)?.add(p[3])?;

        let mut attention = Vec::with_capacity(c.depth);
        let scale = 1.0 / (dh as f32).sqrt();
        for b in 0..c.depth {
            let w = &p[BLOCK_BASE + b * PER_BLOCK..BLOCK_BASE + (b + 1) * PER_BLOCK];
            let h = x.layer_norm(w[0], w[1])?;
            let qkv = h.matmul(w[2])?.add(w[3])?;
            let split = |offset: usize| -> Result<Var<'t>> {
                let parts = (0..heads)
                    .map(|hd| qkv.slice(1, offset + hd * dh, dh)?.reshape(&[1, t, dh]))
                    .collect::<Result<Vec<_>>>()?;
                tape.concat(&parts, 0)
            };
            let (q, k, v) = (split(0)?, split(d)?, split(2 * d)?);
            let scores = q.matmul(k.transpose()?)?.scale(scale);
            let mut a = scores.softmax()?;
            if !a.requires_grad() {
                a = tape.var((*a.value()).clone());
            }
            attention.push(a);
            let mixed = a.matmul(v)?;
            let merged = (0..heads)
                .map(|hd| mixed.slice(0, hd, 1)?.reshape(&[t, dh]))
                .collect::<Result<Vec<_>>>()?;
            let merged = tape.concat(&merged, 1)?;
            x = x.add(merged.matmul(w[4])?.add(w[5])?)?;

            let h = x.layer_norm(w[6], w[7])?;
            let h = h.matmul(w[8])?.add(w[9])?.gelu();
            x = x.add(h.matmul(w[10])?.add(w[11])?)?;
        }
        let tail = BLOCK_BASE + c.depth * PER_BLOCK;
        let cls = x.slice(0, 0, 1)?.layer_norm(p[tail], p[tail + 1])?;
        let logits = cls.matmul(p[tail + 2])?.add(p[tail + 3])?.reshape(&[c.num_classes])?;
        Ok(Forward { logits, attention, params: p })
    }

    /// Logits and detached attention maps for one image.
    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let tape = Tape::new();
        let f = self.forward_on(&tape, tape.constant(image.clone()), false)?;
        let logits = (*f.logits.value()).clone();
        let maps = f.attention.iter().map(|a| (*a.value()).clone()).collect();
        Ok((logits, maps))
    }

    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward(image)?.0)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0usize;
        for (name, t) in self.names.iter().zip(&self.params) {
            tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += t.numel() * 4;
        }
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors,
            blob_bytes: offset,
        };
        let mut bytes = serde_json::to_vec(&header)?;
        bytes.push(b'\n');
        bytes.reserve(offset);
        for t in &self.params {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path)?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CorruptHeader("no header terminator".into()))?;
        let text = std::str::from_utf8(&bytes[..nl])
            .map_err(|e| Error::CorruptHeader(format!("header is not UTF-8: {e}")))?;
        let header: CheckpointHeader =
            serde_json::from_str(text).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(Error::CorruptHeader(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        header.config.validate().map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        let specs = param_specs(&header.config);
        if specs.len() != header.tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "config implies {} tensors, header lists {}",
                specs.len(),
                header.tensors.len()
            )));
        }
        let blob = &bytes[nl + 1..];
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for ((name, shape, _), entry) in specs.into_iter().zip(&header.tensors) {
            if entry.name != name || entry.shape != shape {
                return Err(Error::ConfigMismatch(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name, entry.shape, name, shape
                )));
            }
            let numel: usize = shape.iter().product();
            let end = entry.offset + numel * 4;
            if end > blob.len() {
                return Err(Error::TruncatedBlob { expected: end, found: blob.len() });
            }
            let data = blob[entry.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            names.push(name);
            params.push(Tensor::new(&shape, data)?);
        }
        if blob.len() < header.blob_bytes {
            return Err(Error::TruncatedBlob { expected: header.blob_bytes, found: blob.len() });
        }
        Ok(ViTModel { config: header.config, names, params })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    config: ViTConfig,
    tensors: Vec<TensorEntry>,
    blob_bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Splits an `S x S x 3` image into `(S/patch)^2` row-major patches,
/// each flattened as (row, column, channel).
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let v = tape.constant(image.clone()).patchify(patch)?;
    Ok((*v.value()).clone())
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, image_size: usize, patch: usize) -> Result<Tensor> {
    let grid = image_size / patch.max(1);
    if patch == 0 || !image_size.is_multiple_of(patch) || tokens.shape() != [grid * grid, 3 * patch * patch]
    {
        return Err(Error::dim(format!(
            "tokens {:?} do not tile a {image_size}px image with patch {patch}",
            tokens.shape()
        )));
    }
    let idx = crate::tensor::patch_gather_index(image_size, patch);
    let mut out = vec![0.0; image_size * image_size * 3];
    for (&v, &i) in tokens.data().iter().zip(&idx) {
        out[i] = v;
    }
    Tensor::new(&[image_size, image_size, 3], out)
}
