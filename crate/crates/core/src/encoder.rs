//! A small pre-norm transformer encoder with a per-layer merge hook.
//!
//! Each block is `z + MHSA(LN1(z))` followed by `z + MLP(LN2(z))` with GELU.
//! The block also returns `LN1(z_in) · W_V`, the Value rows the merge step
//! uses as its similarity source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::merging::{merge_layer, MergeAssignment, MergeSchedule};
use crate::tensor::Matrix;

/// Leading tokens that never take part in merging (the class token).
pub const PROTECTED_TOKENS: usize = 1;

const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    /// Patches plus the class token.
    pub tokens: usize,
    pub patch: usize,
    pub channels: usize,
    pub num_classes: usize,
}

impl ModelDims {
    /// The ViT-Base/16 shape at 224x224.
    pub fn vit_base_16() -> Self {
        ModelDims {
            layers: 12,
            dim: 768,
            heads: 12,
            mlp_dim: 3072,
            tokens: 197,
            patch: 16,
            channels: 3,
            num_classes: 1000,
        }
    }

    /// Four layers, width 32, 15 patches of 4x4x3 and 8 classes.
    pub fn toy() -> Self {
        ModelDims {
            layers: 4,
            dim: 32,
            heads: 4,
            mlp_dim: 128,
            tokens: 16,
            patch: 4,
            channels: 3,
            num_classes: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
            ("patch", self.patch),
            ("channels", self.channels),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.tokens < 2 {
            return Err(Error::config("tokens must be at least 2 (class token plus one patch)"));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Patch grid `(rows, cols)`: the most square factorization of the patch
    /// count with `rows <= cols`.
    pub fn grid(&self) -> (usize, usize) {
        let patches = self.tokens - 1;
        let mut rows = (patches as f64).sqrt().floor() as usize;
        while rows > 1 && patches % rows != 0 {
            rows -= 1;
        }
        let rows = rows.max(1);
        (rows, patches / rows)
    }

    /// Expected input `(height, width, channels)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (gh, gw) = self.grid();
        (gh * self.patch, gw * self.patch, self.channels)
    }
}

/// An `H x W x C` image stored in row-major HWC order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Token embeddings flowing through the encoder. The first `protected` rows
/// are exempt from merging.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    tokens: Matrix,
    protected: usize,
}

impl TokenMatrix {
    pub fn new(tokens: Matrix, protected: usize) -> Result<Self> {
        if protected > tokens.rows() {
            return Err(Error::Shape(format!(
                "{protected} protected tokens but only {} rows",
                tokens.rows()
            )));
        }
        Ok(TokenMatrix { tokens, protected })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.tokens
    }

    pub fn into_matrix(self) -> Matrix {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn protected(&self) -> usize {
        self.protected
    }

    /// Mean over all rows, in `f64`.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim()];
        for i in 0..self.len() {
            for (a, &v) in acc.iter_mut().zip(self.tokens.row(i)) {
                *a += v as f64;
            }
        }
        let n = self.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl LayerNormParams {
    pub fn identity(dim: usize) -> Self {
        LayerNormParams {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNormParams {
            scale: vec![0.0; dim],
            shift: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub norm_attn: LayerNormParams,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
    pub norm_mlp: LayerNormParams,
    pub fc1: Matrix,
    pub fc1_bias: Vec<f32>,
    pub fc2: Matrix,
    pub fc2_bias: Vec<f32>,
}

impl LayerWeights {
    pub fn zeros(dims: &ModelDims) -> Self {
        let d = dims.dim;
        LayerWeights {
            norm_attn: LayerNormParams::zeros(d),
            query: Matrix::zeros(d, d),
            key: Matrix::zeros(d, d),
            value: Matrix::zeros(d, d),
            output: Matrix::zeros(d, d),
            norm_mlp: LayerNormParams::zeros(d),
            fc1: Matrix::zeros(d, dims.mlp_dim),
            fc1_bias: vec![0.0; dims.mlp_dim],
            fc2: Matrix::zeros(dims.mlp_dim, d),
            fc2_bias: vec![0.0; d],
        }
    }
}

/// Immutable encoder parameters. Projections multiply row vectors from the
/// right: `y = x · W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub dims: ModelDims,
    pub patch_projection: Matrix,
    pub positional_embeddings: Matrix,
    pub class_token: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: LayerNormParams,
}

impl ModelWeights {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let d = dims.dim;
        Ok(ModelWeights {
            dims,
            patch_projection: Matrix::zeros(dims.patch_len(), d),
            positional_embeddings: Matrix::zeros(dims.tokens, d),
            class_token: vec![0.0; d],
            layers: (0..dims.layers).map(|_| LayerWeights::zeros(&dims)).collect(),
            final_norm: LayerNormParams::identity(d),
        })
    }

    /// Seeded initializer: matrices, class token and positional embeddings
    /// drawn from `N(0, 1/d)`; layer norms start at identity, biases at zero.
    pub fn random(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, (1.0 / dims.dim as f64).sqrt())
            .map_err(|e| Error::config(e.to_string()))?;
        let mut fill = |values: &mut [f32]| {
            for v in values.iter_mut() {
                *v = normal.sample(&mut rng) as f32;
            }
        };
        fill(w.patch_projection.as_mut_slice());
        fill(w.positional_embeddings.as_mut_slice());
        fill(&mut w.class_token);
        for layer in &mut w.layers {
            layer.norm_attn = LayerNormParams::identity(dims.dim);
            layer.norm_mlp = LayerNormParams::identity(dims.dim);
            fill(layer.query.as_mut_slice());
            fill(layer.key.as_mut_slice());
            fill(layer.value.as_mut_slice());
            fill(layer.output.as_mut_slice());
            fill(layer.fc1.as_mut_slice());
            fill(layer.fc2.as_mut_slice());
        }
        Ok(w)
    }

    /// Checks every tensor shape against `dims` and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let dims = &self.dims;
        dims.validate()?;
        let d = dims.dim;
        let check = |name: &str, m: &Matrix, shape: (usize, usize)| -> Result<()> {
            if m.shape() != shape {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::numeric(None, format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        let check_vec = |name: &str, v: &[f32], len: usize| -> Result<()> {
            if v.len() != len {
                return Err(Error::Shape(format!("{name} has {} entries, expected {len}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(None, format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        check("patch_projection", &self.patch_projection, (dims.patch_len(), d))?;
        check("positional_embeddings", &self.positional_embeddings, (dims.tokens, d))?;
        check_vec("class_token", &self.class_token, d)?;
        if self.layers.len() != dims.layers {
            return Err(Error::Shape(format!(
                "{} layers stored, dims declare {}",
                self.layers.len(),
                dims.layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            check_vec(&format!("layer {i} norm_attn.scale"), &l.norm_attn.scale, d)?;
            check_vec(&format!("layer {i} norm_attn.shift"), &l.norm_attn.shift, d)?;
            check(&format!("layer {i} query"), &l.query, (d, d))?;
            check(&format!("layer {i} key"), &l.key, (d, d))?;
            check(&format!("layer {i} value"), &l.value, (d, d))?;
            check(&format!("layer {i} output"), &l.output, (d, d))?;
            check_vec(&format!("layer {i} norm_mlp.scale"), &l.norm_mlp.scale, d)?;
            check_vec(&format!("layer {i} norm_mlp.shift"), &l.norm_mlp.shift, d)?;
            check(&format!("layer {i} fc1"), &l.fc1, (d, dims.mlp_dim))?;
            check_vec(&format!("layer {i} fc1_bias"), &l.fc1_bias, dims.mlp_dim)?;
            check(&format!("layer {i} fc2"), &l.fc2, (dims.mlp_dim, d))?;
            check_vec(&format!("layer {i} fc2_bias"), &l.fc2_bias, d)?;
        }
        check_vec("final_norm.scale", &self.final_norm.scale, d)?;
        check_vec("final_norm.shift", &self.final_norm.shift, d)?;
        Ok(())
    }
}

pub fn layer_norm(x: &Matrix, params: &LayerNormParams) -> Matrix {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / cols as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = ((row[j] as f64 - mean) * inv * params.scale[j] as f64 + params.shift[j] as f64) as f32;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Cuts the image into `P x P` patches (row-major over the grid, pixels in
/// `(y, x, c)` order), projects them, prepends the class token and adds
/// positional embeddings.
pub fn patch_embed(image: &Image, weights: &ModelWeights) -> Result<TokenMatrix> {
    let dims = &weights.dims;
    let p = dims.patch;
    if image.channels != dims.channels {
        return Err(Error::config(format!(
            "image has {} channels, model expects {}",
            image.channels, dims.channels
        )));
    }
    if image.height % p != 0 || image.width % p != 0 {
        return Err(Error::config(format!(
            "image {}x{} is not divisible into {p}x{p} patches",
            image.height, image.width
        )));
    }
    let (gh, gw) = (image.height / p, image.width / p);
    if gh * gw + 1 != dims.tokens {
        return Err(Error::config(format!(
            "image yields {} patches, model expects {}",
            gh * gw,
            dims.tokens - 1
        )));
    }
    let mut patches = Matrix::zeros(gh * gw, dims.patch_len());
    for gy in 0..gh {
        for gx in 0..gw {
            let row = patches.row_mut(gy * gw + gx);
            let mut k = 0;
            for y in 0..p {
                for x in 0..p {
                    for c in 0..dims.channels {
                        row[k] = image.pixel(gy * p + y, gx * p + x, c);
                        k += 1;
                    }
                }
            }
        }
    }
    let projected = patches.matmul(&weights.patch_projection)?;
    let mut tokens = Matrix::zeros(dims.tokens, dims.dim);
    for (j, t) in tokens.row_mut(0).iter_mut().enumerate() {
        *t = (weights.class_token[j] as f64 + weights.positional_embeddings.get(0, j) as f64) as f32;
    }
    for i in 0..gh * gw {
        let pos = weights.positional_embeddings.row(i + 1);
        let src = projected.row(i);
        for (j, t) in tokens.row_mut(i + 1).iter_mut().enumerate() {
            *t = (src[j] as f64 + pos[j] as f64) as f32;
        }
    }
    TokenMatrix::new(tokens, PROTECTED_TOKENS)
}

fn self_attention(x: &Matrix, layer: &LayerWeights, heads: usize) -> Result<(Matrix, Matrix)> {
    let n = x.rows();
    let d = x.cols();
    let dh = d / heads;
    let q = x.matmul(&layer.query)?;
    let k = x.matmul(&layer.key)?;
    let v = x.matmul(&layer.value)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Matrix::zeros(n, d);
    let mut weights = vec![0.0f64; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let mut max = f64::NEG_INFINITY;
            for (j, w) in weights.iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                *w = qi.iter().zip(kj).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() * scale;
                max = max.max(*w);
            }
            let mut total = 0.0;
            for w in weights.iter_mut() {
                *w = (*w - max).exp();
                total += *w;
            }
            let mut acc = vec![0.0f64; dh];
            for (j, &w) in weights.iter().enumerate() {
                let vj = &v.row(j)[cols.clone()];
                for (a, &b) in acc.iter_mut().zip(vj) {
                    *a += w * b as f64;
                }
            }
            for (o, a) in context.row_mut(i)[cols.clone()].iter_mut().zip(&acc) {
                *o = (a / total) as f32;
            }
        }
    }
    Ok((context.matmul(&layer.output)?, v))
}

fn mlp(x: &Matrix, layer: &LayerWeights) -> Result<Matrix> {
    let mut hidden = x.matmul(&layer.fc1)?;
    for i in 0..hidden.rows() {
        for (h, &b) in hidden.row_mut(i).iter_mut().zip(&layer.fc1_bias) {
            *h = gelu(*h as f64 + b as f64) as f32;
        }
    }
    let mut out = hidden.matmul(&layer.fc2)?;
    for i in 0..out.rows() {
        for (o, &b) in out.row_mut(i).iter_mut().zip(&layer.fc2_bias) {
            *o = (*o as f64 + b as f64) as f32;
        }
    }
    Ok(out)
}

fn add_residual(base: &Matrix, delta: &Matrix) -> Matrix {
    let mut out = base.clone();
    for (o, &d) in out.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *o = (*o as f64 + d as f64) as f32;
    }
    out
}

/// One encoder block. Returns the block output and the Value matrix computed
/// from the block input.
pub fn block_forward(z: &TokenMatrix, layer_index: usize, weights: &ModelWeights) -> Result<(TokenMatrix, Matrix)> {
    let layer = weights.layers.get(layer_index).ok_or_else(|| {
        Error::config(format!(
            "layer {layer_index} out of range for {} layers",
            weights.layers.len()
        ))
    })?;
    let x = z.matrix();
    if !x.is_finite() {
        return Err(Error::numeric(Some(layer_index), "non-finite block input"));
    }
    let normed = layer_norm(x, &layer.norm_attn);
    let (attn, values) = self_attention(&normed, layer, weights.dims.heads)?;
    let after_attn = add_residual(x, &attn);
    let normed = layer_norm(&after_attn, &layer.norm_mlp);
    let out = add_residual(&after_attn, &mlp(&normed, layer)?);
    if !out.is_finite() || !values.is_finite() {
        return Err(Error::numeric(Some(layer_index), "non-finite block output"));
    }
    Ok((TokenMatrix::new(out, z.protected())?, values))
}

fn check_schedule(schedule: &MergeSchedule, weights: &ModelWeights) -> Result<()> {
    if schedule.len() != weights.dims.layers {
        return Err(Error::config(format!(
            "schedule has {} entries for {} layers",
            schedule.len(),
            weights.dims.layers
        )));
    }
    Ok(())
}

/// Full encoder with merging after every block, returning the final-normed
/// tokens and the per-layer merge assignments.
pub fn encode_with_trace(
    image: &Image,
    weights: &ModelWeights,
    schedule: &MergeSchedule,
) -> Result<(TokenMatrix, Vec<MergeAssignment>)> {
    check_schedule(schedule, weights)?;
    let mut z = patch_embed(image, weights)?;
    let mut trace = Vec::with_capacity(weights.dims.layers);
    for (layer, &p) in schedule.proportions().iter().enumerate() {
        let (out, values) = block_forward(&z, layer, weights)?;
        let (merged, assignment) = merge_layer(&out, &values, p)?;
        z = merged;
        trace.push(assignment);
    }
    let protected = z.protected();
    let normed = layer_norm(z.matrix(), &weights.final_norm);
    Ok((TokenMatrix::new(normed, protected)?, trace))
}

pub fn encode(image: &Image, weights: &ModelWeights, schedule: &MergeSchedule) -> Result<TokenMatrix> {
    encode_with_trace(image, weights, schedule).map(|(z, _)| z)
}

/// Encoder without any merge hook.
pub fn forward_plain(image: &Image, weights: &ModelWeights) -> Result<TokenMatrix> {
    let mut z = patch_embed(image, weights)?;
    for layer in 0..weights.dims.layers {
        z = block_forward(&z, layer, weights)?.0;
    }
    let protected = z.protected();
    TokenMatrix::new(layer_norm(z.matrix(), &weights.final_norm), protected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            layers: 2,
            dim: 4,
            heads: 2,
            mlp_dim: 8,
            tokens: 5,
            patch: 1,
            channels: 1,
            num_classes: 2,
        }
    }

    #[test]
    fn dims_validation() {
        let mut d = tiny_dims();
        assert!(d.validate().is_ok());
        d.heads = 3;
        assert!(d.validate().is_err());
        d = tiny_dims();
        d.tokens = 1;
        assert!(d.validate().is_err());
        d = tiny_dims();
        d.layers = 0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn grid_factorization() {
        assert_eq!(ModelDims::vit_base_16().grid(), (14, 14));
        let toy = ModelDims { tokens: 16, ..tiny_dims() };
        assert_eq!(toy.grid(), (3, 5));
        let prime = ModelDims { tokens: 8, ..tiny_dims() };
        assert_eq!(prime.grid(), (1, 7));
    }

    #[test]
    fn zero_weights_give_class_token_row() {
        let dims = ModelDims { tokens: 5, patch: 2, channels: 3, ..tiny_dims() };
        let mut w = ModelWeights::zeros(dims).unwrap();
        w.class_token = vec![1.0, -2.0, 3.0, 0.5];
        let (h, wd, c) = dims.image_shape();
        let z = patch_embed(&Image::zeros(h, wd, c), &w).unwrap();
        assert_eq!(z.len(), 5);
        assert_eq!(z.protected(), 1);
        assert_eq!(z.matrix().row(0), &[1.0, -2.0, 3.0, 0.5]);
        for i in 1..5 {
            assert!(z.matrix().row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_patches_copy_pixels() {
        // 2x2 image, 3 channels, 1x1 patches, identity projection with d = C.
        let dims = ModelDims {
            layers: 1,
            dim: 3,
            heads: 1,
            mlp_dim: 2,
            tokens: 5,
            patch: 1,
            channels: 3,
            num_classes: 2,
        };
        let mut w = ModelWeights::zeros(dims).unwrap();
        w.patch_projection = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        for i in 0..5 {
            for j in 0..3 {
                w.positional_embeddings.set(i, j, (10 * i + j) as f32);
            }
        }
        let pixels: Vec<f32> = (0..12).map(|v| v as f32 * 0.5).collect();
        let img = Image::new(2, 2, 3, pixels.clone()).unwrap();
        let z = patch_embed(&img, &w).unwrap();
        for patch in 0..4 {
            for c in 0..3 {
                let expected = pixels[patch * 3 + c] + (10 * (patch + 1) + c) as f32;
                assert_eq!(z.matrix().get(patch + 1, c), expected);
            }
        }
        assert_eq!(z.matrix().row(0), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn indivisible_image_rejected() {
        let dims = ModelDims { patch: 2, tokens: 5, ..tiny_dims() };
        let w = ModelWeights::zeros(dims).unwrap();
        assert!(matches!(patch_embed(&Image::zeros(5, 4, 1), &w), Err(Error::Config(_))));
        assert!(matches!(patch_embed(&Image::zeros(4, 4, 2), &w), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_block_is_residual_only() {
        let w = ModelWeights::zeros(tiny_dims()).unwrap();
        let z = TokenMatrix::new(
            Matrix::from_vec(5, 4, (0..20).map(|v| v as f32 * 0.1 - 1.0).collect()).unwrap(),
            1,
        )
        .unwrap();
        let (out, v) = block_forward(&z, 0, &w).unwrap();
        assert_eq!(out, z);
        assert!(v.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_token_block_closed_form() {
        // d = 2, one head, one token: attention output is v·W_O.
        let dims = ModelDims {
            layers: 1,
            dim: 2,
            heads: 1,
            mlp_dim: 2,
            tokens: 2,
            patch: 1,
            channels: 1,
            num_classes: 2,
        };
        let mut w = ModelWeights::zeros(dims).unwrap();
        let l = &mut w.layers[0];
        l.norm_attn = LayerNormParams::identity(2);
        l.norm_mlp = LayerNormParams::identity(2);
        l.query = Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]).unwrap();
        l.key = Matrix::from_rows(&[vec![-0.5, 0.2], vec![0.7, 0.1]]).unwrap();
        l.value = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        l.output = Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 2.0]]).unwrap();
        l.fc1 = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        l.fc1_bias = vec![0.5, -0.5];
        l.fc2 = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, -1.0]]).unwrap();
        l.fc2_bias = vec![0.25, 0.0];
        let z = TokenMatrix::new(Matrix::from_rows(&[vec![3.0, 1.0]]).unwrap(), 0).unwrap();
        let (out, v) = block_forward(&z, 0, &w).unwrap();

        // LN([3,1]) = [1,-1] (up to eps); V = [1,-1]·W_V = [2, 1.5].
        let s = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        let x = [s, -s];
        let v_exp = [x[0] * 1.0 + x[1] * -1.0, x[0] * 2.0 + x[1] * 0.5];
        assert!((v.get(0, 0) as f64 - v_exp[0]).abs() < 1e-6);
        assert!((v.get(0, 1) as f64 - v_exp[1]).abs() < 1e-6);
        let attn = [v_exp[0] * 0.5, v_exp[1] * 2.0];
        let h = [3.0 + attn[0], 1.0 + attn[1]];
        let mean = (h[0] + h[1]) / 2.0;
        let sd = ((h[0] - mean).powi(2) + (h[1] - mean).powi(2)) / 2.0;
        let inv = 1.0 / (sd + LAYER_NORM_EPS).sqrt();
        let y = [(h[0] - mean) * inv, (h[1] - mean) * inv];
        let g = [gelu(y[0] + 0.5), gelu(y[1] - 0.5)];
        let m = [g[0] + 0.25, g[0] - g[1]];
        let expected = [h[0] + m[0], h[1] + m[1]];
        for j in 0..2 {
            let got = out.matrix().get(0, j) as f64;
            assert!((got - expected[j]).abs() < 1e-5 * (1.0 + expected[j].abs()), "{j}: {got} vs {}", expected[j]);
        }
    }

    #[test]
    fn duplicate_rows_stay_duplicate() {
        let dims = tiny_dims();
        let w = ModelWeights::random(dims, 3).unwrap();
        let mut m = Matrix::zeros(5, 4);
        for i in 0..5 {
            for j in 0..4 {
                m.set(i, j, ((i * 7 + j * 3) % 5) as f32 * 0.3 - 0.5);
            }
        }
        let r2 = m.row(2).to_vec();
        m.row_mut(4).copy_from_slice(&r2);
        let z = TokenMatrix::new(m, 1).unwrap();
        let (out, v) = block_forward(&z, 1, &w).unwrap();
        assert_eq!(out.matrix().row(2), out.matrix().row(4));
        assert_eq!(v.row(2), v.row(4));
    }

    #[test]
    fn overflow_reports_layer() {
        let dims = tiny_dims();
        let mut w = ModelWeights::random(dims, 1).unwrap();
        w.layers[1].fc2_bias = vec![f32::MAX; 4];
        let z = TokenMatrix::new(Matrix::from_vec(5, 4, vec![f32::MAX; 20]).unwrap(), 1).unwrap();
        match block_forward(&z, 1, &w) {
            Err(Error::Numeric { layer: Some(1), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schedule_length_checked() {
        let dims = tiny_dims();
        let w = ModelWeights::random(dims, 1).unwrap();
        let (h, wd, c) = dims.image_shape();
        let img = Image::zeros(h, wd, c);
        let bad = MergeSchedule::zeros(3);
        assert!(matches!(encode(&img, &w, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn random_weights_validate() {
        let w = ModelWeights::random(tiny_dims(), 9).unwrap();
        assert!(w.validate().is_ok());
        let mut broken = w.clone();
        broken.layers[0].key = Matrix::zeros(3, 3);
        assert!(broken.validate().is_err());
        let mut broken = w;
        broken.class_token[0] = f32::NAN;
        assert!(broken.validate().is_err());
    }
}
