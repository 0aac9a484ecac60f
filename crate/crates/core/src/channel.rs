//! Linear JSCC mapping, unit-power normalization and the AWGN channel.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::TokenMatrix;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::tensor::Matrix;

/// Floor for the normalization scale of an all-zero input.
pub const SCALE_FLOOR: f64 = 1e-12;

const CODEC_STREAM: u64 = 0xC0DE_C0DE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Codec {
    Identity,
    /// Seeded random map with orthonormal rows onto `dim` reals.
    Linear { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub snr_db: f64,
    pub seed: u64,
    pub codec: Codec,
}

impl ChannelSpec {
    pub fn identity(snr_db: f64, seed: u64) -> Self {
        ChannelSpec {
            snr_db,
            seed,
            codec: Codec::Identity,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ChannelSpec { seed, ..*self }
    }
}

/// Complex channel symbols plus the normalization scale the decoder needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector {
    pub symbols: Vec<Complex64>,
    pub scale: f64,
}

impl SymbolVector {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn average_power(&self) -> f64 {
        if self.symbols.is_empty() {
            return 0.0;
        }
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// `σ² = 10^(−SNR_dB / 10)` for unit signal power.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// A `rows x cols` map with orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LinearMap {
    /// Gaussian rows orthonormalized by two passes of modified Gram-Schmidt.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || rows > cols {
            return Err(Error::config(format!(
                "codec dimension {rows} must be in 1..={cols}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in 0..rows {
            for _pass in 0..2 {
                for j in 0..i {
                    let (head, tail) = data.split_at_mut(i * cols);
                    let prev = &head[j * cols..(j + 1) * cols];
                    let cur = &mut tail[..cols];
                    let proj: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
                    cur.iter_mut().zip(prev).for_each(|(c, p)| *c -= proj * p);
                }
            }
            let row = &mut data[i * cols..(i + 1) * cols];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-10 {
                return Err(Error::numeric(None, "degenerate random codec basis"));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(LinearMap { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            out.iter_mut().zip(self.row(i)).for_each(|(o, a)| *o += yi * a);
        }
        out
    }
}

/// The codec prepared for one flattened token length.
#[derive(Debug, Clone)]
pub struct Jscc {
    input_len: usize,
    map: Option<LinearMap>,
}

impl Jscc {
    pub fn new(codec: Codec, seed: u64, input_len: usize) -> Result<Self> {
        let map = match codec {
            Codec::Identity => None,
            Codec::Linear { dim } => Some(LinearMap::random(
                dim,
                input_len,
                derive_seed(seed, CODEC_STREAM),
            )?),
        };
        Ok(Jscc { input_len, map })
    }

    /// Reals per codeword before complex packing.
    pub fn code_len(&self) -> usize {
        self.map.as_ref().map_or(self.input_len, LinearMap::rows)
    }

    pub fn encode(&self, tokens: &TokenMatrix) -> Result<SymbolVector> {
        let flat: Vec<f64> = tokens.matrix().as_slice().iter().map(|&v| v as f64).collect();
        if flat.len() != self.input_len {
            return Err(Error::Shape(format!(
                "codec prepared for {} reals, got {}",
                self.input_len,
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(None, "non-finite tokens at the channel input"));
        }
        let code = match &self.map {
            Some(m) => m.apply(&flat),
            None => flat,
        };
        let mut symbols: Vec<Complex64> = code
            .chunks(2)
            .map(|c| Complex64::new(c[0], c.get(1).copied().unwrap_or(0.0)))
            .collect();
        let q = symbols.len().max(1) as f64;
        let power = symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / q;
        let scale = power.sqrt().max(SCALE_FLOOR);
        symbols.iter_mut().for_each(|s| *s /= scale);
        Ok(SymbolVector { symbols, scale })
    }

    pub fn decode(&self, received: &SymbolVector, rows: usize, cols: usize, protected: usize) -> Result<TokenMatrix> {
        if rows * cols != self.input_len {
            return Err(Error::Shape(format!(
                "cannot reshape {} reals into {rows}x{cols}",
                self.input_len
            )));
        }
        let code_len = self.code_len();
        if received.len() != code_len.div_ceil(2) {
            return Err(Error::Shape(format!(
                "{} symbols received, codec emits {}",
                received.len(),
                code_len.div_ceil(2)
            )));
        }
        let mut code: Vec<f64> = received
            .symbols
            .iter()
            .flat_map(|s| [s.re * received.scale, s.im * received.scale])
            .collect();
        code.truncate(code_len);
        let flat = match &self.map {
            Some(m) => m.apply_transpose(&code),
            None => code,
        };
        let data = flat.into_iter().map(|v| v as f32).collect();
        TokenMatrix::new(Matrix::from_vec(rows, cols, data)?, protected)
    }
}

pub fn jscc_encode(tokens: &TokenMatrix, spec: &ChannelSpec) -> Result<SymbolVector> {
    Jscc::new(spec.codec, spec.seed, tokens.len() * tokens.dim())?.encode(tokens)
}

pub fn jscc_decode(
    received: &SymbolVector,
    spec: &ChannelSpec,
    rows: usize,
    cols: usize,
    protected: usize,
) -> Result<TokenMatrix> {
    Jscc::new(spec.codec, spec.seed, rows * cols)?.decode(received, rows, cols, protected)
}

/// Adds circularly-symmetric complex Gaussian noise of variance `σ²` per
/// symbol (`σ²/2` per real component), seeded by `spec.seed`.
pub fn awgn_transmit(symbols: &SymbolVector, spec: &ChannelSpec) -> SymbolVector {
    let sigma2 = snr_to_sigma2(spec.snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("finite noise deviation");
    let noisy = symbols
        .symbols
        .iter()
        .map(|s| s + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    SymbolVector {
        symbols: noisy,
        scale: symbols.scale,
    }
}

/// encode → AWGN → decode for one token matrix.
pub fn transmit_tokens(tokens: &TokenMatrix, codec: &Jscc, spec: &ChannelSpec) -> Result<TokenMatrix> {
    let sent = codec.encode(tokens)?;
    let received = awgn_transmit(&sent, spec);
    codec.decode(&received, tokens.len(), tokens.dim(), tokens.protected())
}
