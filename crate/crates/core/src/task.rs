//! Synthetic classification task, prototype head and the objective evaluator.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit_tokens, ChannelSpec, Jscc};
use crate::container::{read_container, write_container, Tensor, DATASET_MAGIC};
use crate::encoder::{encode, Image, ModelDims, ModelWeights, TokenMatrix};
use crate::error::{Error, Result};
use crate::flops::{schedule_flops, token_counts};
use crate::merging::MergeSchedule;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub noise_level: f64,
}

impl DatasetSpec {
    /// Matches the image shape expected by `dims`.
    pub fn for_model(dims: &ModelDims, samples_per_class: usize, noise_level: f64) -> Self {
        let (height, width, channels) = dims.image_shape();
        DatasetSpec {
            num_classes: dims.num_classes,
            samples_per_class,
            height,
            width,
            channels,
            noise_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub examples: Vec<LabeledExample>,
}

/// Side length of the blocks in the class block pattern.
const BLOCK: usize = 4;

/// Class template: an oriented grating with class-specific frequency, phase
/// and per-channel phase offset, plus a random ±1 block pattern.
fn class_template(spec: &DatasetSpec, seed: u64, class: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class as u64));
    let angle = std::f64::consts::PI * (class as f64 + rng.random::<f64>() * 0.5) / spec.num_classes as f64;
    let freq = 1.0 + 2.0 * rng.random::<f64>();
    let phase = std::f64::consts::TAU * rng.random::<f64>();
    let channel_phase: Vec<f64> = (0..spec.channels).map(|_| std::f64::consts::TAU * rng.random::<f64>()).collect();
    let (bh, bw) = (spec.height.div_ceil(BLOCK), spec.width.div_ceil(BLOCK));
    let blocks: Vec<f64> = (0..bh * bw * spec.channels)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let extent = spec.height.max(spec.width) as f64;
    let mut out = Vec::with_capacity(spec.height * spec.width * spec.channels);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let t = (x as f64 * angle.cos() + y as f64 * angle.sin()) / extent;
            for (c, cp) in channel_phase.iter().enumerate() {
                let grating = (std::f64::consts::TAU * freq * t + phase + cp).sin();
                let block = blocks[((y / BLOCK) * bw + x / BLOCK) * spec.channels + c];
                out.push((0.5 * grating + 0.5 * block) as f32);
            }
        }
    }
    out
}

/// A class-balanced split. The class templates depend only on `seed`; the
/// per-sample pixel noise depends on `seed` and `split`, so splits drawn from
/// the same seed share templates but not noise.
pub fn generate_split(spec: &DatasetSpec, seed: u64, split: u64) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.height == 0 || spec.width == 0 || spec.channels == 0 {
        return Err(Error::config("dataset dimensions must be positive"));
    }
    if !(spec.noise_level >= 0.0 && spec.noise_level.is_finite()) {
        return Err(Error::config("noise_level must be a finite non-negative number"));
    }
    let templates: Vec<Vec<f32>> = (0..spec.num_classes).map(|c| class_template(spec, seed, c)).collect();
    let noise = Normal::new(0.0, spec.noise_level).map_err(|e| Error::config(e.to_string()))?;
    let split_seed = derive_seed(derive_seed(seed, u64::MAX), split);
    let mut examples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for s in 0..spec.samples_per_class {
        for (label, template) in templates.iter().enumerate() {
            let index = (s * spec.num_classes + label) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split_seed, index));
            let data = template
                .iter()
                .map(|&v| (v as f64 + noise.sample(&mut rng)) as f32)
                .collect();
            examples.push(LabeledExample {
                image: Image::new(spec.height, spec.width, spec.channels, data)?,
                label,
            });
        }
    }
    Ok(Dataset { spec: *spec, examples })
}

pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    generate_split(spec, seed, 0)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// A seeded subset of `n` examples, kept in original order.
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        Dataset {
            spec: self.spec,
            examples: idx.into_iter().map(|i| self.examples[i].clone()).collect(),
        }
    }

    /// Flat binary dump: tensors `images` (n x H x W x C) and `labels` (n,
    /// stored as f32), with the dataset spec in the header.
    pub fn write<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut meta = serde_json::Map::new();
        meta.insert("spec".into(), serde_json::to_value(self.spec)?);
        let s = &self.spec;
        let images = Tensor {
            name: "images".into(),
            shape: vec![self.len(), s.height, s.width, s.channels],
            data: self.examples.iter().flat_map(|e| e.image.data.iter().copied()).collect(),
        };
        let labels = Tensor {
            name: "labels".into(),
            shape: vec![self.len()],
            data: self.examples.iter().map(|e| e.label as f32).collect(),
        };
        write_container(out, DATASET_MAGIC, meta, &[images, labels])
    }

    pub fn read<R: std::io::Read>(input: R) -> Result<Dataset> {
        let (meta, tensors) = read_container(input, DATASET_MAGIC)?;
        let spec: DatasetSpec = serde_json::from_value(
            meta.get("spec").cloned().ok_or_else(|| Error::Format("header has no spec".into()))?,
        )?;
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        let images = find("images")?;
        let labels = find("labels")?;
        let per = spec.height * spec.width * spec.channels;
        if images.shape.len() != 4 || images.shape[1..] != [spec.height, spec.width, spec.channels] {
            return Err(Error::Shape(format!("images tensor has shape {:?}", images.shape)));
        }
        if labels.shape != [images.shape[0]] {
            return Err(Error::Shape(format!("labels tensor has shape {:?}", labels.shape)));
        }
        let examples = images
            .data
            .chunks_exact(per)
            .zip(&labels.data)
            .map(|(px, &label)| {
                Ok(LabeledExample {
                    image: Image::new(spec.height, spec.width, spec.channels, px.to_vec())?,
                    label: label as usize,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { spec, examples })
    }
}

/// Nearest-centroid head over mean-pooled final tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeHead {
    pub centroids: Vec<Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    dot / (na * nb)
}

impl PrototypeHead {
    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    /// Argmax cosine similarity; ties go to the lowest class id.
    pub fn classify_pooled(&self, pooled: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let s = cosine(pooled, centroid);
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }
}

pub fn classify(tokens: &TokenMatrix, head: &PrototypeHead) -> usize {
    head.classify_pooled(&tokens.mean_pool())
}

/// Class means of pooled embeddings from the unmerged, noiseless encoder.
pub fn fit_prototypes(weights: &ModelWeights, calibration: &Dataset) -> Result<PrototypeHead> {
    let classes = weights.dims.num_classes;
    let identity = MergeSchedule::zeros(weights.dims.layers);
    let pooled = calibration
        .examples
        .par_iter()
        .map(|e| {
            if e.label >= classes {
                return Err(Error::config(format!("label {} >= num_classes {classes}", e.label)));
            }
            Ok((e.label, encode(&e.image, weights, &identity)?.mean_pool()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![vec![0.0f64; weights.dims.dim]; classes];
    let mut counts = vec![0usize; classes];
    for (label, p) in pooled {
        counts[label] += 1;
        sums[label].iter_mut().zip(&p).for_each(|(s, v)| *s += v);
    }
    for (c, (sum, &count)) in sums.iter_mut().zip(&counts).enumerate() {
        if count == 0 {
            return Err(Error::config(format!("calibration set has no samples of class {c}")));
        }
        sum.iter_mut().for_each(|s| *s /= count as f64);
        if sum.iter().all(|&v| v.abs() < 1e-12) {
            return Err(Error::numeric(None, format!("centroid of class {c} is zero")));
        }
    }
    Ok(PrototypeHead { centroids: sums })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub flops: u64,
    pub schedule: MergeSchedule,
    /// `None` when evaluated without the channel.
    pub snr_db: Option<f64>,
    pub n_samples: usize,
}

/// Runs schedules through encoder → optional channel → head.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub weights: &'a ModelWeights,
    pub head: &'a PrototypeHead,
    pub dataset: &'a Dataset,
    pub channel: Option<ChannelSpec>,
}

impl<'a> Evaluator<'a> {
    pub fn new(weights: &'a ModelWeights, head: &'a PrototypeHead, dataset: &'a Dataset) -> Self {
        Evaluator {
            weights,
            head,
            dataset,
            channel: None,
        }
    }

    pub fn with_channel(self, channel: Option<ChannelSpec>) -> Self {
        Evaluator { channel, ..self }
    }

    /// Predicted label per dataset example, in dataset order. Sample `i`
    /// sees channel noise seeded by `derive_seed(channel.seed, i)`.
    pub fn predictions(&self, schedule: &MergeSchedule) -> Result<Vec<usize>> {
        let dims = &self.weights.dims;
        let codec = match &self.channel {
            Some(spec) => {
                let n_final = *token_counts(schedule, dims)?.last().expect("non-empty counts");
                Some(Jscc::new(spec.codec, spec.seed, n_final * dims.dim)?)
            }
            None => None,
        };
        self.dataset
            .examples
            .par_iter()
            .enumerate()
            .map(|(i, example)| {
                let mut tokens = encode(&example.image, self.weights, schedule)?;
                if let (Some(spec), Some(codec)) = (&self.channel, &codec) {
                    let sample_spec = spec.with_seed(derive_seed(spec.seed, i as u64));
                    tokens = transmit_tokens(&tokens, codec, &sample_spec)?;
                }
                Ok(classify(&tokens, self.head))
            })
            .collect()
    }

    /// Accuracy at each SNR in `snrs` for `channel` with its SNR replaced.
    /// Each image is encoded once; per-sample noise seeds match
    /// [`Evaluator::predictions`], so entry `k` equals `evaluate` under
    /// `channel` at `snrs[k]`.
    pub fn accuracy_at_snrs(&self, schedule: &MergeSchedule, channel: &ChannelSpec, snrs: &[f64]) -> Result<Vec<f64>> {
        let dims = &self.weights.dims;
        let n_final = *token_counts(schedule, dims)?.last().expect("non-empty counts");
        let codec = Jscc::new(channel.codec, channel.seed, n_final * dims.dim)?;
        let hits: Vec<Vec<bool>> = self
            .dataset
            .examples
            .par_iter()
            .enumerate()
            .map(|(i, example)| {
                let tokens = encode(&example.image, self.weights, schedule)?;
                let seed = derive_seed(channel.seed, i as u64);
                snrs.iter()
                    .map(|&snr_db| {
                        let spec = ChannelSpec { snr_db, ..channel.with_seed(seed) };
                        let received = transmit_tokens(&tokens, &codec, &spec)?;
                        Ok(classify(&received, self.head) == example.label)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = self.dataset.len();
        Ok((0..snrs.len())
            .map(|k| {
                let correct = hits.iter().filter(|h| h[k]).count();
                if n == 0 {
                    0.0
                } else {
                    correct as f64 / n as f64
                }
            })
            .collect())
    }

    pub fn evaluate(&self, schedule: &MergeSchedule) -> Result<EvalResult> {
        let flops = schedule_flops(schedule, &self.weights.dims)?.total;
        let predictions = self.predictions(schedule)?;
        let correct = predictions
            .iter()
            .zip(&self.dataset.examples)
            .filter(|(p, e)| **p == e.label)
            .count();
        let n = self.dataset.len();
        Ok(EvalResult {
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            flops,
            schedule: schedule.clone(),
            snr_db: self.channel.map(|c| c.snr_db),
            n_samples: n,
        })
    }
}
