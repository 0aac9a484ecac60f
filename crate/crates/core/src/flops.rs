//! Analytic FLOP counts for the encoder under a merge schedule.
//!
//! One multiply-accumulate counts as two FLOPs. Softmax and layer norms are
//! folded into a `10·N·d` term per block.

use serde::{Deserialize, Serialize};

use crate::encoder::{ModelDims, PROTECTED_TOKENS};
use crate::error::{Error, Result};
use crate::merging::{alternating_split, merge_count, source_count, MergeSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub tokens_in: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_layer: Vec<LayerFlops>,
    pub embedding: u64,
    /// Cost of the cosine-similarity matching, reported but not part of `total`.
    pub matching: u64,
    pub total: u64,
    pub schedule: MergeSchedule,
}

impl FlopsReport {
    pub fn gflops(&self) -> f64 {
        self.total as f64 * 1e-9
    }
}

/// `8·N·d² + 4·N²·d + 4·N·d·d_ff + 10·N·d`.
pub fn block_flops(tokens: usize, dims: &ModelDims) -> u64 {
    let n = tokens as u64;
    let d = dims.dim as u64;
    let f = dims.mlp_dim as u64;
    8 * n * d * d + 4 * n * n * d + 4 * n * d * f + 10 * n * d
}

pub fn embedding_flops(dims: &ModelDims) -> u64 {
    2 * (dims.tokens as u64 - 1) * dims.patch_len() as u64 * dims.dim as u64
}

/// Token counts `N_0..N_L` entering each layer and leaving the last one.
pub fn token_counts(schedule: &MergeSchedule, dims: &ModelDims) -> Result<Vec<usize>> {
    if schedule.len() != dims.layers {
        return Err(Error::config(format!(
            "schedule has {} entries for {} layers",
            schedule.len(),
            dims.layers
        )));
    }
    let mut counts = Vec::with_capacity(dims.layers + 1);
    let mut n = dims.tokens;
    counts.push(n);
    for &p in schedule.proportions() {
        n -= merge_count(p, n, source_count(n, PROTECTED_TOKENS));
        counts.push(n);
    }
    Ok(counts)
}

pub fn schedule_flops(schedule: &MergeSchedule, dims: &ModelDims) -> Result<FlopsReport> {
    let counts = token_counts(schedule, dims)?;
    let per_layer: Vec<LayerFlops> = counts[..dims.layers]
        .iter()
        .map(|&n| LayerFlops {
            tokens_in: n,
            flops: block_flops(n, dims),
        })
        .collect();
    let matching = counts
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| {
            let (a, b) = alternating_split(w[0], PROTECTED_TOKENS);
            2 * (a.len() * b.len() * dims.dim) as u64
        })
        .sum();
    let embedding = embedding_flops(dims);
    let total = embedding + per_layer.iter().map(|l| l.flops).sum::<u64>();
    Ok(FlopsReport {
        per_layer,
        embedding,
        matching,
        total,
        schedule: schedule.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelDims {
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

    #[test]
    fn tiny_block_count() {
        let dims = ModelDims { dim: 2, mlp_dim: 4, heads: 1, ..toy() };
        assert_eq!(block_flops(1, &dims), 92);
    }

    #[test]
    fn quadratic_term_quadruples() {
        let dims = toy();
        let quad = |n: usize| 4 * (n as u64).pow(2) * dims.dim as u64;
        let linear = |n: usize| block_flops(n, &dims) - quad(n);
        assert_eq!(quad(20), 4 * quad(10));
        assert_eq!(linear(20), 2 * linear(10));
    }

    #[test]
    fn identity_schedule_total() {
        let dims = toy();
        let r = schedule_flops(&MergeSchedule::zeros(4), &dims).unwrap();
        assert_eq!(r.total, 4 * block_flops(16, &dims) + embedding_flops(&dims));
        assert_eq!(r.matching, 0);
    }

    #[test]
    fn front_loading_is_cheaper() {
        let dims = toy();
        let early = MergeSchedule::new(vec![0.3, 0.0, 0.0, 0.0]).unwrap();
        let late = MergeSchedule::new(vec![0.0, 0.0, 0.0, 0.3]).unwrap();
        let fe = schedule_flops(&early, &dims).unwrap().total;
        let fl = schedule_flops(&late, &dims).unwrap().total;
        // early: 16,12,12,12 tokens in; late: 16 everywhere.
        let expected_early = block_flops(16, &dims) + 3 * block_flops(12, &dims) + embedding_flops(&dims);
        assert_eq!(fe, expected_early);
        assert!(fe < fl);
    }

    #[test]
    fn recurrence_caps_at_sources() {
        let dims = ModelDims { tokens: 4, ..toy() };
        // 3 non-protected tokens -> 2 sources; floor(0.3*4) = 1.
        let counts = token_counts(&MergeSchedule::uniform(4, 0.3).unwrap(), &dims).unwrap();
        assert_eq!(counts, vec![4, 3, 3, 3, 3]);
    }

    #[test]
    fn length_mismatch() {
        assert!(schedule_flops(&MergeSchedule::zeros(3), &toy()).is_err());
    }
}
