//! Training-free bipartite token merging.
//!
//! Non-protected tokens are split alternately into sources and destinations.
//! Every source is matched to its most similar destination (cosine similarity
//! of Value rows), the `r` best-scoring sources are merged, and each receiving
//! destination is replaced by the norm-weighted combination of its group.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoder::TokenMatrix;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix};

/// Largest admissible per-layer merge proportion.
pub const MAX_PROPORTION: f64 = 0.3;

/// Additive stabilizer in the norm-weighted merge denominator.
pub const MERGE_EPSILON: f64 = 1e-6;

/// Value rows with a norm below this have cosine similarity 0 to everything.
pub const ZERO_NORM: f64 = 1e-12;

/// Absorbs representation error in `p * n` before flooring (0.29 * 100 is
/// 28.999999999999996 in binary).
const FLOOR_SLACK: f64 = 1e-9;

/// Per-layer merge proportions `p_1..p_L`, each in `[0, 0.3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MergeSchedule {
    proportions: Vec<f64>,
}

impl MergeSchedule {
    pub fn new(proportions: Vec<f64>) -> Result<Self> {
        for (layer, &p) in proportions.iter().enumerate() {
            if !p.is_finite() || !(0.0..=MAX_PROPORTION).contains(&p) {
                return Err(Error::config(format!(
                    "merge proportion {p} at layer {layer} is outside [0, {MAX_PROPORTION}]"
                )));
            }
        }
        Ok(MergeSchedule { proportions })
    }

    pub fn zeros(layers: usize) -> Self {
        MergeSchedule {
            proportions: vec![0.0; layers],
        }
    }

    pub fn uniform(layers: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; layers])
    }

    pub fn len(&self) -> usize {
        self.proportions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proportions.is_empty()
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn is_identity(&self) -> bool {
        self.proportions.iter().all(|&p| p == 0.0)
    }
}

impl TryFrom<Vec<f64>> for MergeSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        MergeSchedule::new(v)
    }
}

impl From<MergeSchedule> for Vec<f64> {
    fn from(s: MergeSchedule) -> Self {
        s.proportions
    }
}

/// Number of sources produced by [`alternating_split`].
pub fn source_count(n: usize, protected: usize) -> usize {
    n.saturating_sub(protected).div_ceil(2)
}

/// `r = min(floor(p * n_prev), sources)`.
pub fn merge_count(p: f64, n_prev: usize, sources: usize) -> usize {
    let raw = (p * n_prev as f64 + FLOOR_SLACK).floor();
    (raw.max(0.0) as usize).min(sources)
}

/// Token count after one merge step over `n` tokens.
pub fn tokens_after_merge(p: f64, n: usize, protected: usize) -> usize {
    n - merge_count(p, n, source_count(n, protected))
}

/// Splits the non-protected range into alternating sources (first, third, ...)
/// and destinations (second, fourth, ...). Indices are 0-based positions in
/// the current sequence.
pub fn alternating_split(n: usize, protected: usize) -> (Vec<usize>, Vec<usize>) {
    let start = protected.min(n);
    let sources = (start..n).step_by(2).collect();
    let destinations = (start + 1..n).step_by(2).collect();
    (sources, destinations)
}

/// Cosine similarity with the zero-norm convention.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub source: usize,
    pub destination: usize,
    pub score: f64,
}

/// For every source, the most similar destination. Ties go to the smaller
/// destination index. Empty when there are no destinations.
pub fn best_match_scores(values: &Matrix, sources: &[usize], destinations: &[usize]) -> Vec<BestMatch> {
    if destinations.is_empty() {
        return Vec::new();
    }
    let dest_norms: Vec<f64> = destinations.iter().map(|&b| norm(values.row(b))).collect();
    sources
        .iter()
        .map(|&a| {
            let va = values.row(a);
            let na = norm(va);
            let mut best = BestMatch {
                source: a,
                destination: destinations[0],
                score: f64::NEG_INFINITY,
            };
            for (&b, &nb) in destinations.iter().zip(&dest_norms) {
                let score = if na < ZERO_NORM || nb < ZERO_NORM {
                    0.0
                } else {
                    dot(va, values.row(b)) / (na * nb)
                };
                if score > best.score {
                    best.destination = b;
                    best.score = score;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergePair {
    pub source: usize,
    pub destination: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationGroup {
    pub destination: usize,
    pub sources: Vec<usize>,
}

/// The outcome of pair selection for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeAssignment {
    /// Selected pairs in descending score order.
    pub pairs: Vec<MergePair>,
    /// Untouched token indices in ascending order.
    pub retained: Vec<usize>,
    /// Receiving destinations in ascending index order.
    pub groups: Vec<DestinationGroup>,
}

impl MergeAssignment {
    /// The assignment that leaves all `n` tokens in place.
    pub fn identity(n: usize) -> Self {
        MergeAssignment {
            pairs: Vec::new(),
            retained: (0..n).collect(),
            groups: Vec::new(),
        }
    }

    pub fn merged_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn output_len(&self) -> usize {
        self.retained.len() + self.groups.len()
    }
}

/// Picks the `r = min(floor(p * n_prev), |A|)` sources with the highest
/// best-match scores (ties: smaller source index) and derives the retained
/// set and destination groups.
pub fn select_merges(
    best: &[BestMatch],
    p: f64,
    n_prev: usize,
    destinations: &[usize],
    protected: usize,
) -> MergeAssignment {
    let r = merge_count(p, n_prev, best.len());
    let mut order: Vec<&BestMatch> = best.iter().collect();
    order.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.source.cmp(&y.source)));
    let pairs: Vec<MergePair> = order[..r]
        .iter()
        .map(|m| MergePair {
            source: m.source,
            destination: m.destination,
            similarity: m.score,
        })
        .collect();

    let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for pair in &pairs {
        grouped.entry(pair.destination).or_default().push(pair.source);
    }
    let groups: Vec<DestinationGroup> = grouped
        .into_iter()
        .map(|(destination, mut sources)| {
            sources.sort_unstable();
            DestinationGroup {
                destination,
                sources,
            }
        })
        .collect();

    let mut involved: Vec<usize> = pairs
        .iter()
        .map(|p| p.source)
        .chain(groups.iter().map(|g| g.destination))
        .collect();
    involved.sort_unstable();

    let mut retained: Vec<usize> = (0..protected).collect();
    let mut candidates: Vec<usize> = best
        .iter()
        .map(|m| m.source)
        .chain(destinations.iter().copied())
        .filter(|i| involved.binary_search(i).is_err())
        .collect();
    candidates.sort_unstable();
    retained.extend(candidates);

    MergeAssignment {
        pairs,
        retained,
        groups,
    }
}

/// Norm-weighted combination `(Σ ‖z_g‖ z_g) / (Σ ‖z_g‖ + ε)` over a group.
pub fn norm_weighted_combination(members: &[&[f32]]) -> Vec<f32> {
    let width = members.first().map_or(0, |m| m.len());
    let mut numerator = vec![0.0f64; width];
    let mut denominator = MERGE_EPSILON;
    for member in members {
        let weight = norm(member);
        denominator += weight;
        for (acc, &v) in numerator.iter_mut().zip(member.iter()) {
            *acc += weight * v as f64;
        }
    }
    numerator.iter().map(|&v| (v / denominator) as f32).collect()
}

/// Retained rows in original order, then one merged row per destination
/// group in ascending destination order.
pub fn apply_norm_weighted_merge(tokens: &TokenMatrix, assignment: &MergeAssignment) -> Result<TokenMatrix> {
    let z = tokens.matrix();
    let n = z.rows();
    let in_range = |i: &usize| *i < n;
    if !assignment.retained.iter().all(in_range)
        || !assignment
            .groups
            .iter()
            .all(|g| in_range(&g.destination) && g.sources.iter().all(in_range))
    {
        return Err(Error::Shape(format!(
            "merge assignment refers to tokens beyond {n}"
        )));
    }
    let mut data = z.select_rows(&assignment.retained).into_vec();
    for group in &assignment.groups {
        let members: Vec<&[f32]> = std::iter::once(group.destination)
            .chain(group.sources.iter().copied())
            .map(|i| z.row(i))
            .collect();
        data.extend(norm_weighted_combination(&members));
    }
    let rows = assignment.output_len();
    TokenMatrix::new(Matrix::from_vec(rows, z.cols(), data)?, tokens.protected())
}

/// One full merge step: split, match, select, combine.
pub fn merge_layer(tokens: &TokenMatrix, values: &Matrix, p: f64) -> Result<(TokenMatrix, MergeAssignment)> {
    let n = tokens.len();
    if values.rows() != n {
        return Err(Error::Shape(format!(
            "value matrix has {} rows for {n} tokens",
            values.rows()
        )));
    }
    let protected = tokens.protected();
    let (sources, destinations) = alternating_split(n, protected);
    if merge_count(p, n, sources.len()) == 0 || destinations.is_empty() {
        return Ok((tokens.clone(), MergeAssignment::identity(n)));
    }
    let best = best_match_scores(values, &sources, &destinations);
    let assignment = select_merges(&best, p, n, &destinations, protected);
    let merged = apply_norm_weighted_merge(tokens, &assignment)?;
    Ok((merged, assignment))
}

/// CSV rows `layer,source_index,destination_index,similarity`, layers 1-based.
pub fn merge_trace_csv(trace: &[MergeAssignment]) -> String {
    let mut out = String::from("layer,source_index,destination_index,similarity\n");
    for (layer, assignment) in trace.iter().enumerate() {
        for pair in &assignment.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                layer + 1,
                pair.source,
                pair.destination,
                pair.similarity
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tm(rows: &[Vec<f32>], protected: usize) -> TokenMatrix {
        TokenMatrix::new(Matrix::from_rows(rows).unwrap(), protected).unwrap()
    }

    #[test]
    fn split_after_class_token() {
        let (a, b) = alternating_split(5, 1);
        assert_eq!(a, vec![1, 3]);
        assert_eq!(b, vec![2, 4]);
        assert_eq!(alternating_split(1, 1), (vec![], vec![]));
        let (a, b) = alternating_split(6, 0);
        assert_eq!((a.len(), b.len()), (3, 3));
        assert_eq!(source_count(6, 0), 3);
        assert_eq!(source_count(16, 1), 8);
    }

    #[test]
    fn schedule_domain() {
        assert!(MergeSchedule::new(vec![0.0, 0.3]).is_ok());
        assert!(MergeSchedule::new(vec![-0.01]).is_err());
        assert!(MergeSchedule::new(vec![0.31]).is_err());
        assert!(MergeSchedule::new(vec![f64::NAN]).is_err());
        let parsed: std::result::Result<MergeSchedule, _> = serde_json::from_str("[0.1, 0.5]");
        assert!(parsed.is_err());
    }

    #[test]
    fn merge_count_floors() {
        assert_eq!(merge_count(0.3, 10, 100), 3);
        assert_eq!(merge_count(0.29, 100, 100), 29);
        assert_eq!(merge_count(0.3, 10, 2), 2);
        assert_eq!(merge_count(0.0, 10, 5), 0);
    }

    #[test]
    fn identical_and_orthogonal_scores() {
        let v = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 1.0], vec![5.0, 0.0]]).unwrap();
        let best = best_match_scores(&v, &[0], &[1, 2]);
        assert_eq!(best[0].destination, 1);
        assert!((best[0].score - 1.0).abs() < 1e-12);
        let best = best_match_scores(&v, &[3], &[2]);
        assert_eq!(best[0].score, 0.0);
        assert!(best_match_scores(&v, &[0], &[]).is_empty());
    }

    #[test]
    fn zero_value_rows_score_zero() {
        let v = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let best = best_match_scores(&v, &[0], &[1, 2]);
        assert_eq!(best[0], BestMatch { source: 0, destination: 1, score: 0.0 });
    }

    #[test]
    fn equal_scores_prefer_smaller_source() {
        let best = vec![
            BestMatch { source: 1, destination: 2, score: 0.9 },
            BestMatch { source: 3, destination: 2, score: 0.1 },
            BestMatch { source: 5, destination: 4, score: 0.9 },
        ];
        let a = select_merges(&best, 0.3, 7, &[2, 4, 6], 1);
        assert_eq!(a.merged_count(), 2);
        let chosen: Vec<usize> = a.pairs.iter().map(|p| p.source).collect();
        assert_eq!(chosen, vec![1, 5]);
        assert_eq!(a.retained, vec![0, 3, 6]);
        assert_eq!(a.groups.len(), 2);

        // r = 1: the tie between sources 1 and 5 goes to 1.
        let a = select_merges(&best, 0.15, 7, &[2, 4, 6], 1);
        assert_eq!(a.pairs[0].source, 1);
    }

    #[test]
    fn many_sources_share_a_destination() {
        let best = vec![
            BestMatch { source: 0, destination: 1, score: 0.8 },
            BestMatch { source: 2, destination: 1, score: 0.7 },
            BestMatch { source: 4, destination: 3, score: 0.1 },
        ];
        // floor(0.3 * 7) = 2 merges.
        let a = select_merges(&best, 0.3, 7, &[1, 3, 5], 0);
        assert_eq!(a.groups, vec![DestinationGroup { destination: 1, sources: vec![0, 2] }]);
        assert_eq!(a.retained, vec![3, 4, 5]);
        assert_eq!(a.output_len(), 4);
    }

    #[test]
    fn hand_computed_merge() {
        let z = tm(&[vec![3.0, 0.0], vec![0.0, 4.0]], 0);
        let a = MergeAssignment {
            pairs: vec![MergePair { source: 1, destination: 0, similarity: 0.0 }],
            retained: vec![],
            groups: vec![DestinationGroup { destination: 0, sources: vec![1] }],
        };
        let out = apply_norm_weighted_merge(&z, &a).unwrap();
        let denom = 7.0 + MERGE_EPSILON;
        assert_eq!(out.len(), 1);
        assert!((out.matrix().get(0, 0) as f64 - 9.0 / denom).abs() < 1e-6);
        assert!((out.matrix().get(0, 1) as f64 - 16.0 / denom).abs() < 1e-6);
    }

    #[test]
    fn zero_group_stays_zero() {
        let u = norm_weighted_combination(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn duplicate_merge_reproduces_token() {
        let v = [0.5f32, -1.25, 2.0];
        let u = norm_weighted_combination(&[&v, &v]);
        let nv = norm(&v);
        for (a, b) in u.iter().zip(v) {
            let rel = ((a - b) as f64).abs() / nv;
            assert!(rel <= MERGE_EPSILON / (2.0 * nv) + 1e-7);
        }
    }

    #[test]
    fn zero_proportion_is_identity() {
        let z = tm(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], 1);
        let (out, a) = merge_layer(&z, z.matrix(), 0.0).unwrap();
        assert_eq!(out, z);
        assert!(a.pairs.is_empty());
        assert_eq!(a.retained, vec![0, 1, 2]);
    }

    #[test]
    fn near_duplicate_pair_merges() {
        // Only sources 0 and 2 can merge; source 2 is a near copy of 3.
        let v = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.05, 1.0],
        ])
        .unwrap();
        let z = TokenMatrix::new(v.clone(), 0).unwrap();
        let (out, a) = merge_layer(&z, &v, 0.25).unwrap();
        assert_eq!(a.pairs.len(), 1);
        assert_eq!((a.pairs[0].source, a.pairs[0].destination), (2, 3));
        assert_eq!(out.len(), 3);
        assert_eq!(a.retained, vec![0, 1]);
    }

    #[test]
    fn protected_rows_lead_output() {
        let z = tm(
            &[vec![9.0, 9.0], vec![1.0, 0.0], vec![1.0, 0.1], vec![0.0, 1.0], vec![0.1, 1.0]],
            1,
        );
        let (out, _) = merge_layer(&z, z.matrix(), 0.3).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.matrix().row(0), &[9.0, 9.0]);
        assert_eq!(out.protected(), 1);
    }

    #[test]
    fn trace_csv_layout() {
        let a = MergeAssignment {
            pairs: vec![MergePair { source: 3, destination: 4, similarity: 0.5 }],
            retained: vec![],
            groups: vec![],
        };
        let csv = merge_trace_csv(&[MergeAssignment::identity(2), a]);
        assert_eq!(csv, "layer,source_index,destination_index,similarity\n2,3,4,0.5\n");
    }
}
