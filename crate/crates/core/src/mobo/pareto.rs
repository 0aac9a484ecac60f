//! Non-dominated filtering and exact 2-D hypervolume.
//!
//! Orientation throughout: accuracy is maximized, FLOPs minimized.

use serde::{Deserialize, Serialize};

use crate::merging::MergeSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub schedule: MergeSchedule,
    pub accuracy: f64,
    pub flops: u64,
}

impl ParetoPoint {
    pub fn objectives(&self) -> Objectives {
        Objectives {
            accuracy: self.accuracy,
            flops: self.flops as f64,
        }
    }
}

/// An `(accuracy, flops)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    pub accuracy: f64,
    pub flops: f64,
}

impl Objectives {
    pub fn new(accuracy: f64, flops: f64) -> Self {
        Objectives { accuracy, flops }
    }

    /// Weakly better in both objectives and strictly better in one.
    pub fn dominates(&self, other: &Objectives) -> bool {
        self.accuracy >= other.accuracy
            && self.flops <= other.flops
            && (self.accuracy > other.accuracy || self.flops < other.flops)
    }

    fn is_finite(&self) -> bool {
        self.accuracy.is_finite() && self.flops.is_finite()
    }
}

/// Reference point for hypervolume: worst acceptable accuracy and FLOPs.
pub type ReferencePoint = Objectives;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    /// Non-dominated points, ascending in both FLOPs and accuracy.
    pub points: Vec<ParetoPoint>,
    pub reference: ReferencePoint,
}

impl ParetoFront {
    pub fn objectives(&self) -> Vec<Objectives> {
        self.points.iter().map(ParetoPoint::objectives).collect()
    }

    pub fn hypervolume(&self) -> f64 {
        hypervolume_2d(&self.objectives(), &self.reference)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Indices of the non-dominated entries, ordered by ascending FLOPs.
/// Among identical pairs only the first seen survives; non-finite entries
/// are ignored.
pub fn non_dominated_indices(points: &[Objectives]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| points[i].is_finite()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .flops
            .total_cmp(&points[j].flops)
            .then(points[j].accuracy.total_cmp(&points[i].accuracy))
            .then(i.cmp(&j))
    });
    let mut best = f64::NEG_INFINITY;
    let mut keep = Vec::new();
    for i in order {
        if points[i].accuracy > best {
            best = points[i].accuracy;
            keep.push(i);
        }
    }
    keep
}

pub fn pareto_filter(points: &[ParetoPoint], reference: ReferencePoint) -> ParetoFront {
    let objs: Vec<Objectives> = points.iter().map(ParetoPoint::objectives).collect();
    ParetoFront {
        points: non_dominated_indices(&objs).into_iter().map(|i| points[i].clone()).collect(),
        reference,
    }
}

/// Exact area dominated by `points` and bounded by `reference`. Points that
/// do not strictly dominate the reference are skipped with a warning.
pub fn hypervolume_2d(points: &[Objectives], reference: &ReferencePoint) -> f64 {
    let valid: Vec<Objectives> = points
        .iter()
        .copied()
        .filter(|p| {
            let ok = p.accuracy > reference.accuracy && p.flops < reference.flops;
            if !ok && p.is_finite() {
                log::warn!(
                    "point ({}, {}) does not dominate the reference point; skipped",
                    p.accuracy,
                    p.flops
                );
            }
            ok
        })
        .collect();
    let mut previous = reference.accuracy;
    let mut volume = 0.0;
    for i in non_dominated_indices(&valid) {
        let p = valid[i];
        volume += (reference.flops - p.flops) * (p.accuracy - previous);
        previous = p.accuracy;
    }
    volume
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(a: f64, f: f64) -> Objectives {
        Objectives::new(a, f)
    }

    #[test]
    fn three_point_example() {
        let pts = [o(0.8, 10.0), o(0.7, 5.0), o(0.6, 8.0)];
        let keep = non_dominated_indices(&pts);
        assert_eq!(keep, vec![1, 0]);
    }

    #[test]
    fn duplicates_keep_first() {
        let pts = [o(0.5, 3.0), o(0.5, 3.0), o(0.4, 1.0)];
        assert_eq!(non_dominated_indices(&pts), vec![2, 0]);
        assert_eq!(non_dominated_indices(&[o(0.1, 1.0)]), vec![0]);
        assert_eq!(non_dominated_indices(&[o(f64::NAN, 1.0), o(0.2, 2.0)]), vec![1]);
    }

    #[test]
    fn rectangle_areas() {
        let r = o(0.0, 10.0);
        assert_eq!(hypervolume_2d(&[o(0.8, 5.0)], &r), 4.0);
        assert_eq!(hypervolume_2d(&[], &r), 0.0);
        // Two steps: (10-2)*(0.5-0) + (10-6)*(0.9-0.5).
        let hv = hypervolume_2d(&[o(0.9, 6.0), o(0.5, 2.0), o(0.4, 7.0)], &r);
        assert!((hv - (8.0 * 0.5 + 4.0 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn non_dominating_points_are_skipped() {
        let r = o(0.2, 10.0);
        assert_eq!(hypervolume_2d(&[o(0.1, 5.0), o(0.5, 12.0)], &r), 0.0);
    }
}
