//! Operating-point selection on a front and SNR-adaptive policies.

use serde::{Deserialize, Serialize};

use super::pareto::{ParetoFront, ParetoPoint};
use crate::error::{Error, Result};
use crate::merging::MergeSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConstraint {
    MaxAccuracy,
    MinFlopsSubjectToAccuracy { min_accuracy: f64 },
    /// Throughput is taken as `1 / flops`, so this is the cheapest point
    /// within the budget.
    MaxThroughputSubjectToFlops { max_flops: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Selection {
    Selected { point: ParetoPoint },
    Infeasible { reason: String },
}

impl Selection {
    pub fn point(&self) -> Option<&ParetoPoint> {
        match self {
            Selection::Selected { point } => Some(point),
            Selection::Infeasible { .. } => None,
        }
    }
}

pub fn select_scenario(front: &ParetoFront, constraint: &ScenarioConstraint) -> Selection {
    let pts = &front.points;
    let chosen = match *constraint {
        ScenarioConstraint::MaxAccuracy => pts
            .iter()
            .reduce(|best, p| if p.accuracy > best.accuracy { p } else { best }),
        ScenarioConstraint::MinFlopsSubjectToAccuracy { min_accuracy } => pts
            .iter()
            .filter(|p| p.accuracy >= min_accuracy)
            .reduce(|best, p| if p.flops < best.flops { p } else { best }),
        ScenarioConstraint::MaxThroughputSubjectToFlops { max_flops } => pts
            .iter()
            .filter(|p| (p.flops as f64) <= max_flops)
            .reduce(|best, p| if p.flops < best.flops { p } else { best }),
    };
    match chosen {
        Some(point) => Selection::Selected { point: point.clone() },
        None => Selection::Infeasible {
            reason: match *constraint {
                ScenarioConstraint::MaxAccuracy => "front is empty".to_string(),
                ScenarioConstraint::MinFlopsSubjectToAccuracy { min_accuracy } => {
                    format!("no front member reaches accuracy {min_accuracy}")
                }
                ScenarioConstraint::MaxThroughputSubjectToFlops { max_flops } => {
                    format!("no front member needs at most {max_flops} FLOPs")
                }
            },
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub snr_db: f64,
    pub schedule: MergeSchedule,
    pub flops: u64,
    /// Accuracy of the chosen member at this SNR.
    pub accuracy: f64,
    /// Best accuracy of any front member at this SNR.
    pub best_accuracy: f64,
    pub front_index: usize,
}

/// How far below the best accuracy at an SNR a member may fall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AccuracyDrop {
    /// Accuracy points, `acc >= best - drop`.
    Absolute(f64),
    /// Fraction of the best, `acc >= best * (1 - drop)`.
    Relative(f64),
}

impl AccuracyDrop {
    pub fn threshold(&self, best: f64) -> f64 {
        match *self {
            AccuracyDrop::Absolute(d) => best - d,
            AccuracyDrop::Relative(d) => best * (1.0 - d),
        }
    }

    fn validate(&self) -> Result<()> {
        let (AccuracyDrop::Absolute(d) | AccuracyDrop::Relative(d)) = *self;
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::config(format!("accuracy drop {d} outside [0, 1]")));
        }
        Ok(())
    }
}

/// SNR → operating-point lookup table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptivePolicy {
    pub target_accuracy_drop: AccuracyDrop,
    pub entries: Vec<PolicyEntry>,
}

impl AdaptivePolicy {
    pub fn lookup(&self, snr_db: f64) -> Option<&PolicyEntry> {
        self.entries
            .iter()
            .min_by(|a, b| (a.snr_db - snr_db).abs().total_cmp(&(b.snr_db - snr_db).abs()))
    }
}

/// For every SNR, re-evaluates all front members and picks the cheapest one
/// whose accuracy clears `target_accuracy_drop` below the best at that SNR.
/// `accuracy_at(schedule, snrs)` returns one accuracy per SNR.
pub fn build_adaptive_policy(
    front: &ParetoFront,
    snr_grid: &[f64],
    accuracy_at: &dyn Fn(&MergeSchedule, &[f64]) -> Result<Vec<f64>>,
    target_accuracy_drop: AccuracyDrop,
) -> Result<AdaptivePolicy> {
    target_accuracy_drop.validate()?;
    if front.is_empty() {
        return Err(Error::config("cannot build a policy from an empty front"));
    }
    if snr_grid.is_empty() {
        return Err(Error::config("SNR grid is empty"));
    }
    let table: Vec<Vec<f64>> = front
        .points
        .iter()
        .map(|p| {
            let acc = accuracy_at(&p.schedule, snr_grid)?;
            if acc.len() != snr_grid.len() {
                return Err(Error::Shape("one accuracy per SNR expected".into()));
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let entries = snr_grid
        .iter()
        .enumerate()
        .map(|(k, &snr_db)| {
            let best = table.iter().map(|row| row[k]).fold(f64::NEG_INFINITY, f64::max);
            let threshold = target_accuracy_drop.threshold(best).min(best);
            let (front_index, point) = front
                .points
                .iter()
                .enumerate()
                .filter(|(i, _)| table[*i][k] >= threshold)
                .min_by_key(|(i, p)| (p.flops, *i))
                .expect("the best member always qualifies");
            PolicyEntry {
                snr_db,
                schedule: point.schedule.clone(),
                flops: point.flops,
                accuracy: table[front_index][k],
                best_accuracy: best,
                front_index,
            }
        })
        .collect();
    Ok(AdaptivePolicy {
        target_accuracy_drop,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobo::pareto::Objectives;

    fn front() -> ParetoFront {
        let p = |a: f64, f: u64| ParetoPoint {
            schedule: MergeSchedule::zeros(2),
            accuracy: a,
            flops: f,
        };
        ParetoFront {
            points: vec![p(0.6, 60), p(0.75, 73), p(0.79, 99)],
            reference: Objectives::new(0.0, 120.0),
        }
    }

    #[test]
    fn table_scenarios() {
        let f = front();
        let pick = |c| select_scenario(&f, &c).point().map(|p| p.flops);
        assert_eq!(pick(ScenarioConstraint::MaxAccuracy), Some(99));
        assert_eq!(pick(ScenarioConstraint::MinFlopsSubjectToAccuracy { min_accuracy: 0.75 }), Some(73));
        assert_eq!(pick(ScenarioConstraint::MaxThroughputSubjectToFlops { max_flops: 80.0 }), Some(60));
    }

    #[test]
    fn infeasible_constraints() {
        let f = front();
        let s = select_scenario(&f, &ScenarioConstraint::MinFlopsSubjectToAccuracy { min_accuracy: 1.1 });
        assert!(matches!(s, Selection::Infeasible { .. }));
        let s = select_scenario(&f, &ScenarioConstraint::MaxThroughputSubjectToFlops { max_flops: 0.0 });
        assert!(matches!(s, Selection::Infeasible { .. }));
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["status"], "infeasible");
    }

    #[test]
    fn single_point_policy_is_constant() {
        let mut f = front();
        f.points.truncate(1);
        let policy = build_adaptive_policy(&f, &[-10.0, 0.0, 25.0], &|_, snrs| Ok(vec![0.5; snrs.len()]), AccuracyDrop::Absolute(0.01)).unwrap();
        assert!(policy.entries.iter().all(|e| e.front_index == 0));
    }

    #[test]
    fn policy_prefers_cheapest_within_drop() {
        let mut f = front();
        for (i, p) in f.points.iter_mut().enumerate() {
            p.schedule = MergeSchedule::uniform(2, 0.1 * i as f64).unwrap();
        }
        // Member i scores 0.5 + 0.1 i at high SNR and 0.2 + 0.01 i at low SNR.
        let acc = |s: &MergeSchedule, snrs: &[f64]| -> Result<Vec<f64>> {
            let i = (s.proportions()[0] * 10.0).round();
            Ok(snrs
                .iter()
                .map(|&snr| if snr > 0.0 { 0.5 + 0.1 * i } else { 0.2 + 0.01 * i })
                .collect())
        };
        let abs = build_adaptive_policy(&f, &[-5.0, 5.0], &acc, AccuracyDrop::Absolute(0.05)).unwrap();
        assert_eq!(abs.entries[0].front_index, 0);
        assert_eq!(abs.entries[1].front_index, 2);
        let rel = build_adaptive_policy(&f, &[-5.0, 5.0], &acc, AccuracyDrop::Relative(0.2)).unwrap();
        assert_eq!(rel.entries[0].front_index, 0);
        assert_eq!(rel.entries[1].front_index, 1);
        assert_eq!(rel.lookup(100.0).unwrap().snr_db, 5.0);
        assert!(build_adaptive_policy(&f, &[], &acc, AccuracyDrop::Relative(0.1)).is_err());
        assert!(build_adaptive_policy(&f, &[1.0], &acc, AccuracyDrop::Relative(1.5)).is_err());
    }
}
