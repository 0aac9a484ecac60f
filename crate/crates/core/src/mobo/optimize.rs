//! The budgeted multi-objective Bayesian optimization loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::quasi_random_design;
use super::ehvi::propose_candidate;
use super::pareto::{pareto_filter, Objectives, ParetoFront, ParetoPoint, ReferencePoint};
use crate::error::{Error, Result};
use crate::gp::{FitOptions, GpHyperparams, GpModel, GpPriors, ObservationSet};
use crate::merging::{MergeSchedule, MAX_PROPORTION};
use crate::seeds::derive_seed;

/// A black-box schedule evaluator returning `(accuracy, flops)`.
pub trait ScheduleObjective: Sync {
    fn layers(&self) -> usize;

    fn evaluate(&self, schedule: &MergeSchedule) -> Result<(f64, u64)>;

    /// FLOPs of the unmerged encoder.
    fn baseline_flops(&self) -> Result<u64>;
}

impl ScheduleObjective for crate::task::Evaluator<'_> {
    fn layers(&self) -> usize {
        self.weights.dims.layers
    }

    fn evaluate(&self, schedule: &MergeSchedule) -> Result<(f64, u64)> {
        let r = crate::task::Evaluator::evaluate(self, schedule)?;
        Ok((r.accuracy, r.flops))
    }

    fn baseline_flops(&self) -> Result<u64> {
        Ok(crate::flops::schedule_flops(&MergeSchedule::zeros(self.weights.dims.layers), &self.weights.dims)?.total)
    }
}

/// Reference point `(0, 1.01 · F(0))`.
pub fn default_reference(baseline_flops: u64) -> ReferencePoint {
    Objectives::new(0.0, baseline_flops as f64 * 1.01)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoSettings {
    pub budget: usize,
    pub n_init: usize,
    pub seed: u64,
    pub restarts: usize,
    pub priors: GpPriors,
    /// BO steps between full multi-start refits; steps in between restart
    /// only from the previous optimum. 1 refits fully every step.
    pub full_refit_every: usize,
    pub max_proportion: f64,
}

impl BoSettings {
    pub fn new(layers: usize, budget: usize, seed: u64) -> Self {
        BoSettings {
            budget,
            n_init: default_n_init(layers),
            seed,
            restarts: 8,
            priors: GpPriors::default(),
            full_refit_every: 1,
            max_proportion: MAX_PROPORTION,
        }
    }
}

pub fn default_n_init(layers: usize) -> usize {
    (2 * layers).max(16)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveHyperparams {
    pub accuracy: GpHyperparams,
    pub flops: GpHyperparams,
}

/// One line of the optimization history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub schedule: MergeSchedule,
    pub accuracy: f64,
    pub flops: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp_hyperparams: Option<ObjectiveHyperparams>,
    /// `ln EHVI` of the proposal; absent for the initial design and when the
    /// acquisition is `−∞`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationOutcome {
    pub front: ParetoFront,
    pub history: Vec<HistoryRecord>,
}

/// An evaluator or surrogate failure with everything recorded before it.
#[derive(Debug)]
pub struct OptimizationFailure {
    pub error: Error,
    pub history: Vec<HistoryRecord>,
}

impl std::fmt::Display for OptimizationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "optimization aborted after {} evaluations: {}", self.history.len(), self.error)
    }
}

impl std::error::Error for OptimizationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub fn front_of(history: &[HistoryRecord], reference: ReferencePoint) -> ParetoFront {
    let points: Vec<ParetoPoint> = history
        .iter()
        .map(|r| ParetoPoint {
            schedule: r.schedule.clone(),
            accuracy: r.accuracy,
            flops: r.flops,
        })
        .collect();
    pareto_filter(&points, reference)
}

fn fit_pair(
    history: &[HistoryRecord],
    settings: &BoSettings,
    layers: usize,
    step: usize,
    previous: Option<&ObjectiveHyperparams>,
) -> Result<(GpModel, GpModel)> {
    let lower = vec![0.0; layers];
    let upper = vec![settings.max_proportion; layers];
    let inputs: Vec<Vec<f64>> = history.iter().map(|r| r.schedule.proportions().to_vec()).collect();
    let acc: Vec<f64> = history.iter().map(|r| r.accuracy).collect();
    let flops: Vec<f64> = history.iter().map(|r| r.flops as f64).collect();
    let full = settings.full_refit_every <= 1 || step % settings.full_refit_every == 0 || previous.is_none();
    let options = |objective: u64, warm: Option<&GpHyperparams>| FitOptions {
        restarts: if full { settings.restarts } else { 0 },
        seed: derive_seed(settings.seed, ((history.len() as u64) << 1) | objective),
        warm_start: warm.cloned(),
        ..FitOptions::default()
    };
    let acc_obs = ObservationSet::new(&inputs, &acc, &lower, &upper)?;
    let flops_obs = ObservationSet::new(&inputs, &flops, &lower, &upper)?;
    let acc_opts = options(0, previous.map(|p| &p.accuracy));
    let flops_opts = options(1, previous.map(|p| &p.flops));
    let (a, f) = rayon::join(
        || GpModel::fit(acc_obs, &settings.priors, &acc_opts),
        || GpModel::fit(flops_obs, &settings.priors, &flops_opts),
    );
    Ok((a?, f?))
}

/// Initial quasi-random design followed by EHVI-guided proposals until
/// `budget` evaluations exist. Every record is passed to `sink` as soon as
/// it is final.
pub fn run_optimization(
    objective: &dyn ScheduleObjective,
    settings: &BoSettings,
    sink: &mut dyn FnMut(&HistoryRecord) -> Result<()>,
) -> std::result::Result<OptimizationOutcome, OptimizationFailure> {
    let mut history: Vec<HistoryRecord> = Vec::with_capacity(settings.budget);
    let fail = |error: Error, history: Vec<HistoryRecord>| OptimizationFailure { error, history };
    let layers = objective.layers();
    if settings.n_init < 2 * layers || settings.budget < settings.n_init {
        return Err(fail(
            Error::config(format!(
                "need budget ({}) >= n_init ({}) >= 2 * layers ({})",
                settings.budget,
                settings.n_init,
                2 * layers
            )),
            history,
        ));
    }
    if !(settings.max_proportion > 0.0 && settings.max_proportion <= MAX_PROPORTION) {
        return Err(fail(Error::config("max_proportion must be in (0, 0.3]"), history));
    }
    let reference = match objective.baseline_flops() {
        Ok(f) => default_reference(f),
        Err(e) => return Err(fail(e, history)),
    };
    let lower = vec![0.0; layers];
    let upper = vec![settings.max_proportion; layers];

    let design = quasi_random_design(settings.n_init, &lower, &upper, derive_seed(settings.seed, 0x1D));
    let schedules: Vec<MergeSchedule> = match design.into_iter().map(MergeSchedule::new).collect() {
        Ok(s) => s,
        Err(e) => return Err(fail(e, history)),
    };
    let results: Vec<Result<(f64, u64)>> = schedules.par_iter().map(|s| objective.evaluate(s)).collect();
    for (iteration, (schedule, result)) in schedules.into_iter().zip(results).enumerate() {
        let (accuracy, flops) = match result {
            Ok(v) => v,
            Err(e) => return Err(fail(e, history)),
        };
        let record = HistoryRecord {
            iteration,
            schedule,
            accuracy,
            flops,
            gp_hyperparams: None,
            acquisition_value: None,
        };
        if let Err(e) = sink(&record) {
            return Err(fail(e, history));
        }
        history.push(record);
    }

    let mut previous: Option<ObjectiveHyperparams> = None;
    let mut step = 0;
    while history.len() < settings.budget {
        let (gp_acc, gp_flops) = match fit_pair(&history, settings, layers, step, previous.as_ref()) {
            Ok(m) => m,
            Err(e) => return Err(fail(e, history)),
        };
        let front = front_of(&history, reference).objectives();
        let iteration = history.len();
        let proposal = propose_candidate(
            &gp_acc,
            &gp_flops,
            &front,
            &reference,
            &lower,
            &upper,
            derive_seed(settings.seed, (1 << 40) | iteration as u64),
        );
        let schedule = match MergeSchedule::new(proposal.point) {
            Ok(s) => s,
            Err(e) => return Err(fail(e, history)),
        };
        let (accuracy, flops) = match objective.evaluate(&schedule) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, history)),
        };
        let hyper = ObjectiveHyperparams {
            accuracy: gp_acc.hyperparams().clone(),
            flops: gp_flops.hyperparams().clone(),
        };
        let record = HistoryRecord {
            iteration,
            schedule,
            accuracy,
            flops,
            gp_hyperparams: Some(hyper.clone()),
            acquisition_value: proposal.log_ehvi.is_finite().then_some(proposal.log_ehvi),
        };
        if let Err(e) = sink(&record) {
            return Err(fail(e, history));
        }
        log::debug!("iteration {iteration}: acc {accuracy:.4} flops {flops}");
        history.push(record);
        previous = Some(hyper);
        step += 1;
    }

    Ok(OptimizationOutcome {
        front: front_of(&history, reference),
        history,
    })
}
