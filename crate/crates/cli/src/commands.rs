//! Subcommand implementations. Every output is a pure function of the
//! config file and the inputs named on the command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mergefront::container::{read_weights, write_weights};
use mergefront::encoder::encode_with_trace;
use mergefront::flops::{schedule_flops, FlopsReport};
use mergefront::merging::merge_trace_csv;
use mergefront::mobo::{
    build_adaptive_policy, front_of, run_optimization, select_scenario, HistoryRecord, OptimizationOutcome,
    ParetoFront, ScenarioConstraint, Selection,
};
use mergefront::seeds::derive_seed;
use mergefront::task::{fit_prototypes, generate_split, Dataset, Evaluator, PrototypeHead};
use mergefront::{MergeSchedule, ModelWeights};

use crate::config::RunConfig;
use crate::CliError;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const FRONT_FILE: &str = "front.json";
pub const FRONT_CSV: &str = "front.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const POLICY_FILE: &str = "policy.json";
pub const HEAD_FILE: &str = "head.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CALIBRATION_FILE: &str = "calibration.bin";
pub const EVALUATION_FILE: &str = "evaluation.bin";

const CALIBRATION_SPLIT: u64 = 0;
const EVALUATION_SPLIT: u64 = 1;
const SUBSET_STREAM: u64 = 2;
const RANDOM_BASELINE_STREAM: u64 = 0xBA5E;

/// Uniform proportions swept as fixed-schedule baselines.
pub const UNIFORM_BASELINES: [f64; 3] = [0.1, 0.2, 0.3];

/// Weights, data splits and the fitted head for one config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub weights: ModelWeights,
    pub calibration: Dataset,
    pub evaluation: Dataset,
    /// Seeded subset of `evaluation` scored during the search.
    pub search_set: Dataset,
    pub head: PrototypeHead,
    pub calibration_accuracy: f64,
}

pub fn load_weights(cfg: &RunConfig) -> Result<ModelWeights, CliError> {
    match &cfg.weights_path {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| CliError::Config(format!("`weights_path`: cannot open {}: {e}", path.display())))?;
            read_weights(std::io::BufReader::new(file)).map_err(|e| CliError::Input {
                path: path.clone(),
                message: e.to_string(),
            })
        }
        None => Ok(ModelWeights::random(cfg.dims(), cfg.weights_seed)?),
    }
}

impl Experiment {
    pub fn prepare(cfg: &RunConfig) -> Result<Experiment, CliError> {
        let weights = load_weights(cfg)?;
        let (calibration, evaluation) = splits(cfg, &weights)?;
        let search_set = evaluation.subset(cfg.bo_subset, derive_seed(cfg.dataset_seed, SUBSET_STREAM));
        let head = fit_prototypes(&weights, &calibration)?;
        let calibration_accuracy = Evaluator::new(&weights, &head, &calibration)
            .evaluate(&MergeSchedule::zeros(weights.dims.layers))?
            .accuracy;
        Ok(Experiment {
            weights,
            calibration,
            evaluation,
            search_set,
            head,
            calibration_accuracy,
        })
    }

    /// Objective used by the search: the subset, noiseless unless
    /// `optimize_snr_db` is set.
    pub fn search_evaluator(&self, cfg: &RunConfig) -> Evaluator<'_> {
        Evaluator::new(&self.weights, &self.head, &self.search_set).with_channel(cfg.optimize_snr_db.map(|s| cfg.channel(s)))
    }

    /// Full evaluation split without a channel.
    pub fn report_evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(&self.weights, &self.head, &self.evaluation)
    }

    pub fn layers(&self) -> usize {
        self.weights.dims.layers
    }
}

fn splits(cfg: &RunConfig, weights: &ModelWeights) -> Result<(Dataset, Dataset), CliError> {
    let dims = &weights.dims;
    let calibration = generate_split(&cfg.dataset_spec(dims, cfg.calibration_per_class), cfg.dataset_seed, CALIBRATION_SPLIT)?;
    let evaluation = generate_split(&cfg.dataset_spec(dims, cfg.eval_per_class), cfg.dataset_seed, EVALUATION_SPLIT)?;
    Ok((calibration, evaluation))
}

fn create_output_dir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(CliError::io(&cfg.output_dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("result types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    create_output_dir(cfg)?;
    let weights = load_weights(cfg)?;
    let (calibration, evaluation) = splits(cfg, &weights)?;
    for (name, data) in [(CALIBRATION_FILE, &calibration), (EVALUATION_FILE, &evaluation)] {
        let path = cfg.output_dir.join(name);
        let file = File::create(&path).map_err(CliError::io(&path))?;
        data.write(BufWriter::new(file))?;
    }
    if cfg.weights_path.is_none() {
        let path = cfg.output_dir.join(WEIGHTS_FILE);
        let file = File::create(&path).map_err(CliError::io(&path))?;
        write_weights(BufWriter::new(file), &weights)?;
    }
    log::info!(
        "wrote {} calibration and {} evaluation examples to {}",
        calibration.len(),
        evaluation.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub head: PrototypeHead,
    pub calibration_accuracy: f64,
    /// Unmerged, noiseless accuracy on the full evaluation split.
    pub evaluation_accuracy: f64,
    pub calibration_samples: usize,
    pub evaluation_samples: usize,
}

pub fn calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    create_output_dir(cfg)?;
    let exp = Experiment::prepare(cfg)?;
    let eval = exp.report_evaluator().evaluate(&MergeSchedule::zeros(exp.layers()))?;
    let report = CalibrationReport {
        head: exp.head.clone(),
        calibration_accuracy: exp.calibration_accuracy,
        evaluation_accuracy: eval.accuracy,
        calibration_samples: exp.calibration.len(),
        evaluation_samples: exp.evaluation.len(),
    };
    write_json(&cfg.output_dir.join(HEAD_FILE), &report)?;
    println!(
        "calibration accuracy {:.4}, evaluation accuracy {:.4}",
        report.calibration_accuracy, report.evaluation_accuracy
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub evaluations: usize,
    pub n_init: usize,
    pub budget: usize,
    /// `None` for noiseless search.
    pub search_snr_db: Option<f64>,
    pub search_samples: usize,
    pub calibration_accuracy: f64,
    pub baseline: FlopsReport,
    pub front_size: usize,
    pub hypervolume: f64,
    pub initial_design_hypervolume: f64,
}

pub fn optimize(cfg: &RunConfig) -> Result<OptimizationOutcome, CliError> {
    create_output_dir(cfg)?;
    let exp = Experiment::prepare(cfg)?;
    let settings = cfg.bo_settings(exp.layers());
    let history_path = cfg.output_dir.join(HISTORY_FILE);
    let file = File::create(&history_path).map_err(CliError::io(&history_path))?;
    let mut history = BufWriter::new(file);
    let mut sink = |record: &HistoryRecord| -> mergefront::Result<()> {
        serde_json::to_writer(&mut history, record)?;
        history.write_all(b"\n")?;
        history.flush()?;
        Ok(())
    };
    let evaluator = exp.search_evaluator(cfg);
    let outcome = run_optimization(&evaluator, &settings, &mut sink)?;
    drop(history);

    let front = &outcome.front;
    write_json(&cfg.output_dir.join(FRONT_FILE), front)?;
    write_front_csv(&cfg.output_dir.join(FRONT_CSV), front)?;
    let initial = front_of(&outcome.history[..settings.n_init], front.reference);
    let summary = Summary {
        evaluations: outcome.history.len(),
        n_init: settings.n_init,
        budget: settings.budget,
        search_snr_db: cfg.optimize_snr_db,
        search_samples: exp.search_set.len(),
        calibration_accuracy: exp.calibration_accuracy,
        baseline: schedule_flops(&MergeSchedule::zeros(exp.layers()), &exp.weights.dims)?,
        front_size: front.len(),
        hypervolume: front.hypervolume(),
        initial_design_hypervolume: initial.hypervolume(),
    };
    write_json(&cfg.output_dir.join(SUMMARY_FILE), &summary)?;
    log::info!("front of {} points, hypervolume {:.6e}", front.len(), summary.hypervolume);
    Ok(outcome)
}

fn schedule_field(s: &MergeSchedule) -> String {
    s.proportions().iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn write_front_csv(path: &Path, front: &ParetoFront) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let layers = front.points.first().map_or(0, |p| p.schedule.len());
    let mut header = vec!["index".to_string(), "accuracy".into(), "flops".into(), "gflops".into()];
    header.extend((1..=layers).map(|l| format!("p{l}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, p) in front.points.iter().enumerate() {
        let mut row = vec![i.to_string(), p.accuracy.to_string(), p.flops.to_string(), (p.flops as f64 / 1e9).to_string()];
        row.extend(p.schedule.proportions().iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(CliError::io(path))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One configuration at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub kind: String,
    pub schedule: MergeSchedule,
    pub snr_db: f64,
    pub flops: u64,
    pub gflops: f64,
    pub accuracy: f64,
    pub n_samples: usize,
}

/// Schedules compared in a sweep, labelled: every front member, the
/// unmerged encoder, uniform proportions and seeded random schedules.
pub fn sweep_configurations(cfg: &RunConfig, front: &ParetoFront, layers: usize) -> Result<Vec<(String, String, MergeSchedule)>, CliError> {
    let mut out: Vec<(String, String, MergeSchedule)> = front
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("front_{i}"), "front".to_string(), p.schedule.clone()))
        .collect();
    out.push(("baseline".into(), "baseline".into(), MergeSchedule::zeros(layers)));
    for p in UNIFORM_BASELINES {
        out.push((format!("uniform_{p:.2}"), "uniform".into(), MergeSchedule::uniform(layers, p)?));
    }
    for (k, s) in random_schedules(cfg.random_baselines, layers, cfg.max_proportion, derive_seed(cfg.bo_seed, RANDOM_BASELINE_STREAM))?
        .into_iter()
        .enumerate()
    {
        out.push((format!("random_{k}"), "random".into(), s));
    }
    Ok(out)
}

/// `count` schedules drawn uniformly from `[0, max_proportion]^layers`.
pub fn random_schedules(count: usize, layers: usize, max_proportion: f64, seed: u64) -> mergefront::Result<Vec<MergeSchedule>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| MergeSchedule::new((0..layers).map(|_| rng.random_range(0.0..=max_proportion)).collect()))
        .collect()
}

pub fn sweep(cfg: &RunConfig, front_path: &Path, snrs: Option<&[f64]>) -> Result<(), CliError> {
    let snrs = snrs.unwrap_or(&cfg.sweep_snrs);
    if snrs.is_empty() || snrs.iter().any(|s| !s.is_finite()) {
        return Err(CliError::Config("--snr must list finite numbers".into()));
    }
    let front: ParetoFront = read_json(front_path)?;
    if front.is_empty() {
        return Err(CliError::Input {
            path: front_path.to_path_buf(),
            message: "front is empty".into(),
        });
    }
    create_output_dir(cfg)?;
    let exp = Experiment::prepare(cfg)?;
    let dims = &exp.weights.dims;
    if front.points.iter().any(|p| p.schedule.len() != dims.layers) {
        return Err(CliError::Input {
            path: front_path.to_path_buf(),
            message: format!("schedules do not have {} layers", dims.layers),
        });
    }
    let evaluator = exp.report_evaluator();
    let channel = cfg.channel(0.0);
    let configs = sweep_configurations(cfg, &front, dims.layers)?;
    let mut rows = Vec::with_capacity(configs.len() * snrs.len());
    let mut front_table = Vec::with_capacity(front.len());
    for (label, kind, schedule) in &configs {
        let flops = schedule_flops(schedule, dims)?.total;
        let acc = evaluator.accuracy_at_snrs(schedule, &channel, snrs)?;
        if kind == "front" {
            front_table.push(acc.clone());
        }
        for (&snr_db, &accuracy) in snrs.iter().zip(&acc) {
            rows.push(SweepRow {
                label: label.clone(),
                kind: kind.clone(),
                schedule: schedule.clone(),
                snr_db,
                flops,
                gflops: flops as f64 / 1e9,
                accuracy,
                n_samples: exp.evaluation.len(),
            });
        }
    }
    // Front members come first in `configs`, in front order.
    let lookup = |s: &MergeSchedule, _: &[f64]| -> mergefront::Result<Vec<f64>> {
        let i = front.points.iter().position(|p| &p.schedule == s).expect("front member");
        Ok(front_table[i].clone())
    };
    let policy = build_adaptive_policy(&front, snrs, &lookup, cfg.policy_drop())?;

    write_json(&cfg.output_dir.join(SWEEP_JSON), &rows)?;
    write_json(&cfg.output_dir.join(POLICY_FILE), &policy)?;
    let path = cfg.output_dir.join(SWEEP_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["label", "kind", "schedule", "snr_db", "flops", "gflops", "accuracy", "n_samples"])
        .map_err(|e| csv_error(&path, e))?;
    for r in &rows {
        w.write_record([
            r.label.clone(),
            r.kind.clone(),
            schedule_field(&r.schedule),
            r.snr_db.to_string(),
            r.flops.to_string(),
            r.gflops.to_string(),
            r.accuracy.to_string(),
            r.n_samples.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(CliError::io(&path))
}

pub fn select(front_path: &Path, constraint: &ScenarioConstraint) -> Result<Selection, CliError> {
    let front: ParetoFront = read_json(front_path)?;
    Ok(select_scenario(&front, constraint))
}

pub fn export_trace(cfg: &RunConfig, schedule: &[f64], sample: usize) -> Result<String, CliError> {
    let weights = load_weights(cfg)?;
    let schedule = MergeSchedule::new(schedule.to_vec())?;
    if schedule.len() != weights.dims.layers {
        return Err(CliError::Config(format!(
            "--schedule has {} entries, the model has {} layers",
            schedule.len(),
            weights.dims.layers
        )));
    }
    let (_, evaluation) = splits(cfg, &weights)?;
    let example = evaluation.examples.get(sample).ok_or_else(|| {
        CliError::Config(format!("--sample {sample} is out of range (evaluation split has {})", evaluation.len()))
    })?;
    let (_, trace) = encode_with_trace(&example.image, &weights, &schedule)?;
    Ok(merge_trace_csv(&trace))
}
