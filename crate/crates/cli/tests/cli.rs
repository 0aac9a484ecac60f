use std::path::Path;
use std::process::{Command, Output};

use mergefront::merging::MergeSchedule;
use mergefront::mobo::{Objectives, ParetoFront, ParetoPoint};

fn mergefront(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mergefront"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write_front(dir: &Path) -> std::path::PathBuf {
    let point = |acc: f64, flops: u64, p: f64| ParetoPoint {
        schedule: MergeSchedule::uniform(4, p).unwrap(),
        accuracy: acc,
        flops,
    };
    let front = ParetoFront {
        points: vec![point(0.6, 1_000_000, 0.3), point(0.7, 1_400_000, 0.2), point(0.8, 1_770_496, 0.0)],
        reference: Objectives::new(0.0, 1_788_200.0),
    };
    let path = dir.join("front.json");
    std::fs::write(&path, serde_json::to_string(&front).unwrap()).unwrap();
    path
}

fn select(front: &Path, flags: &[&str]) -> (i32, serde_json::Value) {
    let mut args = vec!["select", "--front", front.to_str().unwrap()];
    args.extend_from_slice(flags);
    let out = mergefront(&args, None);
    let json = serde_json::from_slice(&out.stdout).unwrap_or(serde_json::Value::Null);
    (out.status.code().unwrap(), json)
}

#[test]
fn select_scenarios_on_a_small_front() {
    let dir = tempfile::tempdir().unwrap();
    let front = write_front(dir.path());

    let (code, v) = select(&front, &["--max-accuracy"]);
    assert_eq!(code, 0);
    assert_eq!(v["status"], "selected");
    assert_eq!(v["point"]["flops"], 1_770_496);

    let (_, v) = select(&front, &["--min-flops", "--acc-at-least", "0.65"]);
    assert_eq!(v["point"]["flops"], 1_400_000);

    // Highest throughput within budget is the cheapest member.
    let (_, v) = select(&front, &["--flops-at-most", "1500000"]);
    assert_eq!(v["point"]["flops"], 1_000_000);

    let (code, v) = select(&front, &["--min-flops", "--acc-at-least", "0.95"]);
    assert_eq!(code, 0);
    assert_eq!(v["status"], "infeasible");

    let (_, v) = select(&front, &["--flops-at-most", "10"]);
    assert_eq!(v["status"], "infeasible");
}

#[test]
fn select_needs_exactly_one_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let front = write_front(dir.path());
    assert_eq!(select(&front, &[]).0, 2);
    assert_eq!(select(&front, &["--max-accuracy", "--flops-at-most", "5"]).0, 2);
    assert_eq!(select(&front, &["--min-flops"]).0, 2);
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!(
            "output_dir = \"out\"\nweights_seed = 1\ndataset_seed = 2\nchannel_seed = 3\nbo_seed = 4\n\
             calibration_per_class = 8\neval_per_class = 8\nbo_subset = 32\nbudget = 18\n\
             random_baselines = 2\nsweep_snrs = [-10.0, 25.0]\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn missing_weights_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "weights_path = \"nowhere.bin\"\n");
    let out = mergefront(&["calibrate"], Some(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights_path"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "bugdet = 3\n");
    assert_eq!(mergefront(&["optimize"], Some(&cfg)).status.code(), Some(2));
}

#[test]
fn export_trace_writes_one_row_per_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = mergefront(&["export-trace", "--schedule", "0.3,0.3,0.3,0.3"], Some(&cfg));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].contains("layer"));
    // 16 → 12 → 9 → 7 → 5 tokens.
    assert_eq!(rows.len() - 1, 4 + 3 + 2 + 2);

    let out = mergefront(&["export-trace", "--schedule", "0.1,0.2"], Some(&cfg));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn optimize_then_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = mergefront(&["optimize"], Some(&cfg));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = dir.path().join("out");
    let history = std::fs::read_to_string(results.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 18);
    let last: serde_json::Value = serde_json::from_str(history.lines().last().unwrap()).unwrap();
    assert!(last.get("gp_hyperparams").is_some());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(results.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["evaluations"], 18);

    let out = mergefront(&["sweep"], Some(&cfg));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let front: ParetoFront = serde_json::from_slice(&std::fs::read(results.join("front.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(results.join("sweep.csv")).unwrap();
    // front + unmerged + 3 uniform + 2 random, at 2 SNRs.
    assert_eq!(csv.lines().count() - 1, (front.len() + 1 + 3 + 2) * 2);
    let policy: serde_json::Value =
        serde_json::from_slice(&std::fs::read(results.join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy["entries"].as_array().unwrap().len(), 2);
}
