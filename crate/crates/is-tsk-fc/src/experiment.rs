//! Benchmark harness: repeated seeded runs over a `(rules, lambda)` grid,
//! per-run JSON records, diagnostic trace CSVs, a per-cell summary CSV in the
//! usual datasets-by-algorithms benchmark layout, and the Friedman-test
//! comparison over summary files.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::antecedent::Order;
use crate::dataset::{self, Dataset, LabelColumn, Standardization};
use crate::engine::{self, RunConfig, Termination};
use crate::error::{Error, Result};
use crate::fcm;
use crate::metrics;

/// Which clustering routine an experiment exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Zero-order rules: constant consequent blocks.
    IsTskFc0,
    /// First-order rules: affine consequent blocks.
    IsTskFc1,
    /// Plain fuzzy c-means baseline.
    Fcm,
}

impl Algorithm {
    pub fn order(self) -> Option<Order> {
        match self {
            Algorithm::IsTskFc0 => Some(Order::Zero),
            Algorithm::IsTskFc1 => Some(Order::First),
            Algorithm::Fcm => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::IsTskFc0 => "is-tsk-fc-0",
            Algorithm::IsTskFc1 => "is-tsk-fc-1",
            Algorithm::Fcm => "fcm",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "is-tsk-fc-0" => Ok(Algorithm::IsTskFc0),
            "is-tsk-fc-1" => Ok(Algorithm::IsTskFc1),
            "fcm" => Ok(Algorithm::Fcm),
            other => Err(format!(
                "unknown algorithm {other:?} (expected is-tsk-fc-0, is-tsk-fc-1 or fcm)"
            )),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one `run` invocation needs.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub datasets: Vec<PathBuf>,
    pub label_column: Option<LabelColumn>,
    pub algorithm: Algorithm,
    pub clusters: usize,
    pub rules: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub h: f64,
    pub repeats: usize,
    pub base_seed: u64,
    pub max_updates: usize,
    pub max_style_iters: usize,
    pub theta: f64,
    pub standardization: Standardization,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    /// Allow antecedent dimensions beyond the guardrail.
    pub force: bool,
    /// Write per-run objective/decision trace CSVs.
    pub write_traces: bool,
}

impl ExperimentSpec {
    pub fn new(
        datasets: Vec<PathBuf>,
        algorithm: Algorithm,
        clusters: usize,
        out_dir: PathBuf,
    ) -> Self {
        ExperimentSpec {
            datasets,
            label_column: None,
            algorithm,
            clusters,
            rules: vec![3],
            lambdas: vec![1.0],
            h: 1.0,
            repeats: 10,
            base_seed: 0,
            max_updates: 50,
            max_style_iters: 30,
            theta: 1e-3,
            standardization: Standardization::Zscore,
            out_dir,
            jobs: None,
            force: false,
            write_traces: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Experiment("no datasets given".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Experiment("repeats must be at least 1".into()));
        }
        if self.algorithm != Algorithm::Fcm && (self.rules.is_empty() || self.lambdas.is_empty()) {
            return Err(Error::Experiment(
                "rule and lambda grids must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed settings of an FCM baseline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcmBaselineConfig {
    pub clusters: usize,
    pub fuzzifier: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub standardization: Standardization,
}

/// Self-contained record of a single run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub algorithm: String,
    pub repeat: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine_config: Option<RunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fcm_config: Option<FcmBaselineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    pub wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    pub objective_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style_divergences: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregated metrics of one grid cell (one dataset, one algorithm, one
/// `(rules, lambda)` pair; the FCM baseline is a single cell).
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub dataset: String,
    pub algorithm: String,
    pub rules: Option<usize>,
    pub lambda: Option<f64>,
    pub repeats: usize,
    pub errors: usize,
    pub acc_mean: Option<f64>,
    pub acc_std: Option<f64>,
    pub nmi_mean: Option<f64>,
    pub nmi_std: Option<f64>,
    /// Best mean accuracy among this dataset/algorithm's cells.
    pub best: bool,
}

/// All records and summaries of one experiment.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<CellSummary>,
}

impl ExperimentOutcome {
    /// True when at least one run failed (exit code 2 for the CLI).
    pub fn partial(&self) -> bool {
        self.records.iter().any(|r| r.error.is_some())
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

fn fmt_lambda(lambda: f64) -> String {
    format!("{lambda:e}")
}

struct Task {
    dataset_index: usize,
    rules: Option<usize>,
    lambda: Option<f64>,
    repeat: usize,
    seed: u64,
}

struct TaskOutput {
    record: RunRecord,
    run_name: String,
    /// (column headers, rows) for the per-sample diagnostic export.
    decisions: Option<(Vec<String>, Vec<Vec<f64>>)>,
}

/// Runs the whole grid: every dataset, every `(rules, lambda)` cell, every
/// repeat. Seeds are `base_seed + repeat`. Writes `summary.csv`,
/// `runs/*.json` and, when enabled, `traces/*.csv` under the output
/// directory. Engine errors are recorded per run without aborting the grid.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;

    let datasets: Vec<Dataset> = spec
        .datasets
        .iter()
        .map(|p| dataset::load_csv(p, spec.label_column.as_ref()))
        .collect::<Result<_>>()?;

    // Dimension guardrail: the subproblems are dense in D = R(1+d).
    if let Some(order) = spec.algorithm.order() {
        let max_rules = spec.rules.iter().copied().max().unwrap_or(1);
        for ds in &datasets {
            let dim = max_rules * order.extended_len(ds.n_features());
            if dim > 2000 && !spec.force {
                return Err(Error::Experiment(format!(
                    "{}: antecedent dimension {dim} exceeds 2000 (R = {max_rules}, d = {}); \
                     pass --force to run anyway",
                    ds.name(),
                    ds.n_features()
                )));
            }
        }
    }

    let cells: Vec<(Option<usize>, Option<f64>)> = match spec.algorithm.order() {
        Some(_) => spec
            .rules
            .iter()
            .flat_map(|&r| spec.lambdas.iter().map(move |&l| (Some(r), Some(l))))
            .collect(),
        None => vec![(None, None)],
    };

    let mut tasks = Vec::new();
    for dataset_index in 0..datasets.len() {
        for &(rules, lambda) in &cells {
            for repeat in 0..spec.repeats {
                tasks.push(Task {
                    dataset_index,
                    rules,
                    lambda,
                    repeat,
                    seed: spec.base_seed + repeat as u64,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Experiment(format!("thread pool: {e}")))?;
    let mut outputs: Vec<TaskOutput> =
        pool.install(|| tasks.par_iter().map(|t| run_task(spec, &datasets, t)).collect());
    outputs.sort_by(|a, b| a.run_name.cmp(&b.run_name));

    let summaries = summarize(outputs.iter().map(|o| &o.record));

    fs::create_dir_all(spec.out_dir.join("runs")).map_err(|e| Error::Io {
        path: spec.out_dir.join("runs"),
        source: e,
    })?;
    if spec.write_traces {
        fs::create_dir_all(spec.out_dir.join("traces")).map_err(|e| Error::Io {
            path: spec.out_dir.join("traces"),
            source: e,
        })?;
    }

    for out in &outputs {
        let path = spec
            .out_dir
            .join("runs")
            .join(format!("{}.json", out.run_name));
        let file = fs::File::create(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        serde_json::to_writer_pretty(file, &out.record)
            .map_err(|e| Error::Experiment(format!("writing {}: {e}", path.display())))?;

        if spec.write_traces {
            let trace_path = spec
                .out_dir
                .join("traces")
                .join(format!("objective_{}.csv", out.run_name));
            let mut w = csv::Writer::from_path(&trace_path)
                .map_err(|e| Error::Experiment(format!("{}: {e}", trace_path.display())))?;
            w.write_record(["round", "objective"])
                .and_then(|()| {
                    for (i, v) in out.record.objective_trace.iter().enumerate() {
                        w.write_record([format!("{}", i + 1), format!("{v}")])?;
                    }
                    w.flush().map_err(csv::Error::from)
                })
                .map_err(|e| Error::Experiment(format!("{}: {e}", trace_path.display())))?;

            if let Some((headers, rows)) = &out.decisions {
                let dec_path = spec
                    .out_dir
                    .join("traces")
                    .join(format!("decisions_{}.csv", out.run_name));
                let mut w = csv::Writer::from_path(&dec_path)
                    .map_err(|e| Error::Experiment(format!("{}: {e}", dec_path.display())))?;
                w.write_record(headers)
                    .and_then(|()| {
                        for row in rows {
                            w.write_record(row.iter().map(|v| format!("{v}")))?;
                        }
                        w.flush().map_err(csv::Error::from)
                    })
                    .map_err(|e| Error::Experiment(format!("{}: {e}", dec_path.display())))?;
            }
        }
    }

    write_summary_csv(&summaries, &spec.out_dir.join("summary.csv"))?;
    if spec.write_traces {
        write_accuracy_surfaces(spec, &datasets, &summaries)?;
    }

    Ok(ExperimentOutcome {
        records: outputs.into_iter().map(|o| o.record).collect(),
        summaries,
    })
}

fn run_task(spec: &ExperimentSpec, datasets: &[Dataset], task: &Task) -> TaskOutput {
    let ds = &datasets[task.dataset_index];
    let ds_name = sanitize(ds.name());
    match spec.algorithm.order() {
        Some(order) => {
            let rules = task.rules.expect("engine task carries rules");
            let lambda = task.lambda.expect("engine task carries lambda");
            let run_name = format!(
                "{ds_name}_{}_R{rules}_L{}_rep{}",
                spec.algorithm,
                fmt_lambda(lambda),
                task.repeat
            );
            let config = RunConfig {
                order,
                rules,
                clusters: spec.clusters,
                lambda,
                h: spec.h,
                max_updates: spec.max_updates,
                max_style_iters: spec.max_style_iters,
                theta: spec.theta,
                seed: task.seed,
                standardization: spec.standardization,
                disable_style: false,
            };
            let mut record = RunRecord {
                dataset: ds.name().to_string(),
                algorithm: spec.algorithm.to_string(),
                repeat: task.repeat,
                seed: task.seed,
                rules: Some(rules),
                lambda: Some(lambda),
                engine_config: Some(config.clone()),
                fcm_config: None,
                termination: None,
                rounds: None,
                wall_time_seconds: 0.0,
                acc: None,
                nmi: None,
                objective_trace: Vec::new(),
                style_divergences: None,
                error: None,
            };
            let mut decisions = None;
            match engine::run(ds.features(), &config) {
                Ok(report) => {
                    record.termination = Some(report.terminated_by);
                    record.rounds = Some(report.rounds);
                    record.wall_time_seconds = report.wall_time;
                    record.objective_trace = report.objective_trace.clone();
                    record.style_divergences = Some(
                        report
                            .round_stats
                            .iter()
                            .flatten()
                            .filter(|s| s.style_diverged)
                            .count(),
                    );
                    if let Some(truth) = ds.labels() {
                        if let Ok(eval) = metrics::evaluate(truth, &report.final_labels) {
                            record.acc = Some(eval.acc);
                            record.nmi = Some(eval.nmi);
                        }
                    }
                    let k = report.decision_values.ncols();
                    let headers = (0..k).map(|c| format!("cluster_{c}")).collect();
                    let rows = (0..report.decision_values.nrows())
                        .map(|j| report.decision_values.row(j).iter().copied().collect())
                        .collect();
                    decisions = Some((headers, rows));
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            TaskOutput {
                record,
                run_name,
                decisions,
            }
        }
        None => {
            let run_name = format!("{ds_name}_fcm_rep{}", task.repeat);
            let config = FcmBaselineConfig {
                clusters: spec.clusters,
                fuzzifier: fcm::DEFAULT_FUZZIFIER,
                max_iter: fcm::DEFAULT_MAX_ITER,
                tol: fcm::DEFAULT_TOL,
                seed: task.seed,
                standardization: spec.standardization,
            };
            let mut record = RunRecord {
                dataset: ds.name().to_string(),
                algorithm: spec.algorithm.to_string(),
                repeat: task.repeat,
                seed: task.seed,
                rules: None,
                lambda: None,
                engine_config: None,
                fcm_config: Some(config.clone()),
                termination: None,
                rounds: None,
                wall_time_seconds: 0.0,
                acc: None,
                nmi: None,
                objective_trace: Vec::new(),
                style_divergences: None,
                error: None,
            };
            let mut decisions = None;
            let started = std::time::Instant::now();
            let features = dataset::standardize_features(ds.features(), spec.standardization);
            match fcm::fit(
                &features,
                config.clusters,
                config.fuzzifier,
                config.max_iter,
                config.tol,
                config.seed,
            ) {
                Ok(result) => {
                    record.wall_time_seconds = started.elapsed().as_secs_f64();
                    record.rounds = Some(result.iterations);
                    record.objective_trace = result.objective_trace.clone();
                    let labels = fcm::hard_labels(&result);
                    if let Some(truth) = ds.labels() {
                        if let Ok(eval) = metrics::evaluate(truth, &labels) {
                            record.acc = Some(eval.acc);
                            record.nmi = Some(eval.nmi);
                        }
                    }
                    let c = result.memberships.ncols();
                    let headers = (0..c).map(|r| format!("membership_{r}")).collect();
                    let rows = (0..result.memberships.nrows())
                        .map(|j| result.memberships.row(j).iter().copied().collect())
                        .collect();
                    decisions = Some((headers, rows));
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            TaskOutput {
                record,
                run_name,
                decisions,
            }
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summarize<'a>(records: impl Iterator<Item = &'a RunRecord>) -> Vec<CellSummary> {
    type Key = (String, String, Option<usize>, Option<u64>);
    let mut groups: HashMap<Key, Vec<&RunRecord>> = HashMap::new();
    let mut order: Vec<Key> = Vec::new();
    for r in records {
        let key = (
            r.dataset.clone(),
            r.algorithm.clone(),
            r.rules,
            r.lambda.map(f64::to_bits),
        );
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order.sort();

    let mut summaries: Vec<CellSummary> = order
        .iter()
        .map(|key| {
            let rs = &groups[key];
            let accs: Vec<f64> = rs.iter().filter_map(|r| r.acc).collect();
            let nmis: Vec<f64> = rs.iter().filter_map(|r| r.nmi).collect();
            let (acc_mean, acc_std) = if accs.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&accs);
                (Some(m), Some(s))
            };
            let (nmi_mean, nmi_std) = if nmis.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&nmis);
                (Some(m), Some(s))
            };
            CellSummary {
                dataset: key.0.clone(),
                algorithm: key.1.clone(),
                rules: key.2,
                lambda: key.3.map(f64::from_bits),
                repeats: rs.len(),
                errors: rs.iter().filter(|r| r.error.is_some()).count(),
                acc_mean,
                acc_std,
                nmi_mean,
                nmi_std,
                best: false,
            }
        })
        .collect();

    // Flag the best cell (by mean accuracy) per dataset/algorithm pair.
    let mut best: HashMap<(String, String), (usize, f64)> = HashMap::new();
    for (i, s) in summaries.iter().enumerate() {
        if let Some(acc) = s.acc_mean {
            let key = (s.dataset.clone(), s.algorithm.clone());
            let entry = best.entry(key).or_insert((i, acc));
            if acc > entry.1 {
                *entry = (i, acc);
            }
        }
    }
    for (_, (i, _)) in best {
        summaries[i].best = true;
    }
    summaries
}

fn percent_cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{:.2}\u{00b1}{:.2}", m * 100.0, s * 100.0),
        _ => String::new(),
    }
}

/// Writes the per-cell summary table. Numeric columns are fractions in
/// [0, 1]; the `acc`/`nmi` columns repeat them as percent `mean±std` cells in
/// the layout benchmark tables use.
pub fn write_summary_csv(summaries: &[CellSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    w.write_record([
        "dataset",
        "algorithm",
        "rules",
        "lambda",
        "repeats",
        "errors",
        "acc_mean",
        "acc_std",
        "nmi_mean",
        "nmi_std",
        "acc",
        "nmi",
        "best",
    ])
    .and_then(|()| {
        for s in summaries {
            w.write_record([
                s.dataset.clone(),
                s.algorithm.clone(),
                s.rules.map_or(String::new(), |r| r.to_string()),
                s.lambda.map_or(String::new(), fmt_lambda),
                s.repeats.to_string(),
                s.errors.to_string(),
                fmt(s.acc_mean),
                fmt(s.acc_std),
                fmt(s.nmi_mean),
                fmt(s.nmi_std),
                percent_cell(s.acc_mean, s.acc_std),
                percent_cell(s.nmi_mean, s.nmi_std),
                if s.best { "1".into() } else { String::new() },
            ])?;
        }
        w.flush().map_err(csv::Error::from)
    })
    .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))
}

fn write_accuracy_surfaces(
    spec: &ExperimentSpec,
    datasets: &[Dataset],
    summaries: &[CellSummary],
) -> Result<()> {
    if spec.algorithm.order().is_none() {
        return Ok(());
    }
    for ds in datasets {
        if ds.labels().is_none() {
            continue;
        }
        let mut lookup: HashMap<(usize, u64), f64> = HashMap::new();
        for s in summaries {
            if s.dataset == ds.name() {
                if let (Some(r), Some(l), Some(acc)) = (s.rules, s.lambda, s.acc_mean) {
                    lookup.insert((r, l.to_bits()), acc);
                }
            }
        }
        let path = spec.out_dir.join("traces").join(format!(
            "surface_acc_{}_{}.csv",
            sanitize(ds.name()),
            spec.algorithm
        ));
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))?;
        let mut header = vec!["rules".to_string()];
        header.extend(spec.lambdas.iter().map(|l| fmt_lambda(*l)));
        w.write_record(&header)
            .and_then(|()| {
                for &r in &spec.rules {
                    let mut row = vec![r.to_string()];
                    for &l in &spec.lambdas {
                        row.push(
                            lookup
                                .get(&(r, l.to_bits()))
                                .map_or(String::new(), |acc| format!("{acc:.6}")),
                        );
                    }
                    w.write_record(&row)?;
                }
                w.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Which metric the statistical comparison ranks on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Acc,
    Nmi,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "acc" => Ok(Metric::Acc),
            "nmi" => Ok(Metric::Nmi),
            other => Err(format!("unknown metric {other:?} (expected acc or nmi)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Acc => "acc",
            Metric::Nmi => "nmi",
        })
    }
}

/// Friedman-test comparison assembled from summary CSVs.
#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub metric: String,
    pub q_alpha: f64,
    pub algorithms: Vec<String>,
    pub datasets: Vec<String>,
    /// Best-cell metric means, datasets by algorithms.
    pub values: Vec<Vec<f64>>,
    /// Per-dataset ranks (1 = best), average ranks on ties.
    pub rank_table: Vec<Vec<f64>>,
    pub avg_ranks: Vec<f64>,
    pub chi_sq: f64,
    pub f_f: f64,
    pub cd: f64,
}

/// Ranks algorithms per dataset from one or more summary CSVs and runs the
/// Friedman test. Each algorithm's value on a dataset is its best cell's
/// mean for the chosen metric.
pub fn stats_from_summaries(
    paths: &[PathBuf],
    metric: Metric,
    q_alpha: f64,
) -> Result<StatsReport> {
    let mut algorithms: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, String), f64> = HashMap::new();

    for path in paths {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(ds_col), Some(algo_col)) = (col("dataset"), col("algorithm")) else {
            return Err(Error::Experiment(format!(
                "{}: missing dataset/algorithm columns",
                path.display()
            )));
        };
        let metric_col = match metric {
            Metric::Acc => col("acc_mean"),
            Metric::Nmi => col("nmi_mean"),
        }
        .ok_or_else(|| {
            Error::Experiment(format!("{}: missing {metric}_mean column", path.display()))
        })?;

        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))?;
            let ds = rec.get(ds_col).unwrap_or_default().to_string();
            let algo = rec.get(algo_col).unwrap_or_default().to_string();
            let raw = rec.get(metric_col).unwrap_or_default();
            if raw.is_empty() {
                continue;
            }
            let value: f64 = raw.parse().map_err(|_| {
                Error::Experiment(format!(
                    "{}: bad {metric}_mean value {raw:?}",
                    path.display()
                ))
            })?;
            if !datasets.contains(&ds) {
                datasets.push(ds.clone());
            }
            if !algorithms.contains(&algo) {
                algorithms.push(algo.clone());
            }
            let entry = cells.entry((ds, algo)).or_insert(f64::NEG_INFINITY);
            if value > *entry {
                *entry = value;
            }
        }
    }

    if algorithms.len() < 2 {
        return Err(Error::Experiment(
            "need at least two algorithms to compare".into(),
        ));
    }
    if datasets.len() < 2 {
        return Err(Error::Experiment(
            "need at least two datasets to compare".into(),
        ));
    }

    let mut values = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let mut row = Vec::with_capacity(algorithms.len());
        for algo in &algorithms {
            let v = cells.get(&(ds.clone(), algo.clone())).ok_or_else(|| {
                Error::Experiment(format!("missing cell: dataset {ds:?}, algorithm {algo:?}"))
            })?;
            row.push(*v);
        }
        values.push(row);
    }

    let rank_table = metrics::rank_rows(&values)?;
    let result = metrics::friedman(&rank_table, q_alpha)?;

    Ok(StatsReport {
        metric: metric.to_string(),
        q_alpha,
        algorithms,
        datasets,
        values,
        rank_table,
        avg_ranks: result.avg_ranks,
        chi_sq: result.chi_sq,
        f_f: result.f_f,
        cd: result.cd,
    })
}

/// Serializes a stats report as pretty JSON.
pub fn write_stats_json(report: &StatsReport, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::to_writer_pretty(file, report)
        .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))
}
