//! Meta-test protocol: adapt a learned initialization to unseen tasks and
//! measure post-adaptation query loss (and accuracy for classification).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{adapt, train, MetaConfig};
use crate::numcore::{forward, loss, Batch, LossKind, Matrix, MlpSpec, ParamVector};
use crate::par::{map_indexed, try_map_indexed, Schedule};
use crate::rng::{stream, Purpose};
use crate::tasks::{
    sine_batch_at, split_sub_batches, SineTask, TaskDescriptor, TaskSource, INPUT_RANGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub inner_steps: usize,
    pub inner_rate: f64,
    pub support_size: usize,
    pub query_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub index: usize,
    pub task: TaskDescriptor,
    /// Query loss before adaptation.
    pub loss_before: f64,
    /// Query loss after adaptation.
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_tasks: usize,
    pub eval_seed: u64,
    pub protocol: EvalProtocol,
    pub mean: f64,
    pub std_error: f64,
    pub mean_accuracy: Option<f64>,
    pub accuracy_std_error: Option<f64>,
    pub per_task: Vec<TaskResult>,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Row-wise argmax, ties going to the lowest index.
pub fn argmax_rows(outputs: &Matrix) -> Vec<usize> {
    outputs
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(spec: &MlpSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    let predicted = argmax_rows(&forward(spec, params, batch.inputs())?);
    let correct = predicted
        .iter()
        .zip(batch.labels())
        .filter(|(p, l)| **p == *l)
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

#[derive(Debug, Serialize)]
struct TaskCsvRow {
    index: usize,
    task: String,
    loss_before: f64,
    loss: f64,
    accuracy: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.per_task {
            w.serialize(TaskCsvRow {
                index: r.index,
                task: r.task.to_string(),
                loss_before: r.loss_before,
                loss: r.loss,
                accuracy: r.accuracy,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Adapts `theta` to each of `n_tasks` fresh tasks and scores the query sets.
/// Task `i` draws from an rng keyed by `(eval_seed, i)`, so the task stream is
/// shared by every model evaluated with the same seed.
pub fn meta_test(
    theta: &ParamVector,
    spec: &MlpSpec,
    source: &TaskSource,
    n_tasks: usize,
    inner_steps: usize,
    inner_rate: f64,
    eval_seed: u64,
) -> Result<EvalReport> {
    meta_test_with(
        theta,
        spec,
        source,
        n_tasks,
        inner_steps,
        inner_rate,
        eval_seed,
        Schedule::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn meta_test_with(
    theta: &ParamVector,
    spec: &MlpSpec,
    source: &TaskSource,
    n_tasks: usize,
    inner_steps: usize,
    inner_rate: f64,
    eval_seed: u64,
    schedule: Schedule,
) -> Result<EvalReport> {
    if n_tasks == 0 {
        return Err(Error::Config("meta-test needs at least one task".into()));
    }
    if !inner_rate.is_finite() || inner_rate < 0.0 {
        return Err(Error::Config(format!("bad inner rate {inner_rate}")));
    }
    let classification = source.is_classification();
    let per_task = try_map_indexed(n_tasks, schedule, |index| {
        let mut rng = stream(eval_seed, Purpose::Eval, 0, index as u64);
        let task = source.sample(index, &mut rng)?;
        let plan = split_sub_batches(&task.support, inner_steps, &mut rng)?;
        let adapted = adapt(spec, theta, &plan, inner_rate)?.adapted;
        Ok(TaskResult {
            index,
            loss_before: loss(spec, theta, &task.query)?,
            loss: loss(spec, &adapted, &task.query)?,
            accuracy: if classification {
                Some(accuracy(spec, &adapted, &task.query)?)
            } else {
                None
            },
            task: task.descriptor,
        })
    })?;
    let losses: Vec<f64> = per_task.iter().map(|r| r.loss).collect();
    let (mean, std_error) = mean_and_std_error(&losses);
    let (mean_accuracy, accuracy_std_error) = if classification {
        let accs: Vec<f64> = per_task.iter().filter_map(|r| r.accuracy).collect();
        let (m, s) = mean_and_std_error(&accs);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(EvalReport {
        n_tasks,
        eval_seed,
        protocol: EvalProtocol {
            inner_steps,
            inner_rate,
            support_size: source.support_size(),
            query_size: source.query_size(),
        },
        mean,
        std_error,
        mean_accuracy,
        accuracy_std_error,
        per_task,
    })
}

/// Dense-grid predictions of a regression network before and after
/// adaptation, with the task's true curve and the support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub task: SineTask,
    pub grid: Vec<f64>,
    pub y_true: Vec<f64>,
    pub y_pre: Vec<f64>,
    pub y_post: Vec<f64>,
    pub support: Vec<(f64, f64)>,
}

impl CurveExport {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    fn mse(pred: &[f64], truth: &[f64]) -> f64 {
        pred.iter()
            .zip(truth)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / truth.len() as f64
    }

    pub fn pre_mse(&self) -> f64 {
        Self::mse(&self.y_pre, &self.y_true)
    }

    pub fn post_mse(&self) -> f64 {
        Self::mse(&self.y_post, &self.y_true)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["x", "y_true", "y_pre", "y_post"])?;
        for i in 0..self.grid.len() {
            w.serialize((self.grid[i], self.y_true[i], self.y_pre[i], self.y_post[i]))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_support_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["x", "y"])?;
        for p in &self.support {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn export_curves(
    theta_before: &ParamVector,
    theta_after: &ParamVector,
    spec: &MlpSpec,
    task: &SineTask,
    support: &Batch,
    grid_resolution: usize,
) -> Result<CurveExport> {
    if spec.input_dim() != 1
        || spec.output_dim() != 1
        || support.loss_kind() != LossKind::MeanSquaredError
    {
        return Err(Error::Config(
            "curve export needs a 1-D regression network".into(),
        ));
    }
    if grid_resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let grid = linspace(INPUT_RANGE.0, INPUT_RANGE.1, grid_resolution);
    let truth = sine_batch_at(task, grid.clone())?;
    let y_pre = forward(spec, theta_before, truth.inputs())?
        .as_slice()
        .to_vec();
    let y_post = forward(spec, theta_after, truth.inputs())?
        .as_slice()
        .to_vec();
    Ok(CurveExport {
        task: *task,
        y_true: truth.targets().as_slice().to_vec(),
        grid,
        y_pre,
        y_post,
        support: support
            .inputs()
            .as_slice()
            .iter()
            .copied()
            .zip(support.targets().as_slice().iter().copied())
            .collect(),
    })
}

/// One model configuration entered into a comparison.
#[derive(Debug, Clone)]
pub struct Contender {
    pub name: String,
    pub config: MetaConfig,
    pub spec: MlpSpec,
    pub source: TaskSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation across successful seeds.
    pub std: f64,
    pub per_seed: Vec<Option<f64>>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub eval_seed: u64,
    pub n_tasks: usize,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Serialize)]
struct ComparisonCsvRow<'a> {
    name: &'a str,
    variant: &'a str,
    metric: &'a str,
    mean: f64,
    std: f64,
    seeds_ok: usize,
    failures: usize,
}

impl ComparisonTable {
    pub fn failure_count(&self) -> usize {
        // each failed cell shows up once per metric row; count the loss rows
        self.rows
            .iter()
            .filter(|r| r.metric == "loss")
            .map(|r| r.failures.len())
            .sum()
    }

    pub fn row(&self, name: &str, metric: &str) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.name == name && r.metric == metric)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.rows {
            w.serialize(ComparisonCsvRow {
                name: &r.name,
                variant: &r.variant,
                metric: &r.metric,
                mean: r.mean,
                std: r.std,
                seeds_ok: r.per_seed.iter().flatten().count(),
                failures: r.failures.len(),
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trained-and-tested outcome of one (contender, seed) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub contender: usize,
    pub seed: u64,
    pub result: std::result::Result<(ParamVector, EvalReport), String>,
}

/// Trains every contender under every seed and meta-tests each trained model
/// on the same held-out task stream (`eval_seed`). Cells run in parallel;
/// a failing cell is recorded, not fatal.
pub fn run_cells(
    contenders: &[Contender],
    seeds: &[u64],
    n_tasks: usize,
    eval_seed: u64,
    schedule: Schedule,
) -> Vec<CellOutcome> {
    let cells: Vec<(usize, u64)> = (0..contenders.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    map_indexed(cells.len(), schedule, |i| {
        let (c, seed) = cells[i];
        let contender = &contenders[c];
        let config = MetaConfig {
            seed,
            ..contender.config.clone()
        };
        let result = train(&config, &contender.source, &contender.spec)
            .and_then(|(theta, _)| {
                let report = meta_test(
                    &theta,
                    &contender.spec,
                    &contender.source,
                    n_tasks,
                    config.inner_steps,
                    config.inner_rate,
                    eval_seed,
                )?;
                Ok((theta, report))
            })
            .map_err(|e| e.to_string());
        CellOutcome {
            contender: c,
            seed,
            result,
        }
    })
}

type MetricFn = fn(&EvalReport) -> Option<f64>;

pub fn tabulate(
    contenders: &[Contender],
    seeds: &[u64],
    n_tasks: usize,
    eval_seed: u64,
    cells: &[CellOutcome],
) -> ComparisonTable {
    let mut rows = Vec::new();
    for (ci, contender) in contenders.iter().enumerate() {
        let mine: Vec<&CellOutcome> = cells.iter().filter(|c| c.contender == ci).collect();
        let failures: Vec<String> = mine
            .iter()
            .filter_map(|c| {
                c.result
                    .as_ref()
                    .err()
                    .map(|e| format!("seed {}: {e}", c.seed))
            })
            .collect();
        let mut metrics: Vec<(&str, MetricFn)> = vec![("loss", |r| Some(r.mean))];
        if contender.source.is_classification() {
            metrics.push(("accuracy", |r| r.mean_accuracy));
        }
        for (metric, get) in metrics {
            let per_seed: Vec<Option<f64>> = mine
                .iter()
                .map(|c| c.result.as_ref().ok().and_then(|(_, r)| get(r)))
                .collect();
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let (mean, se) = mean_and_std_error(&ok);
            rows.push(ComparisonRow {
                name: contender.name.clone(),
                variant: contender.config.variant.to_string(),
                metric: metric.to_string(),
                mean,
                std: se * (ok.len() as f64).sqrt(),
                per_seed,
                failures: failures.clone(),
            });
        }
    }
    ComparisonTable {
        seeds: seeds.to_vec(),
        eval_seed,
        n_tasks,
        rows,
    }
}

/// Mean +- std over seeds for each contender and metric.
pub fn compare_variants(
    contenders: &[Contender],
    seeds: &[u64],
    n_tasks: usize,
    eval_seed: u64,
) -> Result<ComparisonTable> {
    if contenders.len() < 2 {
        return Err(Error::Config(
            "comparison needs at least two configurations".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::Config("comparison needs at least one seed".into()));
    }
    let cells = run_cells(contenders, seeds, n_tasks, eval_seed, Schedule::default());
    Ok(tabulate(contenders, seeds, n_tasks, eval_seed, &cells))
}
