use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use metagree::agreement::agreement_weights;
use metagree::evaluate::{export_curves, run_cells, tabulate, Contender};
use metagree::meta::{
    adapt, read_checkpoint, read_sidecar, train_from, write_checkpoint, write_sidecar,
    CheckpointSidecar,
};
use metagree::numcore::init_params;
use metagree::rng::{stream, Purpose};
use metagree::tasks::{sample_sine_task, sine_batch, split_sub_batches, SineTask, TaskFamily};
use metagree::{meta_test, MlpSpec, ParamVector, Schedule};

use crate::experiment::Experiment;

/// An error plus the exit code it maps to.
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn code(&self) -> u8 {
        self.code
    }

    pub fn error(&self) -> &anyhow::Error {
        &self.error
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numeric = error.chain().any(|cause| {
            cause
                .downcast_ref::<metagree::Error>()
                .is_some_and(metagree::Error::is_numeric)
        });
        Failure {
            code: if numeric { 3 } else { 2 },
            error,
        }
    }
}

impl From<metagree::Error> for Failure {
    fn from(error: metagree::Error) -> Self {
        anyhow::Error::from(error).into()
    }
}

type CmdResult = Result<(), Failure>;

pub fn parse_task(s: &str) -> Result<SineTask, String> {
    let (a, phi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `amplitude,phase`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    SineTask::new(parse(a)?, parse(phi)?).map_err(|e| e.to_string())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_params(checkpoint: &Path, spec: &MlpSpec) -> anyhow::Result<ParamVector> {
    let ckpt = read_checkpoint(checkpoint)?;
    if ckpt.layer_sizes != spec.layer_sizes {
        bail!(
            "checkpoint {} has layers {:?}, experiment expects {:?}",
            checkpoint.display(),
            ckpt.layer_sizes,
            spec.layer_sizes
        );
    }
    Ok(ckpt.params)
}

fn resume_point(path: &Path, exp: &Experiment) -> anyhow::Result<(ParamVector, usize)> {
    let params = load_params(path, &exp.spec)?;
    let sidecar = read_sidecar(&CheckpointSidecar::path_for(path))
        .context("resuming needs the checkpoint's sidecar")?;
    if sidecar.spec != exp.spec {
        bail!("checkpoint network differs from the experiment's network");
    }
    if sidecar.iterations_done > exp.file.meta.outer_iterations {
        bail!(
            "checkpoint already has {} iterations, experiment asks for {}",
            sidecar.iterations_done,
            exp.file.meta.outer_iterations
        );
    }
    log::info!(
        "resuming {} at iteration {}",
        path.display(),
        sidecar.iterations_done
    );
    Ok((params, sidecar.iterations_done))
}

pub fn train(config: &Path, out: Option<PathBuf>, resume: Option<PathBuf>) -> CmdResult {
    let exp = Experiment::load(config)?;
    let out = out.unwrap_or_else(|| exp.file.output_dir.clone());
    let meta = &exp.file.meta;

    let (theta, start) = match &resume {
        Some(path) => resume_point(path, &exp)?,
        None => (init_params(&exp.spec, meta.seed), 0),
    };

    create_dir(&out)?;
    let (theta, trace) = train_from(
        meta,
        &exp.source,
        &exp.spec,
        theta,
        start,
        Schedule::default(),
    )?;

    let model = out.join("model.mgre");
    write_checkpoint(&model, &exp.spec, &theta)?;
    write_sidecar(
        &CheckpointSidecar::path_for(&model),
        &CheckpointSidecar {
            config: meta.clone(),
            spec: exp.spec.clone(),
            family: exp.file.tasks.clone(),
            iterations_done: meta.outer_iterations,
        },
    )?;
    trace.write_csv(&out.join("trace.csv"))?;
    let copy = out.join("experiment.json");
    let mut text = serde_json::to_string_pretty(&exp.file).map_err(anyhow::Error::from)?;
    text.push('\n');
    std::fs::write(&copy, text).with_context(|| format!("writing {}", copy.display()))?;

    println!(
        "trained {} for {} iterations ({} degenerate batches) -> {}",
        meta.variant,
        trace.len(),
        trace.degenerate_count(),
        model.display()
    );
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    config: &Path,
    n_tasks: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CmdResult {
    let exp = Experiment::load(config)?;
    let theta = load_params(checkpoint, &exp.spec)?;
    let n_tasks = n_tasks.unwrap_or(exp.file.eval.n_tasks);
    let seed = seed.unwrap_or(exp.file.eval.seed);
    let meta = &exp.file.meta;
    let report = meta_test(
        &theta,
        &exp.spec,
        &exp.source,
        n_tasks,
        meta.inner_steps,
        meta.inner_rate,
        seed,
    )?;

    let out = out.unwrap_or_else(|| exp.file.output_dir.clone());
    create_dir(&out)?;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;

    println!(
        "loss {:.6} +- {:.6} over {} tasks",
        report.mean, report.std_error, report.n_tasks
    );
    if let (Some(acc), Some(se)) = (report.mean_accuracy, report.accuracy_std_error) {
        println!("accuracy {acc:.4} +- {se:.4}");
    }
    Ok(())
}

fn read_gradients(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let rows: Vec<Vec<f64>> = if is_json {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| {
            format!(
                "{} is not a JSON array of arrays of numbers",
                path.display()
            )
        })?
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.with_context(|| format!("{} row {}", path.display(), i + 1))?;
            let row = record
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .with_context(|| format!("row {}: `{v}`", i + 1))
                })
                .collect::<anyhow::Result<Vec<f64>>>()?;
            rows.push(row);
        }
        rows
    };
    if rows.is_empty() {
        bail!("{} contains no rows", path.display());
    }
    let width = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        bail!(
            "ragged input: row 1 has {width} values, row {} has {}",
            i + 1,
            rows[i].len()
        );
    }
    Ok(rows)
}

pub fn weights(gradients: &Path, eps: f64) -> CmdResult {
    let rows = read_gradients(gradients)?;
    let vectors = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| ParamVector::new(r).with_context(|| format!("row {}", i + 1)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let w = agreement_weights(&vectors, eps)?;
    for (i, v) in w.weights.iter().enumerate() {
        println!("w[{i}] = {v}");
    }
    println!("denominator = {}", w.denominator);
    println!("degenerate = {}", w.degenerate);
    if w.degenerate {
        println!("note: denominator <= {eps:e}, uniform weights used");
    }
    Ok(())
}

pub fn curves(
    checkpoint: &Path,
    task: Option<SineTask>,
    seed: u64,
    out: &Path,
    resolution: usize,
) -> CmdResult {
    let sidecar = read_sidecar(&CheckpointSidecar::path_for(checkpoint))
        .context("curve export needs the checkpoint's sidecar")?;
    let TaskFamily::Sine(family) = &sidecar.family else {
        return Err(anyhow!("curve export needs a sine regression checkpoint").into());
    };
    let theta = load_params(checkpoint, &sidecar.spec)?;

    let mut rng = stream(seed, Purpose::Curves, 0, 0);
    let task = task.unwrap_or_else(|| sample_sine_task(&mut rng));
    let support = sine_batch(&task, family.support_points, &mut rng)?;
    let plan = split_sub_batches(&support, sidecar.config.inner_steps, &mut rng)?;
    let adapted = adapt(&sidecar.spec, &theta, &plan, sidecar.config.inner_rate)?.adapted;
    let export = export_curves(&theta, &adapted, &sidecar.spec, &task, &support, resolution)?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    export.write_csv(out)?;
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let support_path = out.with_file_name(format!("{stem}_support.csv"));
    export.write_support_csv(&support_path)?;

    println!(
        "task a={} phi={}: grid mse {:.6} before, {:.6} after -> {}",
        task.amplitude,
        task.phase,
        export.pre_mse(),
        export.post_mse(),
        out.display()
    );
    Ok(())
}

pub fn compare(configs: &[PathBuf], seeds: Vec<u64>, out: &Path) -> CmdResult {
    let experiments = configs
        .iter()
        .map(|p| Experiment::load(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let first = &experiments[0].file.eval;
    let seeds = if seeds.is_empty() {
        first.seeds.clone()
    } else {
        seeds
    };
    if seeds.is_empty() {
        return Err(anyhow!("no seeds: pass --seeds or set eval.seeds").into());
    }
    let (n_tasks, eval_seed) = (first.n_tasks, first.seed);
    for (exp, path) in experiments.iter().zip(configs) {
        if exp.file.eval.n_tasks != n_tasks || exp.file.eval.seed != eval_seed {
            log::warn!(
                "{}: eval block ignored, using n_tasks={n_tasks} seed={eval_seed} from {}",
                path.display(),
                configs[0].display()
            );
        }
    }

    let contenders: Vec<Contender> = experiments
        .into_iter()
        .zip(configs)
        .map(|(exp, path)| Contender {
            name: exp.name(path),
            config: exp.file.meta,
            spec: exp.spec,
            source: exp.source,
        })
        .collect();
    let cells = run_cells(&contenders, &seeds, n_tasks, eval_seed, Schedule::default());
    let table = tabulate(&contenders, &seeds, n_tasks, eval_seed, &cells);

    create_dir(out)?;
    table.write_csv(&out.join("comparison.csv"))?;
    let json_path = out.join("comparison.json");
    let mut text = serde_json::to_string_pretty(&table).map_err(anyhow::Error::from)?;
    text.push('\n');
    std::fs::write(&json_path, text).with_context(|| format!("writing {}", json_path.display()))?;

    for row in &table.rows {
        println!(
            "{:<20} {:<10} {:<8} {:.6} +- {:.6} ({} of {} seeds)",
            row.name,
            row.variant,
            row.metric,
            row.mean,
            row.std,
            row.per_seed.iter().flatten().count(),
            seeds.len()
        );
        for f in &row.failures {
            if row.metric == "loss" {
                eprintln!("  failed: {f}");
            }
        }
    }
    let failed = table.failure_count();
    if failed > 0 {
        return Err(Failure {
            code: 3,
            error: anyhow!("{failed} training/evaluation cell(s) failed"),
        });
    }
    Ok(())
}
