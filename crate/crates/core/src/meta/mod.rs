//! Meta-training: per-task inner-loop adaptation, task weighting and the
//! Reptile / first-order MAML outer updates.
//!
//! One outer iteration samples `N` tasks, adapts a copy of `theta` to each with
//! `k` SGD steps (one sub-batch per step), and combines the results:
//!
//! * Reptile: `theta + outer_rate * sum_i w_i (theta_i - theta)`
//! * first-order MAML: `theta - outer_rate * sum_i w_i grad L_i(theta_i)`
//!
//! Baseline variants use `w_i = 1/N`; the `ga_` variants use
//! [`agreement_weights`] of the displacements `g_i = theta - theta_i`. The
//! first-order MAML variant also weights from `g_i` rather than from the
//! outer gradients, because the displacements are what the weighting rule is
//! defined on; weighting from the outer gradients is a possible alternative
//! that is not implemented.

mod checkpoint;
mod trace;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, read_sidecar, write_checkpoint,
    write_sidecar, Checkpoint, CheckpointSidecar, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use trace::{IterationRecord, TrainTrace};

use crate::agreement::{agreement_weights, AgreementWeights, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::numcore::{init_params, loss_and_gradient, sgd_step, MlpSpec, ParamVector};
use crate::par::{try_map_indexed, Schedule};
use crate::rng::{stream, Purpose};
use crate::tasks::{split_sub_batches, TaskBatchPlan, TaskSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Reptile,
    GaReptile,
    Fomaml,
    GaFomaml,
}

impl Variant {
    pub fn uses_agreement(self) -> bool {
        matches!(self, Variant::GaReptile | Variant::GaFomaml)
    }

    pub fn is_reptile(self) -> bool {
        matches!(self, Variant::Reptile | Variant::GaReptile)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Reptile => "reptile",
            Variant::GaReptile => "ga_reptile",
            Variant::Fomaml => "fomaml",
            Variant::GaFomaml => "ga_fomaml",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub variant: Variant,
    pub inner_rate: f64,
    pub outer_rate: f64,
    pub inner_steps: usize,
    pub tasks_per_batch: usize,
    pub outer_iterations: usize,
    /// Support examples per task; must match the task source.
    pub examples_per_task: usize,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps_degenerate: f64,
}

impl MetaConfig {
    /// The sine-regression protocol: 10 support points, 5 inner steps, 5 tasks
    /// per outer iteration. The rates come from a grid search over
    /// inner {0.005..0.05} x outer {0.1..2} and are shared by all variants.
    pub fn sine(variant: Variant, seed: u64) -> Self {
        MetaConfig {
            variant,
            inner_rate: 0.02,
            outer_rate: 1.0,
            inner_steps: 5,
            tasks_per_batch: 5,
            outer_iterations: 20_000,
            examples_per_task: 10,
            seed,
            eps_degenerate: DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r.is_finite() && r > 0.0;
        if !rate_ok(self.inner_rate) || !rate_ok(self.outer_rate) {
            return Err(Error::Config(format!(
                "rates must be positive and finite (inner {}, outer {})",
                self.inner_rate, self.outer_rate
            )));
        }
        if self.inner_steps == 0 || self.tasks_per_batch == 0 {
            return Err(Error::Config(
                "inner_steps and tasks_per_batch must be >= 1".into(),
            ));
        }
        if self.examples_per_task < self.inner_steps {
            return Err(Error::Config(format!(
                "{} examples cannot feed {} inner steps",
                self.examples_per_task, self.inner_steps
            )));
        }
        if !(self.eps_degenerate > 0.0 && self.eps_degenerate.is_finite()) {
            return Err(Error::Config("eps_degenerate must be positive".into()));
        }
        Ok(())
    }

    /// Checks the config against a task source and network.
    pub fn validate_for(&self, source: &TaskSource, spec: &MlpSpec) -> Result<()> {
        self.validate()?;
        spec.validate()?;
        source.validate()?;
        if source.support_size() != self.examples_per_task {
            return Err(Error::Config(format!(
                "examples_per_task is {} but the task source yields {} support examples",
                self.examples_per_task,
                source.support_size()
            )));
        }
        if spec.input_dim() != source.input_dim() || spec.output_dim() != source.output_dim() {
            return Err(Error::Config(format!(
                "network {:?} does not fit tasks with {} inputs and {} outputs",
                spec.layer_sizes,
                source.input_dim(),
                source.output_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    /// `theta_i`
    pub adapted: ParamVector,
    /// `g_i = theta - theta_i`
    pub displacement: ParamVector,
    /// Loss on the last sub-batch, measured before the last step.
    pub final_inner_loss: f64,
    /// Gradient of the full task loss at `theta_i`, when requested.
    pub outer_gradient: Option<ParamVector>,
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { stage } => Error::NonFinite {
            stage: format!("inner step {step}: {stage}"),
        },
        other => other,
    }
}

/// `k = plan.steps()` sequential SGD steps from `theta`, step `t` on
/// sub-batch `t`, followed by the outer gradient on the whole plan.
pub fn adapt(
    spec: &MlpSpec,
    theta: &ParamVector,
    plan: &TaskBatchPlan,
    inner_rate: f64,
) -> Result<AdaptResult> {
    adapt_with(spec, theta, plan, inner_rate, true)
}

pub(crate) fn adapt_with(
    spec: &MlpSpec,
    theta: &ParamVector,
    plan: &TaskBatchPlan,
    inner_rate: f64,
    want_outer_gradient: bool,
) -> Result<AdaptResult> {
    if plan.steps() == 0 {
        return Err(Error::TooFewExamples {
            examples: 0,
            parts: 0,
        });
    }
    let mut params = theta.clone();
    let mut final_inner_loss = 0.0;
    for (step, batch) in plan.sub_batches.iter().enumerate() {
        let (loss, grad) = loss_and_gradient(spec, &params, batch).map_err(|e| at_step(step, e))?;
        params = sgd_step(&params, &grad, inner_rate).map_err(|e| at_step(step, e))?;
        final_inner_loss = loss;
    }
    let outer_gradient = if want_outer_gradient {
        let full = plan.full()?;
        Some(
            loss_and_gradient(spec, &params, &full)
                .map_err(|e| at_step(plan.steps(), e))?
                .1,
        )
    } else {
        None
    };
    Ok(AdaptResult {
        displacement: theta.sub(&params)?,
        adapted: params,
        final_inner_loss,
        outer_gradient,
    })
}

fn check_weights(adapts: &[AdaptResult], weights: &[f64]) -> Result<()> {
    if adapts.len() != weights.len() {
        return Err(Error::shape("task weights", adapts.len(), weights.len()));
    }
    if adapts.is_empty() {
        return Err(Error::InsufficientData("no adapted tasks".into()));
    }
    Ok(())
}

/// `theta + outer_rate * sum_i w_i (theta_i - theta)`, accumulated in task
/// order from the stored displacements.
pub fn outer_update_reptile(
    theta: &ParamVector,
    adapts: &[AdaptResult],
    weights: &[f64],
    outer_rate: f64,
) -> Result<ParamVector> {
    check_weights(adapts, weights)?;
    let mut step = ParamVector::zeros(theta.len());
    for (a, &w) in adapts.iter().zip(weights) {
        // theta_i - theta = -g_i
        step = step.add_scaled(&a.displacement, -w)?;
    }
    theta.add_scaled(&step, outer_rate)
}

/// `theta - outer_rate * sum_i w_i grad L_i(theta_i)`, first order only.
pub fn outer_update_maml(
    theta: &ParamVector,
    adapts: &[AdaptResult],
    weights: &[f64],
    outer_rate: f64,
) -> Result<ParamVector> {
    check_weights(adapts, weights)?;
    let mut step = ParamVector::zeros(theta.len());
    for (i, (a, &w)) in adapts.iter().zip(weights).enumerate() {
        let g = a
            .outer_gradient
            .as_ref()
            .ok_or_else(|| Error::InsufficientData(format!("task {i} has no outer gradient")))?;
        step = step.add_scaled(g, w)?;
    }
    theta.add_scaled(&step, -outer_rate)
}

/// Samples, splits and adapts the `task_index`-th task of outer iteration
/// `iteration`. Each task owns an rng stream keyed by those indices.
pub fn adapt_task(
    config: &MetaConfig,
    source: &TaskSource,
    spec: &MlpSpec,
    theta: &ParamVector,
    iteration: usize,
    task_index: usize,
) -> Result<AdaptResult> {
    let mut rng = stream(
        config.seed,
        Purpose::Train,
        iteration as u64,
        task_index as u64,
    );
    let task = source.sample(task_index, &mut rng)?;
    let plan = split_sub_batches(&task.support, config.inner_steps, &mut rng)?;
    adapt_with(
        spec,
        theta,
        &plan,
        config.inner_rate,
        !config.variant.is_reptile(),
    )
}

/// One full outer iteration; returns the new parameters and the weights used.
pub fn outer_step(
    config: &MetaConfig,
    source: &TaskSource,
    spec: &MlpSpec,
    theta: &ParamVector,
    iteration: usize,
    schedule: Schedule,
) -> Result<(ParamVector, AgreementWeights, Vec<AdaptResult>)> {
    let adapts = try_map_indexed(config.tasks_per_batch, schedule, |i| {
        adapt_task(config, source, spec, theta, iteration, i)
    })?;
    let weights = if config.variant.uses_agreement() {
        let displacements: Vec<ParamVector> =
            adapts.iter().map(|a| a.displacement.clone()).collect();
        agreement_weights(&displacements, config.eps_degenerate)?
    } else {
        AgreementWeights::uniform(adapts.len())
    };
    let next = if config.variant.is_reptile() {
        outer_update_reptile(theta, &adapts, &weights.weights, config.outer_rate)?
    } else {
        outer_update_maml(theta, &adapts, &weights.weights, config.outer_rate)?
    };
    Ok((next, weights, adapts))
}

/// Full meta-training from the seed's initialization.
pub fn train(
    config: &MetaConfig,
    source: &TaskSource,
    spec: &MlpSpec,
) -> Result<(ParamVector, TrainTrace)> {
    let init = init_params(spec, config.seed);
    train_from(config, source, spec, init, 0, Schedule::default())
}

/// Runs outer iterations `start_iteration..config.outer_iterations` from
/// `theta`. Resuming a checkpoint taken after iteration `j` with
/// `start_iteration = j` reproduces an uninterrupted run bit for bit.
pub fn train_from(
    config: &MetaConfig,
    source: &TaskSource,
    spec: &MlpSpec,
    mut theta: ParamVector,
    start_iteration: usize,
    schedule: Schedule,
) -> Result<(ParamVector, TrainTrace)> {
    config.validate_for(source, spec)?;
    if theta.len() != spec.param_count() {
        return Err(Error::shape(
            "initial parameters",
            spec.param_count(),
            theta.len(),
        ));
    }
    let mut trace = TrainTrace::default();
    let report_every = (config.outer_iterations / 10).max(1);
    for iteration in start_iteration..config.outer_iterations {
        let (next, weights, adapts) = outer_step(config, source, spec, &theta, iteration, schedule)
            .map_err(|e| Error::Training {
                iteration,
                source: Box::new(e),
            })?;
        theta = next;
        let mean_inner_loss =
            adapts.iter().map(|a| a.final_inner_loss).sum::<f64>() / adapts.len() as f64;
        trace.records.push(IterationRecord {
            iteration,
            weights: weights.weights,
            denominator: weights.denominator,
            degenerate: weights.degenerate,
            mean_inner_loss,
            param_norm: theta.norm(),
        });
        if (iteration + 1) % report_every == 0 {
            log::info!(
                "{} iteration {}/{}: inner loss {:.4}",
                config.variant,
                iteration + 1,
                config.outer_iterations,
                mean_inner_loss
            );
        }
    }
    Ok((theta, trace))
}

#[cfg(test)]
mod tests;
