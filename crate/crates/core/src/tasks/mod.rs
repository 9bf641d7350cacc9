//! Task distributions and per-task example handling.

mod fewshot;
mod sine;

use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use fewshot::{
    load_omniglot, preprocess_image, sample_omniglot_task, sample_synthetic_classification,
    EpisodeShape, FewShotTask, OmniglotStore, SyntheticFamily,
};
pub use sine::{
    sample_sine_task, sine_batch, sine_batch_at, SineTask, AMPLITUDE_RANGE, INPUT_RANGE,
};

use crate::error::{Error, Result};
use crate::numcore::{Batch, HiddenActivation, LossKind, MlpSpec, OutputActivation};

/// A task's examples split for the inner loop, one sub-batch per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatchPlan {
    pub sub_batches: Vec<Batch>,
}

impl TaskBatchPlan {
    pub fn steps(&self) -> usize {
        self.sub_batches.len()
    }

    /// All examples of the plan in one batch.
    pub fn full(&self) -> Result<Batch> {
        Batch::concat(&self.sub_batches)
    }
}

/// Shuffles the examples and deals them into `k` parts whose sizes differ by
/// at most one (larger parts first).
pub fn split_sub_batches<R: Rng + ?Sized>(
    batch: &Batch,
    k: usize,
    rng: &mut R,
) -> Result<TaskBatchPlan> {
    let n = batch.len();
    if k == 0 || n < k {
        return Err(Error::TooFewExamples {
            examples: n,
            parts: k,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut sub_batches = Vec::with_capacity(k);
    for part in 0..k {
        let size = base + usize::from(part < extra);
        sub_batches.push(batch.select(&order[start..start + size])?);
        start += size;
    }
    Ok(TaskBatchPlan { sub_batches })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineFamily {
    #[serde(default = "default_support_points")]
    pub support_points: usize,
    #[serde(default = "default_query_points")]
    pub query_points: usize,
}

fn default_support_points() -> usize {
    10
}

fn default_query_points() -> usize {
    50
}

fn default_image_side() -> usize {
    14
}

impl Default for SineFamily {
    fn default() -> Self {
        SineFamily {
            support_points: default_support_points(),
            query_points: default_query_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmniglotFamily {
    pub root: PathBuf,
    #[serde(default = "default_image_side")]
    pub image_side: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
}

/// Serializable description of a task distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskFamily {
    Sine(SineFamily),
    Synthetic(SyntheticFamily),
    Omniglot(OmniglotFamily),
}

/// What a sampled task was, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskDescriptor {
    Sine(SineTask),
    Classes(Vec<String>),
    Fixed(usize),
}

impl std::fmt::Display for TaskDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskDescriptor::Sine(t) => write!(f, "a={};phi={}", t.amplitude, t.phase),
            TaskDescriptor::Classes(c) => write!(f, "{}", c.join("|")),
            TaskDescriptor::Fixed(i) => write!(f, "fixed-{i}"),
        }
    }
}

/// One sampled task: examples for adaptation plus held-out examples.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub descriptor: TaskDescriptor,
    pub support: Batch,
    pub query: Batch,
}

/// A ready-to-sample task distribution.
#[derive(Debug, Clone)]
pub enum TaskSource {
    Sine(SineFamily),
    Synthetic(SyntheticFamily),
    Omniglot {
        store: Arc<OmniglotStore>,
        shape: EpisodeShape,
    },
    /// Hand-built tasks; the task at batch position `i` is `tasks[i % len]`.
    Fixed(Vec<TaskInstance>),
}

impl TaskSource {
    /// Loads whatever data the family needs (Omniglot reads the image tree).
    pub fn from_family(family: &TaskFamily) -> Result<Self> {
        let source = match family {
            TaskFamily::Sine(f) => TaskSource::Sine(*f),
            TaskFamily::Synthetic(f) => TaskSource::Synthetic(*f),
            TaskFamily::Omniglot(f) => TaskSource::Omniglot {
                store: Arc::new(load_omniglot(&f.root, f.image_side)?),
                shape: EpisodeShape {
                    n_way: f.n_way,
                    k_shot: f.k_shot,
                    query_per_class: f.query_per_class,
                },
            },
        };
        source.validate()?;
        Ok(source)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSource::Sine(f) => {
                if f.support_points == 0 || f.query_points == 0 {
                    return Err(Error::Config(
                        "sine support/query sizes must be positive".into(),
                    ));
                }
            }
            TaskSource::Synthetic(f) => f.validate()?,
            TaskSource::Omniglot { shape, .. } => shape.validate()?,
            TaskSource::Fixed(tasks) => {
                let first = tasks
                    .first()
                    .ok_or_else(|| Error::Config("fixed task list is empty".into()))?;
                if tasks.iter().any(|t| {
                    t.support.len() != first.support.len()
                        || t.support.inputs().cols() != first.support.inputs().cols()
                        || t.support.targets().cols() != first.support.targets().cols()
                }) {
                    return Err(Error::Config("fixed tasks disagree in shape".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, task_index: usize, rng: &mut R) -> Result<TaskInstance> {
        match self {
            TaskSource::Sine(f) => {
                let task = sample_sine_task(rng);
                let support = sine_batch(&task, f.support_points, rng)?;
                let query = sine_batch(&task, f.query_points, rng)?;
                Ok(TaskInstance {
                    descriptor: TaskDescriptor::Sine(task),
                    support,
                    query,
                })
            }
            TaskSource::Synthetic(f) => Ok(few_shot_instance(f.sample(rng)?)),
            TaskSource::Omniglot { store, shape } => {
                Ok(few_shot_instance(sample_omniglot_task(store, *shape, rng)?))
            }
            TaskSource::Fixed(tasks) => {
                let mut t = tasks[task_index % tasks.len()].clone();
                t.descriptor = TaskDescriptor::Fixed(task_index % tasks.len());
                Ok(t)
            }
        }
    }

    /// Number of support examples every sampled task carries.
    pub fn support_size(&self) -> usize {
        match self {
            TaskSource::Sine(f) => f.support_points,
            TaskSource::Synthetic(f) => f.n_way * f.k_shot,
            TaskSource::Omniglot { shape, .. } => shape.n_way * shape.k_shot,
            TaskSource::Fixed(tasks) => tasks.first().map_or(0, |t| t.support.len()),
        }
    }

    pub fn query_size(&self) -> usize {
        match self {
            TaskSource::Sine(f) => f.query_points,
            TaskSource::Synthetic(f) => f.n_way * f.query_per_class,
            TaskSource::Omniglot { shape, .. } => shape.n_way * shape.query_per_class,
            TaskSource::Fixed(tasks) => tasks.first().map_or(0, |t| t.query.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskSource::Sine(_) => 1,
            TaskSource::Synthetic(f) => f.dim,
            TaskSource::Omniglot { store, .. } => store.image_side * store.image_side,
            TaskSource::Fixed(tasks) => tasks.first().map_or(0, |t| t.support.inputs().cols()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TaskSource::Sine(_) => 1,
            TaskSource::Synthetic(f) => f.n_way,
            TaskSource::Omniglot { shape, .. } => shape.n_way,
            TaskSource::Fixed(tasks) => tasks.first().map_or(0, |t| t.support.targets().cols()),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            TaskSource::Sine(_) => LossKind::MeanSquaredError,
            TaskSource::Synthetic(_) | TaskSource::Omniglot { .. } => LossKind::CrossEntropy,
            TaskSource::Fixed(tasks) => tasks
                .first()
                .map_or(LossKind::MeanSquaredError, |t| t.support.loss_kind()),
        }
    }

    pub fn is_classification(&self) -> bool {
        self.loss_kind() == LossKind::CrossEntropy
    }

    /// Network whose input and output widths fit this source.
    pub fn network(&self, hidden: &[usize], activation: HiddenActivation) -> Result<MlpSpec> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(self.input_dim());
        sizes.extend_from_slice(hidden);
        sizes.push(self.output_dim());
        let output = if self.is_classification() {
            OutputActivation::Softmax
        } else {
            OutputActivation::Identity
        };
        MlpSpec::new(sizes, activation, output)
    }
}

fn few_shot_instance(task: FewShotTask) -> TaskInstance {
    TaskInstance {
        descriptor: TaskDescriptor::Classes(task.classes),
        support: task.support,
        query: task.query,
    }
}
