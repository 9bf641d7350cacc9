//! Gradient-agreement meta-learning.
//!
//! Learns a network initialization that adapts to new tasks in a few SGD
//! steps. Each outer iteration adapts to a batch of tasks and combines the
//! per-task results with weights proportional to how well each task's update
//! agrees with the batch as a whole ([`agreement`]). Reptile and first-order
//! MAML baselines with uniform weights are included for comparison.
//!
//! Modules, bottom-up:
//!
//! * [`numcore`]: parameter vectors and a fully connected network with
//!   hand-written backpropagation.
//! * [`tasks`]: sine regression, synthetic Gaussian-cluster classification
//!   and Omniglot episodes.
//! * [`agreement`]: the task weighting rule.
//! * [`meta`]: inner-loop adaptation, outer updates, training, checkpoints.
//! * [`evaluate`]: meta-testing, curve export and variant comparison.
//!
//! Per-task work runs on rayon when the `parallel` feature is on (default).
//! Every random draw comes from a stream keyed by seed and task index, so
//! results are identical for any thread count.

pub mod agreement;
pub mod error;
pub mod evaluate;
pub mod meta;
pub mod numcore;
pub mod par;
pub mod rng;
pub mod tasks;

pub use agreement::{agreement_weights, gram_row_sums, stationarity_residual, AgreementWeights};
pub use error::{Error, Result};
pub use evaluate::{meta_test, EvalReport};
pub use meta::{train, MetaConfig, Variant};
pub use numcore::{Batch, MlpSpec, ParamVector};
pub use par::Schedule;
pub use tasks::{TaskFamily, TaskSource};
