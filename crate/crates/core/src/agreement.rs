//! Gradient-agreement task weights.
//!
//! Given one update vector `g_i = theta - theta_i` per task, the weight of
//! task `i` is
//!
//! ```text
//!        s_i                      s_i = sum_j <g_i, g_j> = <g_i, sum_j g_j>
//! w_i = ---------------- ,
//!       sum_k |s_k|
//! ```
//!
//! so `w` is proportional to each task's inner product with the batch mean
//! update and has unit L1 norm. Tasks pointing against the consensus get a
//! negative weight.
//!
//! The weights are the stationary point of a first-order (Taylor) model of the
//! weighted bilevel objective with an L2 penalty on `w`; the penalty strength,
//! the proximal step size and the Lagrange scale all cancel under the L1
//! normalization, so none of them is a runtime parameter here.
//!
//! When `sum_k |s_k|` vanishes (for instance two opposite updates) the formula
//! is undefined and the weights fall back to `1/N`, which is plain averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ParamVector;

/// Denominators at or below this count as degenerate.
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementWeights {
    pub weights: Vec<f64>,
    /// True when the fallback `1/N` weights were used.
    pub degenerate: bool,
    /// `sum_k |s_k|`; zero for plain uniform weights.
    pub denominator: f64,
}

impl AgreementWeights {
    /// Plain averaging weights `1/N`.
    pub fn uniform(n: usize) -> Self {
        AgreementWeights {
            weights: vec![1.0 / n as f64; n],
            degenerate: false,
            denominator: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

fn check_gradients(gradients: &[ParamVector]) -> Result<usize> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::InsufficientData("no task update vectors".into()))?;
    for g in gradients {
        first.check_len(g, "task update vectors")?;
    }
    Ok(first.len())
}

/// `s_i = sum_j <g_i, g_j>`, computed as `<g_i, sum_j g_j>` in O(N d).
pub fn gram_row_sums(gradients: &[ParamVector]) -> Result<Vec<f64>> {
    let dim = check_gradients(gradients)?;
    let mut total = vec![0.0; dim];
    for g in gradients {
        for (t, v) in total.iter_mut().zip(g.iter()) {
            *t += v;
        }
    }
    let total = ParamVector::new(total)?;
    gradients.iter().map(|g| g.dot(&total)).collect()
}

pub fn agreement_weights(gradients: &[ParamVector], eps: f64) -> Result<AgreementWeights> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!(
            "degeneracy threshold must be > 0, got {eps}"
        )));
    }
    let sums = gram_row_sums(gradients)?;
    let denominator: f64 = sums.iter().map(|s| s.abs()).sum();
    if !denominator.is_finite() {
        return Err(Error::NonFinite {
            stage: "agreement denominator".into(),
        });
    }
    if denominator <= eps {
        let mut w = AgreementWeights::uniform(gradients.len());
        w.degenerate = true;
        w.denominator = denominator;
        return Ok(w);
    }
    Ok(AgreementWeights {
        weights: sums.iter().map(|s| s / denominator).collect(),
        degenerate: false,
        denominator,
    })
}

/// `1 - |cos(w, s)|`: zero exactly when the weights are proportional to the
/// Gram row sums, the stationarity condition the weights must satisfy.
pub fn stationarity_residual(gradients: &[ParamVector], weights: &AgreementWeights) -> Result<f64> {
    if weights.degenerate {
        return Err(Error::Degenerate(
            "weights came from the uniform fallback".into(),
        ));
    }
    let sums = gram_row_sums(gradients)?;
    if sums.len() != weights.len() {
        return Err(Error::shape("weights", sums.len(), weights.len()));
    }
    let w = &weights.weights;
    let ws: f64 = w.iter().zip(&sums).map(|(a, b)| a * b).sum();
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sn = sums.iter().map(|v| v * v).sum::<f64>().sqrt();
    if wn == 0.0 || sn == 0.0 {
        return Err(Error::Degenerate("zero-norm weights or row sums".into()));
    }
    Ok((1.0 - (ws / (wn * sn)).abs()).max(0.0))
}
