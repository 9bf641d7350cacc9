use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat parameter (or gradient, or displacement) vector.
///
/// Every public constructor and arithmetic method rejects non-finite results,
/// so a `ParamVector` that exists is always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "ParamVector::new")?;
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    /// Callers must have checked finiteness already.
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other, "dot")?;
        let d = dot(&self.0, &other.0);
        if !d.is_finite() {
            return Err(Error::NonFinite {
                stage: "dot product".into(),
            });
        }
        Ok(d)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// `self - other`
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self + other`
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// `self + scale * other`
    pub fn add_scaled(&self, other: &ParamVector, scale: f64) -> Result<ParamVector> {
        self.zip_with(other, "add_scaled", |a, b| a + scale * b)
    }

    pub fn scaled(&self, scale: f64) -> Result<ParamVector> {
        let out: Vec<f64> = self.0.iter().map(|v| v * scale).collect();
        ensure_finite(&out, "scaled")?;
        Ok(ParamVector(out))
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other, "max_abs_diff")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn zip_with(
        &self,
        other: &ParamVector,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        self.check_len(other, context)?;
        let out: Vec<f64> = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ensure_finite(&out, context)?;
        Ok(ParamVector(out))
    }

    pub(crate) fn check_len(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(context, self.len(), other.len()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn ensure_finite(values: &[f64], stage: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            stage: stage.to_string(),
        })
    }
}

/// One plain gradient-descent step: `params - rate * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, rate: f64) -> Result<ParamVector> {
    if !rate.is_finite() {
        return Err(Error::Config(format!(
            "sgd rate must be finite, got {rate}"
        )));
    }
    params.add_scaled(grad, -rate)
}
