//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use metagree::numcore::{
    init_params, loss, loss_and_gradient, Batch, HiddenActivation, LossKind, Matrix, MlpSpec,
    OutputActivation,
};
use metagree::{ParamVector, Result};
use rand::Rng;

pub fn vectors(rows: &[Vec<f64>]) -> Vec<ParamVector> {
    rows.iter()
        .map(|r| ParamVector::new(r.clone()).unwrap())
        .collect()
}

/// `n` rows of `dim` entries drawn from U[-1, 1].
pub fn random_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect()
}

/// Weights from the explicit pairwise Gram matrix, O(N^2 d).
pub fn brute_force_weights(rows: &[Vec<f64>], eps: f64) -> (Vec<f64>, bool) {
    let n = rows.len();
    let mut s = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            s[i] += rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
    }
    let denom: f64 = s.iter().map(|v| v.abs()).sum();
    if denom <= eps {
        (vec![1.0 / n as f64; n], true)
    } else {
        (s.iter().map(|v| v / denom).collect(), false)
    }
}

/// Random MLP with 0-2 hidden tanh layers, either regression or softmax
/// classification, plus a batch to differentiate on.
pub fn random_problem<R: Rng>(rng: &mut R) -> (MlpSpec, ParamVector, Batch) {
    let input = rng.random_range(1..=3);
    let output = rng.random_range(1..=3);
    let classify = output > 1 && rng.random_bool(0.5);
    let mut sizes = vec![input];
    for _ in 0..rng.random_range(0..=2) {
        sizes.push(rng.random_range(1..=5));
    }
    sizes.push(output);
    let spec = MlpSpec::new(
        sizes,
        HiddenActivation::Tanh,
        if classify {
            OutputActivation::Softmax
        } else {
            OutputActivation::Identity
        },
    )
    .unwrap();
    let theta = init_params(&spec, rng.random());
    // move away from the zero biases so every parameter matters
    let theta = ParamVector::new(
        theta
            .iter()
            .map(|v| v + rng.random_range(-0.5..=0.5))
            .collect(),
    )
    .unwrap();
    let n = rng.random_range(1..=6);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..input).map(|_| rng.random_range(-2.0..=2.0)).collect())
        .collect();
    let (targets, kind): (Vec<Vec<f64>>, _) = if classify {
        let t = (0..n)
            .map(|_| {
                let mut row = vec![0.0; output];
                row[rng.random_range(0..output)] = 1.0;
                row
            })
            .collect();
        (t, LossKind::CrossEntropy)
    } else {
        let t = (0..n)
            .map(|_| (0..output).map(|_| rng.random_range(-2.0..=2.0)).collect())
            .collect();
        (t, LossKind::MeanSquaredError)
    };
    let batch = Batch::new(
        Matrix::from_rows(&inputs).unwrap(),
        Matrix::from_rows(&targets).unwrap(),
        kind,
    )
    .unwrap();
    (spec, theta, batch)
}

/// `||fd - analytic|| / max(||fd||, ||analytic||)` with central differences.
pub fn gradient_relative_error(
    spec: &MlpSpec,
    theta: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<f64> {
    let (_, analytic) = loss_and_gradient(spec, theta, batch)?;
    let mut params = theta.as_slice().to_vec();
    let mut fd = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = loss(spec, &ParamVector::new(params.clone())?, batch)?;
        params[i] = orig - h;
        let down = loss(spec, &ParamVector::new(params.clone())?, batch)?;
        params[i] = orig;
        fd.push((up - down) / (2.0 * h));
    }
    let fd = ParamVector::new(fd)?;
    let scale = fd.norm().max(analytic.norm());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(fd.sub(&analytic)?.norm() / scale)
}
