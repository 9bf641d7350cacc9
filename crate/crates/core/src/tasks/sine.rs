use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Batch, LossKind, Matrix};

pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const INPUT_RANGE: (f64, f64) = (-5.0, 5.0);

/// One regression problem `x -> amplitude * sin(x + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SineTask {
    pub fn new(amplitude: f64, phase: f64) -> Result<Self> {
        if !(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1).contains(&amplitude) {
            return Err(Error::Config(format!(
                "amplitude {amplitude} outside [{}, {}]",
                AMPLITUDE_RANGE.0, AMPLITUDE_RANGE.1
            )));
        }
        if !(0.0..TAU).contains(&phase) {
            return Err(Error::Config(format!("phase {phase} outside [0, 2pi)")));
        }
        Ok(SineTask { amplitude, phase })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }
}

pub fn sample_sine_task<R: Rng + ?Sized>(rng: &mut R) -> SineTask {
    SineTask {
        amplitude: rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
        phase: rng.random_range(0.0..TAU),
    }
}

/// `n_points` inputs drawn uniformly from the input range, with exact targets.
pub fn sine_batch<R: Rng + ?Sized>(task: &SineTask, n_points: usize, rng: &mut R) -> Result<Batch> {
    if n_points == 0 {
        return Err(Error::InsufficientData(
            "sine batch needs at least one point".into(),
        ));
    }
    let xs: Vec<f64> = (0..n_points)
        .map(|_| rng.random_range(INPUT_RANGE.0..=INPUT_RANGE.1))
        .collect();
    sine_batch_at(task, xs)
}

pub fn sine_batch_at(task: &SineTask, xs: Vec<f64>) -> Result<Batch> {
    let ys = xs.iter().map(|&x| task.eval(x)).collect();
    Batch::new(
        Matrix::column(xs),
        Matrix::column(ys),
        LossKind::MeanSquaredError,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn reproducible_and_in_range() {
        let a = sample_sine_task(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, sample_sine_task(&mut ChaCha8Rng::seed_from_u64(3)));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let t = sample_sine_task(&mut rng);
            assert!((0.1..=5.0).contains(&t.amplitude));
            assert!((0.0..TAU).contains(&t.phase));
        }
    }

    #[test]
    fn amplitude_mean_matches_uniform() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let amps: Vec<f64> = (0..n)
            .map(|_| sample_sine_task(&mut rng).amplitude)
            .collect();
        let mean = amps.iter().sum::<f64>() / n as f64;
        // sd of U(0.1, 5.0) is 4.9 / sqrt(12)
        let se = 4.9 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 2.55).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn known_targets() {
        let b = sine_batch_at(&SineTask::new(1.0, 0.0).unwrap(), vec![0.0]).unwrap();
        assert_eq!(b.targets().get(0, 0), 0.0);
        let b = sine_batch_at(&SineTask::new(2.0, FRAC_PI_2).unwrap(), vec![0.0]).unwrap();
        assert_eq!(b.targets().get(0, 0), 2.0);
    }

    #[test]
    fn generated_targets_bounded_by_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let t = sample_sine_task(&mut rng);
            let b = sine_batch(&t, 10, &mut rng).unwrap();
            for r in 0..b.len() {
                let x = b.inputs().get(r, 0);
                assert!((-5.0..=5.0).contains(&x));
                assert!(b.targets().get(r, 0).abs() <= t.amplitude);
            }
        }
        assert!(sine_batch(&SineTask::new(1.0, 0.0).unwrap(), 0, &mut rng).is_err());
    }

    #[test]
    fn constructor_checks_ranges() {
        assert!(SineTask::new(0.05, 0.0).is_err());
        assert!(SineTask::new(1.0, TAU).is_err());
        assert!(SineTask::new(5.0, 0.0).is_ok());
    }
}
