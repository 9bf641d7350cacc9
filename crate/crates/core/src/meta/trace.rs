use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub weights: Vec<f64>,
    pub denominator: f64,
    pub degenerate: bool,
    pub mean_inner_loss: f64,
    /// L2 norm of the parameters after the update.
    pub param_norm: f64,
}

/// One record per outer iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
}

#[derive(Serialize)]
struct CsvRow {
    iteration: usize,
    weight_min: f64,
    weight_max: f64,
    weight_mean: f64,
    negative_weights: usize,
    degenerate: u8,
    degenerate_total: usize,
    denominator: f64,
    mean_inner_loss: f64,
    param_norm: f64,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn degenerate_count(&self) -> usize {
        self.records.iter().filter(|r| r.degenerate).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut degenerate_total = 0;
        for r in &self.records {
            degenerate_total += usize::from(r.degenerate);
            let n = r.weights.len().max(1) as f64;
            w.serialize(CsvRow {
                iteration: r.iteration,
                weight_min: r.weights.iter().copied().fold(f64::INFINITY, f64::min),
                weight_max: r.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                weight_mean: r.weights.iter().sum::<f64>() / n,
                negative_weights: r.weights.iter().filter(|&&x| x < 0.0).count(),
                degenerate: u8::from(r.degenerate),
                degenerate_total,
                denominator: r.denominator,
                mean_inner_loss: r.mean_inner_loss,
                param_norm: r.param_norm,
            })?;
        }
        w.flush().map_err(|e| Error::io("trace csv", e))?;
        Ok(())
    }
}
