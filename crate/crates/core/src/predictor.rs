//! Lifted linear rollouts and prediction-quality metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::ident::LinearPredictor;

/// Relative errors with a true-state norm below this are skipped.
pub const MIN_REFERENCE_NORM: f64 = 1e-9;

/// Propagates `z+ = A z + B u` from `z0`; returns the lifted states
/// `N x (T+1)`.
pub fn rollout_lifted(p: &LinearPredictor, z0: &DVector<f64>, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z0.len() != p.lifted_dim() {
        return Err(Error::DimensionMismatch {
            context: "rollout lifted state",
            expected: p.lifted_dim(),
            actual: z0.len(),
        });
    }
    if inputs.nrows() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "rollout inputs",
            expected: p.input_dim(),
            actual: inputs.nrows(),
        });
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rollout inputs"));
    }
    let horizon = inputs.ncols();
    let mut z = DMatrix::zeros(p.lifted_dim(), horizon + 1);
    z.set_column(0, z0);
    let mut cur = z0.clone();
    for t in 0..horizon {
        cur = &p.a * &cur + &p.b * inputs.column(t);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: t,
                norm: f64::INFINITY,
            });
        }
        z.set_column(t + 1, &cur);
    }
    Ok(z)
}

/// Predicted states `x_t = C z_t` with `z_0 = phi(x0)`.
pub fn rollout(p: &LinearPredictor, x0: &[f64], inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let z0 = DVector::from_vec(p.dictionary.lift(x0)?);
    let z = rollout_lifted(p, &z0, inputs)?;
    Ok(&p.c * z)
}

#[derive(Debug, Clone)]
pub struct PredictionRun {
    pub predicted: DMatrix<f64>,
    pub truth: DMatrix<f64>,
    /// `||x_hat_t - x_t|| / ||x_t||` for `t < T`; `None` where `||x_t||` is
    /// below [`MIN_REFERENCE_NORM`].
    pub per_step_rel_error: Vec<Option<f64>>,
}

impl PredictionRun {
    pub fn new(predicted: DMatrix<f64>, truth: DMatrix<f64>) -> Result<Self> {
        if predicted.shape() != truth.shape() {
            return Err(Error::DimensionMismatch {
                context: "prediction run",
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        if truth.ncols() < 2 {
            return Err(Error::InvalidArgument("prediction run needs T >= 1".into()));
        }
        let per_step_rel_error = (0..truth.ncols() - 1)
            .map(|t| {
                let denom = truth.column(t).norm();
                (denom >= MIN_REFERENCE_NORM).then(|| (predicted.column(t) - truth.column(t)).norm() / denom)
            })
            .collect();
        Ok(Self {
            predicted,
            truth,
            per_step_rel_error,
        })
    }

    /// Writes `t,true_0..,pred_0..,rel_error` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let n = self.truth.nrows();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("true_{i}")));
        header.extend((0..n).map(|i| format!("pred_{i}")));
        header.push("rel_error".into());
        writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for t in 0..self.truth.ncols() {
            let mut row = vec![t.to_string()];
            row.extend(self.truth.column(t).iter().map(|v| v.to_string()));
            row.extend(self.predicted.column(t).iter().map(|v| v.to_string()));
            row.push(
                self.per_step_rel_error
                    .get(t)
                    .copied()
                    .flatten()
                    .map_or(String::new(), |e| e.to_string()),
            );
            writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionError {
    pub mean: f64,
    pub skipped: usize,
}

/// Time-averaged relative error over the non-skipped indices.
pub fn prediction_error(run: &PredictionRun) -> Result<PredictionError> {
    let kept: Vec<f64> = run.per_step_rel_error.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::AllIndicesSkipped);
    }
    Ok(PredictionError {
        mean: kept.iter().sum::<f64>() / kept.len() as f64,
        skipped: run.per_step_rel_error.len() - kept.len(),
    })
}

/// Rolls the predictor along `tr`'s inputs from its initial state.
pub fn predict_trajectory(p: &LinearPredictor, tr: &Trajectory) -> Result<PredictionRun> {
    let x0: Vec<f64> = tr.states.column(0).iter().copied().collect();
    let predicted = rollout(p, &x0, &tr.inputs)?;
    PredictionRun::new(predicted, tr.states.clone())
}
