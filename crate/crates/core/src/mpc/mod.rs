//! Condensed linear MPC on a lifted predictor, evaluated in closed loop
//! against the true plant.
//!
//! Over a horizon `T_h` the controller minimizes
//!
//! ```text
//! sum_{t=0}^{T_h} (C z_t - r_t)' Q (C z_t - r_t) + sum_{t=0}^{T_h-1} u_t' R u_t
//! z_{t+1} = A z_t + B u_t,   z_0 = lift(x)
//! ```
//!
//! with box bounds on `u_t` and L1-softened bounds on `C z_t`, `t >= 1`.
//! Eliminating the lifted states gives `y = Gamma z_0 + Theta u` for the
//! stacked outputs `y = (C z_1, .., C z_{T_h})`, where block `(t, k)` of
//! `Theta` is `C A^(t-k) B` for `k < t` (1-based `t`).

pub mod qp;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{PlantModel, BLOW_UP_NORM};
use crate::error::{Error, Result};
use crate::ident::LinearPredictor;
use crate::quantization::{dither_quantize_vector, DitherStream, QuantizerBank};

pub use qp::{solve_qp, solve_qp_with, HardConstraints, KktResidual, QpOptions, QpProblem, QpSolution, SoftConstraints};

/// Soft-constraint weight relative to `max(Q)`.
pub const SOFT_WEIGHT_FACTOR: f64 = 1e6;

/// Time-indexed reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reference {
    Constant { value: Vec<f64> },
    /// Cycles through `levels`, holding each for `period_steps` steps.
    PiecewiseConstant { levels: Vec<Vec<f64>>, period_steps: usize },
}

impl Reference {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant { value } => value.len(),
            Self::PiecewiseConstant { levels, .. } => levels.first().map_or(0, Vec::len),
        }
    }

    pub fn at(&self, t: usize) -> &[f64] {
        match self {
            Self::Constant { value } => value,
            Self::PiecewiseConstant { levels, period_steps } => &levels[(t / period_steps) % levels.len()],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Self::PiecewiseConstant { levels, period_steps } = self {
            if levels.is_empty() || *period_steps == 0 {
                return Err(Error::InvalidArgument(
                    "piecewise reference needs levels and a positive period".into(),
                ));
            }
            if levels.iter().any(|l| l.len() != n) {
                return Err(Error::DimensionMismatch {
                    context: "reference level",
                    expected: n,
                    actual: levels.iter().map(Vec::len).find(|&l| l != n).unwrap_or(0),
                });
            }
        }
        if self.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "reference",
                expected: n,
                actual: self.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub input_bounds: Vec<[f64; 2]>,
    /// Per output coordinate; `None` leaves it unconstrained.
    pub state_bounds: Vec<Option<[f64; 2]>>,
    pub reference: Reference,
    /// Added to the diagonal of the condensed Hessian.
    pub hessian_floor: f64,
}

impl MpcConfig {
    /// Scenario using the plant's input and state bounds.
    pub fn for_plant(plant: &PlantModel, q: DMatrix<f64>, r: DMatrix<f64>, horizon: usize, reference: Reference) -> Self {
        Self {
            q,
            r,
            horizon,
            input_bounds: plant.input_bounds.clone(),
            state_bounds: plant.state_bounds.clone(),
            reference,
            hessian_floor: 0.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.input_dim());
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("MPC horizon must be at least 1".into()));
        }
        for (name, w) in [("Q", &self.q), ("R", &self.r)] {
            if !w.is_square() {
                return Err(Error::InvalidArgument(format!("{name} must be square")));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("MPC weight"));
            }
            let scale = w.amax().max(1.0);
            if (w - w.transpose()).amax() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
            if w.nrows() > 0 && w.clone().symmetric_eigenvalues().min() < -1e-10 * scale {
                return Err(Error::InvalidArgument(format!("{name} must be positive semidefinite")));
            }
        }
        if self.input_bounds.len() != m {
            return Err(Error::DimensionMismatch {
                context: "MPC input bounds",
                expected: m,
                actual: self.input_bounds.len(),
            });
        }
        if !self.state_bounds.is_empty() && self.state_bounds.len() != n {
            return Err(Error::DimensionMismatch {
                context: "MPC state bounds",
                expected: n,
                actual: self.state_bounds.len(),
            });
        }
        let all = self.input_bounds.iter().chain(self.state_bounds.iter().flatten());
        for [lo, hi] in all {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!("empty bound interval [{lo}, {hi}]")));
            }
        }
        if !(self.hessian_floor >= 0.0) {
            return Err(Error::InvalidArgument("Hessian floor must be nonnegative".into()));
        }
        self.reference.validate(n)
    }

    pub fn soft_weight(&self) -> f64 {
        SOFT_WEIGHT_FACTOR * self.q.amax().max(f64::MIN_POSITIVE)
    }

    /// Stage cost `(x - r)' Q (x - r) + u' R u`.
    pub fn stage_cost(&self, x: &[f64], reference: &[f64], u: Option<&[f64]>) -> f64 {
        let e = DVector::from_iterator(x.len(), x.iter().zip(reference).map(|(a, b)| a - b));
        let mut cost = e.dot(&(&self.q * &e));
        if let Some(u) = u {
            let u = DVector::from_column_slice(u);
            cost += u.dot(&(&self.r * &u));
        }
        cost
    }
}

/// Time-invariant part of the condensed problem for a fixed predictor.
#[derive(Debug, Clone)]
pub struct Condenser {
    /// `(n T_h) x (m T_h)` input-to-output map.
    pub theta: DMatrix<f64>,
    /// `(n T_h) x N` free response `C A^t`, `t = 1..T_h`.
    pub gamma: DMatrix<f64>,
    /// `2 (Theta' Qbar Theta + Rbar) + floor I`.
    pub hessian: DMatrix<f64>,
    /// `2 Theta' Qbar`.
    pub gradient_map: DMatrix<f64>,
    c: DMatrix<f64>,
    soft_matrix: Option<DMatrix<f64>>,
    soft_rows: Vec<(usize, usize)>,
    cfg: MpcConfig,
}

impl Condenser {
    pub fn new(p: &LinearPredictor, cfg: &MpcConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, m, th) = (p.state_dim(), p.input_dim(), cfg.horizon);
        if cfg.state_dim() != n {
            return Err(Error::DimensionMismatch {
                context: "MPC Q vs predictor output",
                expected: n,
                actual: cfg.state_dim(),
            });
        }
        if cfg.input_dim() != m {
            return Err(Error::DimensionMismatch {
                context: "MPC R vs predictor input",
                expected: m,
                actual: cfg.input_dim(),
            });
        }
        // markov[j] = C A^j B, powers[t] = C A^(t+1)
        let mut markov = Vec::with_capacity(th);
        let mut ab = p.b.clone();
        for _ in 0..th {
            markov.push(&p.c * &ab);
            ab = &p.a * ab;
        }
        let mut gamma = DMatrix::zeros(n * th, p.lifted_dim());
        let mut ca = &p.c * &p.a;
        for t in 0..th {
            gamma.rows_mut(t * n, n).copy_from(&ca);
            ca = &ca * &p.a;
        }
        let mut theta = DMatrix::zeros(n * th, m * th);
        for t in 0..th {
            for k in 0..=t {
                theta.view_mut((t * n, k * m), (n, m)).copy_from(&markov[t - k]);
            }
        }
        let mut q_theta = theta.clone();
        for t in 0..th {
            let block = &cfg.q * theta.rows(t * n, n);
            q_theta.rows_mut(t * n, n).copy_from(&block);
        }
        let gradient_map = q_theta.transpose() * 2.0;
        let mut hessian = theta.tr_mul(&q_theta);
        for k in 0..th {
            let mut blk = hessian.view_mut((k * m, k * m), (m, m));
            blk += &cfg.r;
        }
        hessian *= 2.0;
        hessian = (&hessian + hessian.transpose()) * 0.5;
        for i in 0..m * th {
            hessian[(i, i)] += cfg.hessian_floor;
        }
        let soft_rows: Vec<(usize, usize)> = (0..th)
            .flat_map(|t| {
                cfg.state_bounds
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.is_some())
                    .map(move |(i, _)| (t, i))
            })
            .collect();
        let soft_matrix = (!soft_rows.is_empty()).then(|| {
            DMatrix::from_fn(soft_rows.len(), m * th, |r, c| {
                let (t, i) = soft_rows[r];
                theta[(t * n + i, c)]
            })
        });
        Ok(Self {
            theta,
            gamma,
            hessian,
            gradient_map,
            c: p.c.clone(),
            soft_matrix,
            soft_rows,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// Stacked reference `r_{step+1}, .., r_{step+T_h}` (full preview).
    pub fn reference_stack(&self, step: usize) -> DVector<f64> {
        let n = self.cfg.state_dim();
        let mut r = DVector::zeros(n * self.cfg.horizon);
        for t in 0..self.cfg.horizon {
            r.rows_mut(t * n, n).copy_from_slice(self.cfg.reference.at(step + t + 1));
        }
        r
    }

    /// QP in the stacked inputs for lifted state `z0` at time `step`.
    pub fn problem(&self, z0: &DVector<f64>, step: usize) -> Result<QpProblem> {
        if z0.len() != self.gamma.ncols() {
            return Err(Error::DimensionMismatch {
                context: "condense lifted state",
                expected: self.gamma.ncols(),
                actual: z0.len(),
            });
        }
        let cfg = &self.cfg;
        let (m, th) = (cfg.input_dim(), cfg.horizon);
        let free = &self.gamma * z0;
        let err = &free - self.reference_stack(step);
        let linear = &self.gradient_map * &err;
        let y0 = &self.c * z0;
        let constant = err.dot(&self.qbar_mul(&err)) + cfg.stage_cost(y0.as_slice(), cfg.reference.at(step), None);
        let lower = DVector::from_fn(m * th, |i, _| cfg.input_bounds[i % m][0]);
        let upper = DVector::from_fn(m * th, |i, _| cfg.input_bounds[i % m][1]);
        let soft = self.soft_matrix.as_ref().map(|s| {
            let n = cfg.state_dim();
            let offs = |r: usize| free[self.soft_rows[r].0 * n + self.soft_rows[r].1];
            let bound = |r: usize, side: usize| cfg.state_bounds[self.soft_rows[r].1].unwrap()[side];
            SoftConstraints {
                matrix: s.clone(),
                lower: DVector::from_fn(s.nrows(), |r, _| bound(r, 0) - offs(r)),
                upper: DVector::from_fn(s.nrows(), |r, _| bound(r, 1) - offs(r)),
                weight: cfg.soft_weight(),
            }
        });
        Ok(QpProblem {
            hessian: self.hessian.clone(),
            linear,
            constant,
            lower,
            upper,
            hard: None,
            soft,
        })
    }

    fn qbar_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.cfg.state_dim();
        let mut out = DVector::zeros(v.len());
        for t in 0..self.cfg.horizon {
            out.rows_mut(t * n, n).copy_from(&(&self.cfg.q * v.rows(t * n, n)));
        }
        out
    }

    /// Predicted cost of an input sequence from `z0` at `step`, evaluated by
    /// explicit rollout.
    pub fn explicit_cost(&self, p: &LinearPredictor, z0: &DVector<f64>, u: &DVector<f64>, step: usize) -> f64 {
        let cfg = &self.cfg;
        let m = cfg.input_dim();
        let mut z = z0.clone();
        let mut cost = 0.0;
        for t in 0..=cfg.horizon {
            let y = &p.c * &z;
            let ut = (t < cfg.horizon).then(|| u.rows(t * m, m).into_owned());
            cost += cfg.stage_cost(y.as_slice(), cfg.reference.at(step + t), ut.as_ref().map(|v| v.as_slice()));
            if let Some(ut) = ut {
                z = &p.a * &z + &p.b * ut;
            }
        }
        cost
    }
}

/// Builds the condensed QP for a single state.
pub fn condense(p: &LinearPredictor, cfg: &MpcConfig, z0: &DVector<f64>) -> Result<QpProblem> {
    Condenser::new(p, cfg)?.problem(z0, 0)
}

/// Dithered measurement quantization applied before lifting.
#[derive(Debug, Clone)]
pub struct MeasurementQuantizer {
    pub bank: QuantizerBank,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// `n x (S+1)`.
    pub states: DMatrix<f64>,
    /// `m x S`, as applied.
    pub inputs: DMatrix<f64>,
    /// `n x (S+1)`.
    pub references: DMatrix<f64>,
    /// Length `S+1`; the last entry has no input term.
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
    /// Optimal predicted cost-to-go at each step.
    pub predicted_costs: Vec<f64>,
    /// Steps whose true state left the state bounds.
    pub violation_steps: usize,
    pub max_violation: f64,
    pub max_kkt_residual: f64,
    pub max_qp_iterations: usize,
}

impl ClosedLoopRun {
    /// Writes `t,x_0..,u_0..,ref_0..,stage_cost` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let (n, m) = (self.states.nrows(), self.inputs.nrows());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        header.extend((0..n).map(|i| format!("ref_{i}")));
        header.push("stage_cost".into());
        writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for t in 0..self.states.ncols() {
            let mut row = vec![t.to_string()];
            row.extend(self.states.column(t).iter().map(|v| v.to_string()));
            if t < self.inputs.ncols() {
                row.extend(self.inputs.column(t).iter().map(|v| v.to_string()));
            } else {
                row.extend(std::iter::repeat_n(String::new(), m));
            }
            row.extend(self.references.column(t).iter().map(|v| v.to_string()));
            row.push(self.stage_costs[t].to_string());
            writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Receding-horizon loop: measure, lift, solve, apply the first input to
/// the true plant, repeat for `steps` steps.
pub fn run_closed_loop(
    plant: &PlantModel,
    p: &LinearPredictor,
    cfg: &MpcConfig,
    x0: &[f64],
    steps: usize,
    measurement: Option<&MeasurementQuantizer>,
) -> Result<ClosedLoopRun> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    if x0.len() != n || p.state_dim() != n || p.input_dim() != m {
        return Err(Error::DimensionMismatch {
            context: "closed loop plant vs predictor",
            expected: n,
            actual: if x0.len() != n { x0.len() } else { p.state_dim() },
        });
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("closed loop needs at least one step".into()));
    }
    let condenser = Condenser::new(p, cfg)?;
    let sim = plant.simulator()?;
    let mut stream = measurement.map(|mq| DitherStream::new(mq.seed));
    let mut states = DMatrix::zeros(n, steps + 1);
    let mut inputs = DMatrix::zeros(m, steps);
    let mut references = DMatrix::zeros(n, steps + 1);
    let mut stage_costs = Vec::with_capacity(steps + 1);
    let mut predicted_costs = Vec::with_capacity(steps);
    let mut x = x0.to_vec();
    let (mut violation_steps, mut max_violation) = (0, 0.0f64);
    let (mut max_kkt, mut max_iter) = (0.0f64, 0);
    let mut track_violation = |x: &[f64]| {
        let worst = cfg
            .state_bounds
            .iter()
            .zip(x)
            .filter_map(|(b, v)| b.map(|[lo, hi]| (v - hi).max(lo - v).max(0.0)))
            .fold(0.0, f64::max);
        if worst > 0.0 {
            violation_steps += 1;
            max_violation = max_violation.max(worst);
        }
    };
    for k in 0..steps {
        states.set_column(k, &DVector::from_column_slice(&x));
        references.set_column(k, &DVector::from_column_slice(cfg.reference.at(k)));
        track_violation(&x);
        let measured = match (measurement, stream.as_mut()) {
            (Some(mq), Some(s)) => dither_quantize_vector(&mq.bank, &x, s)?.0,
            _ => x.clone(),
        };
        let z0 = DVector::from_vec(p.dictionary.lift(&measured)?);
        let qp = condenser.problem(&z0, k)?;
        let sol = solve_qp(&qp)?;
        max_kkt = max_kkt.max(sol.kkt.max());
        max_iter = max_iter.max(sol.iterations);
        predicted_costs.push(sol.objective);
        let u: Vec<f64> = (0..m)
            .map(|i| sol.u[i].clamp(cfg.input_bounds[i][0], cfg.input_bounds[i][1]))
            .collect();
        inputs.set_column(k, &DVector::from_column_slice(&u));
        stage_costs.push(cfg.stage_cost(&x, cfg.reference.at(k), Some(&u)));
        x = sim.step(&x, &u).map_err(|e| match e {
            Error::Divergence { norm, .. } => Error::Divergence { step: k, norm },
            Error::Unstable { reason, .. } => Error::Unstable { step: k, reason },
            other => other,
        })?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > BLOW_UP_NORM {
            return Err(Error::Divergence { step: k + 1, norm });
        }
    }
    states.set_column(steps, &DVector::from_column_slice(&x));
    references.set_column(steps, &DVector::from_column_slice(cfg.reference.at(steps)));
    track_violation(&x);
    stage_costs.push(cfg.stage_cost(&x, cfg.reference.at(steps), None));
    Ok(ClosedLoopRun {
        states,
        inputs,
        references,
        total_cost: stage_costs.iter().sum(),
        stage_costs,
        predicted_costs,
        violation_steps,
        max_violation,
        max_kkt_residual: max_kkt,
        max_qp_iterations: max_iter,
    })
}

/// Cost of the open-loop run with `u = 0` on the same scenario.
pub fn zero_input_cost(plant: &PlantModel, cfg: &MpcConfig, x0: &[f64], steps: usize) -> Result<f64> {
    let m = plant.input_dim();
    let traj = crate::dynamics::simulate(plant, x0, &DMatrix::zeros(m, steps))?;
    let zero = vec![0.0; m];
    Ok((0..=steps)
        .map(|t| {
            let x: Vec<f64> = traj.states.column(t).iter().copied().collect();
            cfg.stage_cost(&x, cfg.reference.at(t), (t < steps).then_some(zero.as_slice()))
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use crate::ident::{state_selector, LiftedModel};

    fn scalar_predictor(a: f64, b: f64) -> LinearPredictor {
        LinearPredictor::new(
            LiftedModel {
                a: DMatrix::from_element(1, 1, a),
                b: DMatrix::from_element(1, 1, b),
            },
            state_selector(1, 1),
            Dictionary::identity(1),
        )
        .unwrap()
    }

    fn scalar_cfg(r: f64, horizon: usize) -> MpcConfig {
        MpcConfig {
            q: DMatrix::from_element(1, 1, 1.0),
            r: DMatrix::from_element(1, 1, r),
            horizon,
            input_bounds: vec![[-10.0, 10.0]],
            state_bounds: vec![None],
            reference: Reference::Constant { value: vec![0.0] },
            hessian_floor: 0.0,
        }
    }

    #[test]
    fn one_step_hand_solution() {
        let p = scalar_predictor(1.0, 1.0);
        let qp = condense(&p, &scalar_cfg(0.0, 1), &DVector::from_element(1, 1.0)).unwrap();
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.u[0] + 1.0).abs() < 1e-8);
        // remaining cost is the t = 0 term
        assert!((sol.objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn heavy_input_weight_drives_inputs_to_zero() {
        let p = scalar_predictor(0.9, 1.0);
        let qp = condense(&p, &scalar_cfg(1e8, 5), &DVector::from_element(1, 1.0)).unwrap();
        let sol = solve_qp(&qp).unwrap();
        assert!(sol.u.amax() < 1e-7);
    }

    #[test]
    fn objective_matches_explicit_rollout() {
        let p = scalar_predictor(0.95, 0.3);
        let mut cfg = scalar_cfg(0.1, 6);
        cfg.reference = Reference::PiecewiseConstant {
            levels: vec![vec![0.5], vec![-0.5]],
            period_steps: 3,
        };
        let c = Condenser::new(&p, &cfg).unwrap();
        let z0 = DVector::from_element(1, 0.2);
        let qp = c.problem(&z0, 2).unwrap();
        let u = DVector::from_fn(6, |i, _| (i as f64 * 0.7).sin());
        let direct = c.explicit_cost(&p, &z0, &u, 2);
        assert!((qp.quadratic_value(&u) - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn reference_cycles() {
        let r = Reference::PiecewiseConstant {
            levels: vec![vec![1.0], vec![2.0]],
            period_steps: 2,
        };
        let seq: Vec<f64> = (0..6).map(|t| r.at(t)[0]).collect();
        assert_eq!(seq, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = scalar_cfg(1.0, 0);
        assert!(cfg.validate().is_err());
        cfg.horizon = 2;
        cfg.r = DMatrix::from_element(1, 1, -1.0);
        assert!(cfg.validate().is_err());
        cfg.r = DMatrix::from_element(1, 1, 1.0);
        cfg.input_bounds = vec![[1.0, -1.0]];
        assert!(cfg.validate().is_err());
    }
}
