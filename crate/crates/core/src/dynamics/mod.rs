//! Ground-truth plants and training data generation.

pub mod kdv;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng_from_seed};

pub use kdv::KdvSolver;

/// States whose norm exceeds this are treated as divergence.
pub const BLOW_UP_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorParams {
    pub la: f64,
    pub ra: f64,
    pub km: f64,
    pub j: f64,
    pub b: f64,
    pub tau_l: f64,
    pub ua: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        Self {
            la: 0.314,
            ra: 12.345,
            km: 0.253,
            j: 0.00441,
            b: 0.00732,
            tau_l: 1.47,
            ua: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PlantKind {
    /// `x1' = x2`, `x2' = 0.01 x2 - sin x1 + u`.
    Pendulum,
    /// `x1' = 2 x2`, `x2' = -0.8 x1 + 2 x2 - 10 x1^2 x2 + u`.
    Vdp,
    /// Bilinear field-controlled DC motor.
    Motor(MotorParams),
    /// Forced KdV on a periodic mesh with three Gaussian actuators.
    Kdv { mesh: usize },
    /// Discrete-time `x+ = A x + B u` (row-major `a`, `b`).
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub kind: PlantKind,
    pub dt: f64,
    /// Hard input bounds used by the controller.
    pub input_bounds: Vec<[f64; 2]>,
    /// Range of the random training inputs.
    pub training_input_bounds: Vec<[f64; 2]>,
    /// Optional per-coordinate state constraints (controller only).
    pub state_bounds: Vec<Option<[f64; 2]>>,
}

impl PlantModel {
    pub fn pendulum() -> Self {
        Self {
            kind: PlantKind::Pendulum,
            dt: 0.01,
            input_bounds: vec![[-4.0, 4.0]],
            training_input_bounds: vec![[-1.0, 1.0]],
            state_bounds: vec![Some([-0.6, 0.6]), None],
        }
    }

    pub fn vdp() -> Self {
        Self {
            kind: PlantKind::Vdp,
            dt: 0.01,
            input_bounds: vec![[-4.0, 4.0]],
            training_input_bounds: vec![[-1.0, 1.0]],
            state_bounds: vec![Some([-1.0, 1.0]), None],
        }
    }

    pub fn motor() -> Self {
        Self {
            kind: PlantKind::Motor(MotorParams::default()),
            dt: 0.01,
            input_bounds: vec![[-2.0, 2.0]],
            training_input_bounds: vec![[-1.0, 1.0]],
            state_bounds: vec![None, Some([-1.0, 1.0])],
        }
    }

    pub fn kdv(mesh: usize) -> Self {
        Self {
            kind: PlantKind::Kdv { mesh },
            dt: 0.01,
            input_bounds: vec![[-1.0, 1.0]; kdv::KDV_INPUTS],
            training_input_bounds: vec![[-1.0, 1.0]; kdv::KDV_INPUTS],
            state_bounds: vec![None; mesh],
        }
    }

    pub fn linear(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("A must be square and nonempty".into()));
        }
        if b.len() != n || b[0].is_empty() || b.iter().any(|r| r.len() != b[0].len()) {
            return Err(Error::InvalidArgument("B must have n rows of equal length".into()));
        }
        let m = b[0].len();
        Ok(Self {
            kind: PlantKind::Linear { a, b },
            dt: 1.0,
            input_bounds: vec![[-1.0, 1.0]; m],
            training_input_bounds: vec![[-1.0, 1.0]; m],
            state_bounds: vec![None; n],
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pendulum" => Ok(Self::pendulum()),
            "vdp" => Ok(Self::vdp()),
            "motor" => Ok(Self::motor()),
            "kdv" => Ok(Self::kdv(128)),
            other => Err(Error::Config(format!("unknown plant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PlantKind::Pendulum => "pendulum",
            PlantKind::Vdp => "vdp",
            PlantKind::Motor(_) => "motor",
            PlantKind::Kdv { .. } => "kdv",
            PlantKind::Linear { .. } => "linear",
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.kind {
            PlantKind::Pendulum | PlantKind::Vdp | PlantKind::Motor(_) => 2,
            PlantKind::Kdv { mesh } => *mesh,
            PlantKind::Linear { a, .. } => a.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            PlantKind::Pendulum | PlantKind::Vdp | PlantKind::Motor(_) => 1,
            PlantKind::Kdv { .. } => kdv::KDV_INPUTS,
            PlantKind::Linear { b, .. } => b[0].len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let (n, m) = (self.state_dim(), self.input_dim());
        if self.input_bounds.len() != m || self.training_input_bounds.len() != m {
            return Err(Error::Config(format!("expected {m} input bounds")));
        }
        if self.state_bounds.len() != n {
            return Err(Error::Config(format!("expected {n} state bound entries")));
        }
        let ok = |b: &[f64; 2]| b[0] < b[1];
        if !self.input_bounds.iter().chain(&self.training_input_bounds).all(ok)
            || !self.state_bounds.iter().flatten().all(ok)
        {
            return Err(Error::Config("bounds must be nonempty intervals".into()));
        }
        if let PlantKind::Motor(p) = &self.kind {
            let vals = [p.la, p.ra, p.km, p.j, p.b, p.tau_l, p.ua];
            if vals.iter().any(|v| !v.is_finite()) || p.la == 0.0 || p.j == 0.0 {
                return Err(Error::Config("incomplete motor parameters".into()));
            }
        }
        Ok(())
    }

    /// Continuous-time vector field for the ODE plants.
    pub fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        match &self.kind {
            PlantKind::Pendulum => {
                dx[0] = x[1];
                dx[1] = 0.01 * x[1] - x[0].sin() + u[0];
            }
            PlantKind::Vdp => {
                dx[0] = 2.0 * x[1];
                dx[1] = -0.8 * x[0] + 2.0 * x[1] - 10.0 * x[0] * x[0] * x[1] + u[0];
            }
            PlantKind::Motor(p) => {
                dx[0] = -(p.ra / p.la) * x[0] - (p.km / p.la) * x[1] * u[0] + p.ua / p.la;
                dx[1] = -(p.b / p.j) * x[1] + (p.km / p.j) * x[0] * u[0] - p.tau_l / p.j;
            }
            PlantKind::Kdv { .. } | PlantKind::Linear { .. } => {
                unreachable!("{} is not a continuous-time ODE plant", self.name())
            }
        }
    }

    /// Stateful one-step propagator for this plant.
    pub fn simulator(&self) -> Result<Simulator<'_>> {
        self.validate()?;
        let kdv = match &self.kind {
            PlantKind::Kdv { mesh } => Some(KdvSolver::new(*mesh, self.dt)?),
            _ => None,
        };
        Ok(Simulator { plant: self, kdv })
    }
}

/// Classical RK4 step with `u` held constant over `[t, t + dt]`.
pub fn rk4_step<F>(f: F, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f(&tmp, u, &mut k4);
    let out: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if [&k1, &k2, &k3, &k4, &out].iter().any(|v| v.iter().any(|a| !a.is_finite())) {
        return Err(Error::NonFinite("RK4 stage"));
    }
    Ok(out)
}

pub struct Simulator<'a> {
    plant: &'a PlantModel,
    kdv: Option<KdvSolver>,
}

impl Simulator<'_> {
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (n, m) = (self.plant.state_dim(), self.plant.input_dim());
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                context: "plant state",
                expected: n,
                actual: x.len(),
            });
        }
        if u.len() != m {
            return Err(Error::DimensionMismatch {
                context: "plant input",
                expected: m,
                actual: u.len(),
            });
        }
        match &self.plant.kind {
            PlantKind::Kdv { .. } => self.kdv.as_ref().expect("KdV solver").step(x, u),
            PlantKind::Linear { a, b } => Ok((0..n)
                .map(|i| {
                    a[i].iter().zip(x).map(|(p, q)| p * q).sum::<f64>()
                        + b[i].iter().zip(u).map(|(p, q)| p * q).sum::<f64>()
                })
                .collect()),
            _ => rk4_step(
                |x, u, dx| self.plant.vector_field(x, u, dx),
                x,
                u,
                self.plant.dt,
            ),
        }
    }
}

/// One simulated trajectory: `states` is `n x (T+1)`, `inputs` is `m x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(states: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self> {
        if states.ncols() != inputs.ncols() + 1 {
            return Err(Error::DimensionMismatch {
                context: "trajectory columns",
                expected: inputs.ncols() + 1,
                actual: states.ncols(),
            });
        }
        if states.iter().chain(inputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(Self { states, inputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }
}

/// Simulates `plant` from `x0` under the input columns of `inputs`.
pub fn simulate(plant: &PlantModel, x0: &[f64], inputs: &DMatrix<f64>) -> Result<Trajectory> {
    let sim = plant.simulator()?;
    simulate_with(&sim, x0, inputs)
}

fn simulate_with(sim: &Simulator<'_>, x0: &[f64], inputs: &DMatrix<f64>) -> Result<Trajectory> {
    let n = sim.plant.state_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: n,
            actual: x0.len(),
        });
    }
    if inputs.nrows() != sim.plant.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "input rows",
            expected: sim.plant.input_dim(),
            actual: inputs.nrows(),
        });
    }
    if inputs.ncols() == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    let horizon = inputs.ncols();
    let mut states = DMatrix::zeros(n, horizon + 1);
    states.set_column(0, &nalgebra::DVector::from_column_slice(x0));
    let mut x = x0.to_vec();
    for t in 0..horizon {
        let u: Vec<f64> = inputs.column(t).iter().copied().collect();
        x = sim.step(&x, &u).map_err(|e| match e {
            Error::Unstable { reason, .. } => Error::Unstable { step: t, reason },
            Error::NonFinite(_) => Error::Divergence {
                step: t,
                norm: f64::INFINITY,
            },
            other => other,
        })?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= BLOW_UP_NORM) {
            return Err(Error::Divergence { step: t, norm });
        }
        states.set_column(t + 1, &nalgebra::DVector::from_column_slice(&x));
    }
    Trajectory::new(states, inputs.clone())
}

/// Trajectories sharing a plant and sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub plant: String,
    pub dt: f64,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.states.nrows())
    }

    pub fn input_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.inputs.nrows())
    }

    /// Total number of one-step pairs.
    pub fn pair_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Writes a CSV with a `# plant=.. dt=.. seed=.. n=.. m=..` header line
    /// and rows `traj,t,x0..,u0..`; the input cells of each final sample are
    /// empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let (n, m) = (self.state_dim(), self.input_dim());
        writeln!(
            w,
            "# plant={} dt={} seed={} n={} m={}",
            self.plant, self.dt, self.seed, n, m
        )
        .map_err(|e| Error::io(path, e))?;
        let mut header = vec!["traj".to_string(), "t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for (k, tr) in self.trajectories.iter().enumerate() {
            for t in 0..tr.states.ncols() {
                let mut row = vec![k.to_string(), t.to_string()];
                row.extend(tr.states.column(t).iter().map(|v| v.to_string()));
                if t < tr.inputs.ncols() {
                    row.extend(tr.inputs.column(t).iter().map(|v| v.to_string()));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), m));
                }
                writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let meta = first
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::format(path, "missing '#' metadata line"))?;
        let mut plant = None;
        let mut dt = None;
        let mut seed = None;
        let mut n = None;
        let mut m = None;
        for kv in meta.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("bad metadata token '{kv}'")))?;
            let bad = |_| Error::format(path, format!("bad value for {k}"));
            match k {
                "plant" => plant = Some(v.to_string()),
                "dt" => dt = Some(v.parse::<f64>().map_err(|_| Error::format(path, "bad dt"))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(bad)?),
                "n" => n = Some(v.parse::<usize>().map_err(bad)?),
                "m" => m = Some(v.parse::<usize>().map_err(bad)?),
                _ => {}
            }
        }
        let missing = |f: &str| Error::format(path, format!("metadata lacks {f}"));
        let (plant, dt, seed) = (
            plant.ok_or_else(|| missing("plant"))?,
            dt.ok_or_else(|| missing("dt"))?,
            seed.ok_or_else(|| missing("seed"))?,
        );
        let (n, m) = (n.ok_or_else(|| missing("n"))?, m.ok_or_else(|| missing("m"))?);

        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut rows: Vec<(usize, Vec<f64>, Option<Vec<f64>>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            if rec.len() != 2 + n + m {
                return Err(Error::format(path, "row width does not match n + m"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(path, format!("bad number '{s}'")));
            let traj: usize = rec[0].parse().map_err(|_| Error::format(path, "bad traj index"))?;
            let x = (0..n).map(|i| num(&rec[2 + i])).collect::<Result<Vec<_>>>()?;
            let u = if rec[2 + n].is_empty() {
                None
            } else {
                Some((0..m).map(|i| num(&rec[2 + n + i])).collect::<Result<Vec<_>>>()?)
            };
            rows.push((traj, x, u));
        }
        let mut trajectories = Vec::new();
        let mut start = 0;
        while start < rows.len() {
            let id = rows[start].0;
            let end = rows[start..]
                .iter()
                .position(|r| r.0 != id)
                .map_or(rows.len(), |p| start + p);
            let chunk = &rows[start..end];
            let cols = chunk.len();
            if cols < 2 {
                return Err(Error::format(path, "trajectory shorter than two samples"));
            }
            let states = DMatrix::from_fn(n, cols, |i, t| chunk[t].1[i]);
            let mut inputs = DMatrix::zeros(m, cols - 1);
            for (t, row) in chunk[..cols - 1].iter().enumerate() {
                let u = row.2.as_ref().ok_or_else(|| Error::format(path, "missing input"))?;
                for i in 0..m {
                    inputs[(i, t)] = u[i];
                }
            }
            trajectories.push(Trajectory::new(states, inputs)?);
            start = end;
        }
        Ok(Self {
            plant,
            dt,
            seed,
            trajectories,
        })
    }
}

/// Draws the initial state for trajectory sampling: the unit box for ODE
/// plants, a random convex combination of the three KdV profiles otherwise.
fn sample_initial_state<R: Rng>(plant: &PlantModel, rng: &mut R) -> Vec<f64> {
    match &plant.kind {
        PlantKind::Kdv { mesh } => {
            let profiles = kdv::initial_profiles(*mesh);
            // uniform on the simplex
            let raw: Vec<f64> = (0..3).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            (0..*mesh)
                .map(|j| (0..3).map(|k| raw[k] / total * profiles[k][j]).sum())
                .collect()
        }
        _ => (0..plant.state_dim())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect(),
    }
}

/// Simulates `n_traj` trajectories of length `horizon` with i.i.d. uniform
/// inputs. Trajectory `k` uses the substream `derive_seed(seed, "trajectory",
/// [k])`, so results are independent of scheduling.
pub fn generate_training_set(
    plant: &PlantModel,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectorySet> {
    if n_traj == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("n_traj and horizon must be >= 1".into()));
    }
    plant.validate()?;
    let m = plant.input_dim();
    let trajectories = (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let sim = plant.simulator()?;
            let mut rng = rng_from_seed(derive_seed(seed, "trajectory", &[k as u64]));
            let x0 = sample_initial_state(plant, &mut rng);
            let bounds = &plant.training_input_bounds;
            let inputs = DMatrix::from_fn(m, horizon, |i, _| rng.random_range(bounds[i][0]..=bounds[i][1]));
            simulate_with(&sim, &x0, &inputs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        plant: plant.name().to_string(),
        dt: plant.dt,
        seed,
        trajectories,
    })
}
