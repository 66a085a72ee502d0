//! Monte-Carlo word-length sweeps.
//!
//! A sweep fixes one training set and one evaluation set, fits a reference
//! predictor on unquantized data, then for every `(b, mc)` pair quantizes
//! the training snapshots with an independent dither realization, refits,
//! and records the estimate gaps, held-out prediction error and optionally
//! the closed-loop cost.
//!
//! Seed fan-out from the master seed (see [`crate::seeds::derive_seed`]):
//!
//! | label          | indices   | used for                              |
//! |----------------|-----------|---------------------------------------|
//! | `training`     | `[]`      | training trajectories                 |
//! | `evaluation`   | `[]`      | held-out trajectories                 |
//! | `centers`      | `[]`      | TPS center sampling                   |
//! | `dither`       | `[mc]`    | snapshot dither, shared across `b`    |
//! | `measurement`  | `[b, mc]` | run-time measurement dither           |

mod output;

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::{generate_training_set, MotorParams, PlantKind, PlantModel, TrajectorySet};
use crate::error::{Error, Result};
use crate::ident::{estimate_gap, identify, state_quantizers, FitReport, LinearPredictor, QuantizationConfig, QuantizationMode, RangeSpec};
use crate::mpc::{run_closed_loop, MeasurementQuantizer, MpcConfig, Reference};
use crate::predictor::{predict_trajectory, prediction_error};
use crate::seeds::derive_seed;

pub use output::{config_hash, emit_outputs, read_records, EmittedFiles};

/// Training trajectories, length and Monte-Carlo count restored by
/// [`ExperimentConfig::paper_scale`].
pub const PAPER_SCALE: (usize, usize, usize) = (200, 1000, 50);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// `pendulum`, `vdp`, `motor`, `kdv` or `linear`.
    pub name: String,
    /// KdV mesh size.
    pub mesh: Option<usize>,
    /// Linear plant matrices, row-major.
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub motor: Option<MotorParams>,
    pub dt: Option<f64>,
    pub input_bounds: Option<Vec<[f64; 2]>>,
    pub training_input_bounds: Option<Vec<[f64; 2]>>,
    /// Per coordinate; `[]` entries are not expressible in TOML, so use
    /// `state_bounds_clear` to drop them.
    pub state_bounds: Option<Vec<[f64; 2]>>,
    /// Coordinates whose state bound is removed.
    #[serde(default)]
    pub state_bounds_clear: Vec<usize>,
}

impl PlantSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            mesh: None,
            a: None,
            b: None,
            motor: None,
            dt: None,
            input_bounds: None,
            training_input_bounds: None,
            state_bounds: None,
            state_bounds_clear: vec![],
        }
    }

    pub fn build(&self) -> Result<PlantModel> {
        let mut plant = match self.name.as_str() {
            "kdv" => PlantModel::kdv(self.mesh.unwrap_or(128)),
            "linear" => match (&self.a, &self.b) {
                (Some(a), Some(b)) => PlantModel::linear(a.clone(), b.clone()).map_err(|e| Error::Config(e.to_string()))?,
                _ => return Err(Error::Config("linear plant needs `a` and `b`".into())),
            },
            other => PlantModel::by_name(other)?,
        };
        if let Some(p) = self.motor {
            if !matches!(plant.kind, PlantKind::Motor(_)) {
                return Err(Error::Config("motor parameters given for a non-motor plant".into()));
            }
            plant.kind = PlantKind::Motor(p);
        }
        if let Some(dt) = self.dt {
            plant.dt = dt;
        }
        if let Some(b) = &self.input_bounds {
            plant.input_bounds = b.clone();
        }
        if let Some(b) = &self.training_input_bounds {
            plant.training_input_bounds = b.clone();
        }
        if let Some(b) = &self.state_bounds {
            plant.state_bounds = b.iter().map(|v| Some(*v)).collect();
        }
        for &i in &self.state_bounds_clear {
            match plant.state_bounds.get_mut(i) {
                Some(slot) => *slot = None,
                None => return Err(Error::Config(format!("state_bounds_clear index {i} out of range"))),
            }
        }
        plant.validate()?;
        Ok(plant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DictionarySpec {
    /// State plus thin-plate RBFs with uniformly sampled centers.
    Tps {
        #[serde(default = "default_centers")]
        centers: usize,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    /// `[x, x^2, x_i x_{i+1}, 1]` on the plant mesh.
    Kdv,
    Identity,
}

fn default_centers() -> usize {
    100
}
fn default_lo() -> f64 {
    -1.0
}
fn default_hi() -> f64 {
    1.0
}

impl DictionarySpec {
    pub fn build(&self, state_dim: usize, master_seed: u64) -> Result<Dictionary> {
        match *self {
            Self::Tps { centers, lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::Config("TPS center box must satisfy lo < hi".into()));
                }
                Dictionary::tps_sampled(state_dim, centers, lo, hi, derive_seed(master_seed, "centers", &[]))
            }
            Self::Kdv => Dictionary::kdv(state_dim),
            Self::Identity => Ok(Dictionary::identity(state_dim)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSize {
    pub n_traj: usize,
    pub horizon: usize,
}

/// Closed-loop scenario run for every sweep record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcScenario {
    /// Diagonal of `Q`; a single entry is broadcast.
    pub q_diag: Vec<f64>,
    /// Diagonal of `R`; a single entry is broadcast.
    pub r_diag: Vec<f64>,
    pub horizon: usize,
    pub steps: usize,
    /// Initial state; a single entry is broadcast. Defaults to the origin.
    #[serde(default)]
    pub x0: Vec<f64>,
    /// Reference levels of length one are broadcast across the state.
    pub reference: Reference,
    #[serde(default)]
    pub hessian_floor: f64,
    /// Dither-quantize run-time measurements with the training quantizers.
    #[serde(default)]
    pub quantize_measurements: bool,
}

fn broadcast(v: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        l if l == n => Ok(v.to_vec()),
        l => Err(Error::Config(format!("{what} has {l} entries, expected 1 or {n}"))),
    }
}

impl MpcScenario {
    pub fn config(&self, plant: &PlantModel) -> Result<MpcConfig> {
        let (n, m) = (plant.state_dim(), plant.input_dim());
        let q = DMatrix::from_diagonal(&DVector::from_vec(broadcast(&self.q_diag, n, "q_diag")?));
        let r = DMatrix::from_diagonal(&DVector::from_vec(broadcast(&self.r_diag, m, "r_diag")?));
        let reference = match &self.reference {
            Reference::Constant { value } => Reference::Constant {
                value: broadcast(value, n, "reference")?,
            },
            Reference::PiecewiseConstant { levels, period_steps } => Reference::PiecewiseConstant {
                levels: levels
                    .iter()
                    .map(|l| broadcast(l, n, "reference level"))
                    .collect::<Result<_>>()?,
                period_steps: *period_steps,
            },
        };
        let mut cfg = MpcConfig::for_plant(plant, q, r, self.horizon, reference);
        cfg.hessian_floor = self.hessian_floor;
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn initial_state(&self, n: usize) -> Result<Vec<f64>> {
        if self.x0.is_empty() {
            Ok(vec![0.0; n])
        } else {
            broadcast(&self.x0, n, "x0")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub dictionary: DictionarySpec,
    pub training: DataSize,
    /// Held-out trajectories for the prediction error.
    pub evaluation: DataSize,
    pub word_lengths: Vec<u32>,
    pub n_monte_carlo: usize,
    pub mode: QuantizationMode,
    #[serde(default)]
    pub state_ranges: RangeSpec,
    #[serde(default)]
    pub input_ranges: RangeSpec,
    #[serde(default)]
    pub observable_ranges: RangeSpec,
    pub mpc: Option<MpcScenario>,
    pub output_dir: Option<PathBuf>,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Desk-scale pendulum sweep: 20 x 500 training, 10 seeds, b = 4..10.
    pub fn pendulum_desk() -> Self {
        Self {
            plant: PlantSpec::named("pendulum"),
            dictionary: DictionarySpec::Tps {
                centers: 100,
                lo: -1.0,
                hi: 1.0,
            },
            training: DataSize { n_traj: 20, horizon: 500 },
            evaluation: DataSize { n_traj: 5, horizon: 500 },
            word_lengths: (4..=10).collect(),
            n_monte_carlo: 10,
            mode: QuantizationMode::StateInput,
            state_ranges: RangeSpec::FromData,
            input_ranges: RangeSpec::FromData,
            observable_ranges: RangeSpec::FromData,
            mpc: None,
            output_dir: None,
            master_seed: 1,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Restores 200 trajectories x 1000 steps and 50 dither seeds.
    pub fn paper_scale(&mut self) {
        let (n_traj, horizon, n_mc) = PAPER_SCALE;
        self.training = DataSize { n_traj, horizon };
        self.evaluation.horizon = horizon;
        self.n_monte_carlo = n_mc;
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_lengths.is_empty() {
            return Err(Error::Config("word_lengths must not be empty".into()));
        }
        if let Some(b) = self.word_lengths.iter().find(|&&b| b == 0 || b > crate::quantization::MAX_WORD_LENGTH) {
            return Err(Error::Config(format!("word length {b} outside 1..=32")));
        }
        if self.n_monte_carlo == 0 {
            return Err(Error::Config("n_monte_carlo must be at least 1".into()));
        }
        if self.mode == QuantizationMode::None {
            return Err(Error::Config("a sweep needs a quantization mode other than none".into()));
        }
        for (what, d) in [("training", self.training), ("evaluation", self.evaluation)] {
            if d.n_traj == 0 || d.horizon == 0 {
                return Err(Error::Config(format!("{what} sizes must be positive")));
            }
        }
        let plant = self.plant.build()?;
        if let Some(s) = &self.mpc {
            s.config(&plant)?;
            s.initial_state(plant.state_dim())?;
            if s.steps == 0 {
                return Err(Error::Config("mpc.steps must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn quantization(&self, word_length: u32) -> QuantizationConfig {
        QuantizationConfig {
            mode: self.mode,
            word_length,
            state_ranges: self.state_ranges.clone(),
            input_ranges: self.input_ranges.clone(),
            observable_ranges: self.observable_ranges.clone(),
        }
    }
}

/// One `(b, mc)` cell of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub word_length: u32,
    pub mc_index: usize,
    pub dither_seed: u64,
    pub rel_a: f64,
    pub rel_b: f64,
    pub rel_g: f64,
    pub residual_rms: f64,
    pub saturations: usize,
    /// `inf` when the predictor diverges on held-out data.
    pub prediction_error: f64,
    pub achieved_cost: Option<f64>,
    pub violation_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub word_length: u32,
    pub count: usize,
    pub rel_a_mean: f64,
    pub rel_a_std: f64,
    pub rel_b_mean: f64,
    pub rel_b_std: f64,
    pub prediction_error_mean: f64,
    pub prediction_error_std: f64,
    pub cost_mean: Option<f64>,
    pub cost_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSlope {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Unquantized-predictor results on the same scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub prediction_error: f64,
    pub achieved_cost: Option<f64>,
}

/// Closed-loop trace kept for plotting.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `None` for the unquantized predictor.
    pub word_length: Option<u32>,
    pub run: crate::mpc::ClosedLoopRun,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub records: Vec<SweepRecord>,
    pub aggregates: Vec<Aggregate>,
    pub reference: ReferenceSummary,
    pub slope_a: Option<LogSlope>,
    pub slope_b: Option<LogSlope>,
    /// First Monte-Carlo run per word length, plus the reference run.
    pub traces: Vec<Trace>,
}

impl SweepResult {
    /// SHA-256 of the records CSV, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(output::records_csv(&self.records)?)))
    }
}

/// Least-squares line through `(b, log10 e)`.
pub fn fit_log_slope(b: &[f64], errors: &[f64]) -> Result<LogSlope> {
    if b.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            context: "slope fit",
            expected: b.len(),
            actual: errors.len(),
        });
    }
    if b.len() < 3 {
        return Err(Error::InvalidArgument("slope fit needs at least 3 points".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("slope fit needs positive finite errors, got {e}")));
    }
    let y: Vec<f64> = errors.iter().map(|e| e.log10()).collect();
    let n = b.len() as f64;
    let mx = b.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = b.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = b.iter().zip(&y).map(|(x, v)| (x - mx) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = b.iter().zip(&y).map(|(x, v)| (v - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LogSlope { slope, intercept, r2 })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn mean_prediction_error(p: &LinearPredictor, eval: &TrajectorySet) -> Result<f64> {
    let mut total = 0.0;
    for tr in &eval.trajectories {
        match predict_trajectory(p, tr) {
            Ok(run) => total += prediction_error(&run)?.mean,
            Err(Error::Divergence { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(total / eval.trajectories.len() as f64)
}

struct Shared {
    plant: PlantModel,
    dict: Dictionary,
    training: TrajectorySet,
    evaluation: TrajectorySet,
    reference: LinearPredictor,
    mpc: Option<(MpcConfig, Vec<f64>)>,
}

fn closed_loop_cost(
    shared: &Shared,
    scenario: &MpcScenario,
    p: &LinearPredictor,
    measurement: Option<&MeasurementQuantizer>,
) -> Result<Option<crate::mpc::ClosedLoopRun>> {
    let (cfg, x0) = shared.mpc.as_ref().expect("scenario configured");
    match run_closed_loop(&shared.plant, p, cfg, x0, scenario.steps, measurement) {
        Ok(run) => Ok(Some(run)),
        Err(Error::Divergence { .. }) | Err(Error::Unstable { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_record(cfg: &ExperimentConfig, shared: &Shared, b: u32, mc: usize) -> Result<(SweepRecord, Option<Trace>)> {
    let dither_seed = derive_seed(cfg.master_seed, "dither", &[mc as u64]);
    let (p, report, snaps) = identify(&shared.training, &shared.dict, &cfg.quantization(b), dither_seed)?;
    let gap = estimate_gap(&shared.reference.model(), &p.model())?;
    let prediction_error = mean_prediction_error(&p, &shared.evaluation)?;
    let (mut achieved_cost, mut violation_steps, mut trace) = (None, None, None);
    if let Some(scenario) = &cfg.mpc {
        let measurement = scenario
            .quantize_measurements
            .then(|| -> Result<MeasurementQuantizer> {
                let bank = state_quantizers(&shared.training, &cfg.state_ranges, b)?;
                Ok(MeasurementQuantizer {
                    bank,
                    seed: derive_seed(cfg.master_seed, "measurement", &[b as u64, mc as u64]),
                })
            })
            .transpose()?;
        let run = closed_loop_cost(shared, scenario, &p, measurement.as_ref())?;
        achieved_cost = Some(run.as_ref().map_or(f64::INFINITY, |r| r.total_cost));
        violation_steps = run.as_ref().map(|r| r.violation_steps);
        if mc == 0 {
            trace = run.map(|run| Trace {
                word_length: Some(b),
                run,
            });
        }
    }
    Ok((
        SweepRecord {
            word_length: b,
            mc_index: mc,
            dither_seed,
            rel_a: gap.rel_a,
            rel_b: gap.rel_b,
            rel_g: gap.rel_g,
            residual_rms: report.residual_rms,
            saturations: snaps.saturations,
            prediction_error,
            achieved_cost,
            violation_steps,
        },
        trace,
    ))
}

/// Plant, dictionary and data sets derived from a config and its master seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub plant: PlantModel,
    pub dictionary: Dictionary,
    pub training: TrajectorySet,
    pub evaluation: TrajectorySet,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let plant = cfg.plant.build()?;
        let dictionary = cfg.dictionary.build(plant.state_dim(), cfg.master_seed)?;
        let data = |label: &str, d: DataSize| {
            generate_training_set(&plant, d.n_traj, d.horizon, derive_seed(cfg.master_seed, label, &[]))
        };
        let training = data("training", cfg.training)?;
        let evaluation = data("evaluation", cfg.evaluation)?;
        Ok(Self {
            plant,
            dictionary,
            training,
            evaluation,
        })
    }

    /// Predictor for word length `b` and Monte-Carlo index `mc`, or the
    /// unquantized predictor when `b` is `None`.
    pub fn identify(&self, cfg: &ExperimentConfig, b: Option<u32>, mc: usize) -> Result<(LinearPredictor, FitReport)> {
        let (qcfg, seed) = match b {
            Some(b) => (cfg.quantization(b), derive_seed(cfg.master_seed, "dither", &[mc as u64])),
            None => (QuantizationConfig::none(), 0),
        };
        let (p, report, _) = identify(&self.training, &self.dictionary, &qcfg, seed)?;
        Ok((p, report))
    }

    /// Mean held-out prediction error; `inf` if the rollout diverges.
    pub fn prediction_error(&self, p: &LinearPredictor) -> Result<f64> {
        mean_prediction_error(p, &self.evaluation)
    }
}

/// Runs the full `(b, mc)` grid. Records are ordered by `b` then `mc`
/// regardless of scheduling.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let Prepared {
        plant,
        dictionary: dict,
        training,
        evaluation,
    } = Prepared::new(cfg)?;
    let (reference, _, _) = identify(&training, &dict, &QuantizationConfig::none(), 0)?;
    let mpc = match &cfg.mpc {
        Some(s) => Some((s.config(&plant)?, s.initial_state(plant.state_dim())?)),
        None => None,
    };
    let shared = Shared {
        plant,
        dict,
        training,
        evaluation,
        reference,
        mpc,
    };

    let mut traces = Vec::new();
    let reference_summary = ReferenceSummary {
        prediction_error: mean_prediction_error(&shared.reference, &shared.evaluation)?,
        achieved_cost: match &cfg.mpc {
            Some(s) => {
                let run = closed_loop_cost(&shared, s, &shared.reference, None)?;
                let cost = run.as_ref().map_or(f64::INFINITY, |r| r.total_cost);
                if let Some(run) = run {
                    traces.push(Trace { word_length: None, run });
                }
                Some(cost)
            }
            None => None,
        },
    };

    let grid: Vec<(u32, usize)> = cfg
        .word_lengths
        .iter()
        .flat_map(|&b| (0..cfg.n_monte_carlo).map(move |mc| (b, mc)))
        .collect();
    let cells: Vec<(SweepRecord, Option<Trace>)> = grid
        .par_iter()
        .map(|&(b, mc)| {
            run_record(cfg, &shared, b, mc).map_err(|e| Error::Record {
                word_length: b,
                seed: mc as u64,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(cells.len());
    for (rec, trace) in cells {
        records.push(rec);
        traces.extend(trace);
    }
    let aggregates = aggregate(&cfg.word_lengths, &records);
    let bs: Vec<f64> = aggregates.iter().map(|a| a.word_length as f64).collect();
    let slope = |f: fn(&Aggregate) -> f64| {
        let v: Vec<f64> = aggregates.iter().map(f).collect();
        fit_log_slope(&bs, &v).ok()
    };
    Ok(SweepResult {
        config: cfg.clone(),
        slope_a: slope(|a| a.rel_a_mean),
        slope_b: slope(|a| a.rel_b_mean),
        records,
        aggregates,
        reference: reference_summary,
        traces,
    })
}

/// Per-`b` mean and sample standard deviation.
pub fn aggregate(word_lengths: &[u32], records: &[SweepRecord]) -> Vec<Aggregate> {
    word_lengths
        .iter()
        .filter_map(|&b| {
            let rs: Vec<&SweepRecord> = records.iter().filter(|r| r.word_length == b).collect();
            if rs.is_empty() {
                return None;
            }
            let col = |f: fn(&SweepRecord) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (rel_a_mean, rel_a_std) = col(|r| r.rel_a);
            let (rel_b_mean, rel_b_std) = col(|r| r.rel_b);
            let (prediction_error_mean, prediction_error_std) = col(|r| r.prediction_error);
            let costs: Option<Vec<f64>> = rs.iter().map(|r| r.achieved_cost).collect();
            let cost = costs.map(|c| mean_std(&c));
            Some(Aggregate {
                word_length: b,
                count: rs.len(),
                rel_a_mean,
                rel_a_std,
                rel_b_mean,
                rel_b_std,
                prediction_error_mean,
                prediction_error_std,
                cost_mean: cost.map(|c| c.0),
                cost_std: cost.map(|c| c.1),
            })
        })
        .collect()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs two equal-length samples".into()));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}
