//! `dqkoop` command line: simulate plants, identify predictors from
//! dither-quantized data, evaluate them, close the MPC loop and run sweeps.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dqkoop::harness::Prepared;
use dqkoop::ident::model_file;
use dqkoop::{
    emit_outputs, error_moment_report, predict_trajectory, prediction_error, run_closed_loop, run_sweep,
    sample_dither_errors, Error, ExperimentConfig, LinearPredictor, Quantizer, Result,
};

#[derive(Parser)]
#[command(name = "dqkoop", version, about = "Koopman predictors from dither-quantized data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the desk-scale pendulum sweep.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Use 200 training trajectories of 1000 steps and 50 dither seeds.
    #[arg(long)]
    paper_scale: bool,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::pendulum_desk(),
        };
        if self.paper_scale {
            cfg.paper_scale();
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which predictor to use: a saved file, or one identified on the spot.
#[derive(Args)]
struct PredictorSource {
    /// Predictor file written by `identify`.
    #[arg(long, conflicts_with_all = ["word_length", "mc"])]
    predictor: Option<PathBuf>,
    /// Identify from data quantized with this word length (omit for raw data).
    #[arg(short = 'b', long)]
    word_length: Option<u32>,
    /// Monte-Carlo index selecting the dither realization.
    #[arg(long, default_value_t = 0)]
    mc: usize,
}

impl PredictorSource {
    fn resolve(&self, cfg: &ExperimentConfig, prepared: &Prepared) -> Result<LinearPredictor> {
        match &self.predictor {
            Some(path) => {
                let p = model_file::load(path)?;
                if p.state_dim() != prepared.plant.state_dim() || p.input_dim() != prepared.plant.input_dim() {
                    return Err(Error::Config(format!(
                        "{} has state/input dims {}/{}, plant has {}/{}",
                        path.display(),
                        p.state_dim(),
                        p.input_dim(),
                        prepared.plant.state_dim(),
                        prepared.plant.input_dim()
                    )));
                }
                Ok(p)
            }
            None => Ok(prepared.identify(cfg, self.word_length, self.mc)?.0),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training or evaluation data set and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write the evaluation set instead of the training set.
        #[arg(long)]
        evaluation: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit a predictor and save it.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Word length; omit to fit on raw data.
        #[arg(short = 'b', long)]
        word_length: Option<u32>,
        #[arg(long, default_value_t = 0)]
        mc: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Held-out multi-step prediction error of a predictor.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: PredictorSource,
        /// Write predicted and true states of the first evaluation trajectory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the configured closed-loop MPC scenario on the true plant.
    Mpc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: PredictorSource,
        /// Write the closed-loop trace as CSV.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo sweep over word lengths; writes records, aggregates and plots.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check the dithered error moments of a quantizer.
    ValidateQuantizer {
        #[arg(short = 'b', long, default_value_t = 4)]
        word_length: u32,
        #[arg(long, default_value_t = -0.8, allow_negative_numbers = true)]
        lo: f64,
        #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
        hi: f64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest accepted |z| over all moments.
        #[arg(long, default_value_t = 4.0)]
        z_max: f64,
    },
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
        }
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, evaluation, out } => {
            let prepared = Prepared::new(&common.load()?)?;
            let set = if evaluation { &prepared.evaluation } else { &prepared.training };
            ensure_parent(&out)?;
            set.write_csv(&out)?;
            println!(
                "{}: {} trajectories, {} pairs, seed {} -> {}",
                set.plant,
                set.trajectories.len(),
                set.pair_count(),
                set.seed,
                out.display()
            );
        }
        Command::Identify { common, word_length, mc, out } => {
            let cfg = common.load()?;
            let prepared = Prepared::new(&cfg)?;
            let (p, report) = prepared.identify(&cfg, word_length, mc)?;
            ensure_parent(&out)?;
            model_file::save(&p, &out)?;
            println!(
                "lifted dim {}, rank {}, residual rms {:.4e}, prediction error {:.4e} -> {}",
                p.lifted_dim(),
                report.rank_used,
                report.residual_rms,
                prepared.prediction_error(&p)?,
                out.display()
            );
        }
        Command::Predict { common, source, out } => {
            let cfg = common.load()?;
            let prepared = Prepared::new(&cfg)?;
            let p = source.resolve(&cfg, &prepared)?;
            for (k, tr) in prepared.evaluation.trajectories.iter().enumerate() {
                let run = predict_trajectory(&p, tr)?;
                let err = prediction_error(&run)?;
                println!("trajectory {k}: mean relative error {:.4e}", err.mean);
                if k == 0 {
                    if let Some(path) = &out {
                        ensure_parent(path)?;
                        run.write_csv(path)?;
                    }
                }
            }
            println!("mean over trajectories {:.4e}", prepared.prediction_error(&p)?);
        }
        Command::Mpc { common, source, out } => {
            let cfg = common.load()?;
            let scenario = cfg
                .mpc
                .clone()
                .ok_or_else(|| Error::Config("config has no [mpc] section".into()))?;
            let prepared = Prepared::new(&cfg)?;
            let p = source.resolve(&cfg, &prepared)?;
            let mpc = scenario.config(&prepared.plant)?;
            let x0 = scenario.initial_state(prepared.plant.state_dim())?;
            let run = run_closed_loop(&prepared.plant, &p, &mpc, &x0, scenario.steps, None)?;
            println!(
                "J = {:.6e} over {} steps, {} steps with state violations (max {:.3e}), max KKT {:.2e}",
                run.total_cost,
                scenario.steps,
                run.violation_steps,
                run.max_violation,
                run.max_kkt_residual
            );
            if let Some(path) = &out {
                ensure_parent(path)?;
                run.write_csv(path)?;
            }
        }
        Command::Sweep { common, out } => {
            let cfg = common.load()?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
            let result = run_sweep(&cfg)?;
            let files = emit_outputs(&result, &dir)?;
            println!("{:>3} {:>12} {:>12} {:>12} {:>12}", "b", "relA", "relB", "pred err", "J");
            for a in &result.aggregates {
                let cost = a.cost_mean.map_or("-".into(), |c| format!("{c:.4e}"));
                println!(
                    "{:>3} {:>12.4e} {:>12.4e} {:>12.4e} {:>12}",
                    a.word_length, a.rel_a_mean, a.rel_b_mean, a.prediction_error_mean, cost
                );
            }
            if let Some(s) = result.slope_a {
                println!("log10 relA slope {:.3} per bit (r2 {:.3})", s.slope, s.r2);
            }
            println!("wrote {} records to {}", result.records.len(), files.records.display());
        }
        Command::ValidateQuantizer { word_length, lo, hi, dim, samples, seed, z_max } => {
            if dim == 0 || samples < 2 {
                return Err(Error::Config("need dim >= 1 and samples >= 2".into()));
            }
            let q = Quantizer::new(lo, hi, word_length)?;
            let report = error_moment_report(&sample_dither_errors(&q, dim, samples, seed)?, q.resolution())?;
            println!("eps {:.6e}, target variance {:.6e}, {} samples", report.eps, report.target_variance, samples);
            for (i, c) in report.coordinates.iter().enumerate() {
                println!(
                    "x{i}: mean {:+.3e} (z {:+.2}), variance {:.6e} (z {:+.2}), lag-1 z {:+.2}",
                    c.mean, c.z_mean, c.variance, c.z_variance, c.z_lag1
                );
            }
            for c in &report.cross {
                println!("x{} x{}: covariance {:+.3e} (z {:+.2})", c.i, c.j, c.covariance, c.z);
            }
            let z = report.max_abs_z();
            if report.degenerate_variance || z.is_nan() || z > z_max {
                return Err(Error::Numerical {
                    context: "dithered error moments",
                    condition: z,
                });
            }
            println!("ok: max |z| = {z:.2}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
