//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use dqkoop::dynamics::kdv::{initial_profiles, spatial_integral, KdvSolver};
use dqkoop::harness::{emit_outputs, run_sweep, spearman, ExperimentConfig, MpcScenario, PlantSpec};
use dqkoop::ident::{estimate_gap, singular_values, RangeSpec};
use dqkoop::mpc::{run_closed_loop, solve_qp, MpcConfig, QpProblem, Reference, SoftConstraints};
use dqkoop::quantization::{error_moment_report, DitherStream, ErrorSampleSet, Quantizer};
use dqkoop::seeds::{derive_seed, rng_from_seed};
use dqkoop::{
    assemble_snapshots, edmd_fit, generate_training_set, identify, mismatch_bound, ridge_fit, rk4_step, Dictionary,
    PlantModel, QuantizationConfig, QuantizationMode,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Check = Result<(bool, String), dqkoop::Error>;

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn moment_law() -> Check {
    const SAMPLES: usize = 1_000_000;
    let eps = 0.1;
    let q = Quantizer::new(-0.8, 0.8, 4)?;
    assert!((q.resolution() - eps).abs() < 1e-15);
    let mut signal = rng_from_seed(derive_seed(11, "signal", &[]));
    let mut dither = DitherStream::new(derive_seed(11, "dither", &[]));
    let mut errors = DMatrix::zeros(2, SAMPLES);
    let mut walk: f64 = 0.0;
    for t in 0..SAMPLES {
        // a slow deterministic sweep and a bounded random walk
        let x0 = 0.7 * (t as f64 * 1e-3).sin();
        walk = (walk + signal.random_range(-0.01..0.01)).clamp(-0.7, 0.7);
        for (i, x) in [x0, walk].into_iter().enumerate() {
            let w = dither.next_dither(eps);
            errors[(i, t)] = q.dither_quantize(x, w).value - x;
        }
    }
    let report = error_moment_report(&ErrorSampleSet::new(errors, eps)?, eps)?;
    let mean_band = 4.0 * eps / (12.0 * SAMPLES as f64).sqrt();
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, c) in report.coordinates.iter().enumerate() {
        let ratio = c.variance / report.target_variance;
        ok &= c.mean.abs() <= mean_band && (0.98..=1.02).contains(&ratio) && c.z_lag1.abs() <= 4.0;
        detail.push(format!("x{i}: mean {:.2e} var/target {:.4} z_lag1 {:.2}", c.mean, ratio, c.z_lag1));
    }
    for c in &report.cross {
        ok &= c.z.abs() <= 4.0;
        detail.push(format!("z_cross {:.2}", c.z));
    }
    Ok((ok, detail.join("; ")))
}

fn exact_recovery() -> Check {
    let a0 = vec![vec![0.9, 0.1], vec![0.0, 0.8]];
    let b0 = vec![vec![0.0], vec![1.0]];
    let plant = PlantModel::linear(a0.clone(), b0.clone())?;
    let data = generate_training_set(&plant, 4, 500, 21)?;
    let (p, report, snaps) = identify(&data, &Dictionary::identity(2), &QuantizationConfig::none(), 0)?;
    let truth = dqkoop::LiftedModel {
        a: DMatrix::from_row_slice(2, 2, &a0.concat()),
        b: DMatrix::from_row_slice(2, 1, &b0.concat()),
    };
    let gap = estimate_gap(&truth, &p.model())?;
    Ok((
        snaps.len() == 2000 && gap.rel_a <= 1e-9 && gap.rel_b <= 1e-9,
        format!("T = {}, relA {:.2e}, relB {:.2e}, rank {}", snaps.len(), gap.rel_a, gap.rel_b, report.rank_used),
    ))
}

fn word_length_slope() -> Check {
    let mut cfg = ExperimentConfig::pendulum_desk();
    cfg.word_lengths = (5..=11).collect();
    let result = run_sweep(&cfg)?;
    let Some(s) = result.slope_a else {
        return Ok((false, "slope fit failed".into()));
    };
    let slope_b = result.slope_b.map_or(f64::NAN, |s| s.slope);
    Ok((
        (-0.45..=-0.15).contains(&s.slope) && s.r2 >= 0.8,
        format!("slope_A {:.3} (r2 {:.3}), slope_B {:.3}", s.slope, s.r2, slope_b),
    ))
}

fn ridge_equivalence() -> Check {
    let plant = PlantModel::linear(vec![vec![0.9]], vec![vec![0.1]])?;
    let data = generate_training_set(&plant, 100, 1000, 31)?;
    let dict = Dictionary::identity(1);
    let clean = assemble_snapshots(&data, &dict, &QuantizationConfig::none(), 0)?;
    let range = RangeSpec::Shared { lo: -1.1, hi: 1.1 };
    let qcfg = QuantizationConfig {
        observable_ranges: range.clone(),
        input_ranges: range,
        ..QuantizationConfig::with_mode(QuantizationMode::Observable, 4)
    };
    let eps = 2.2 / 16.0;
    let lambda = eps * eps / 12.0;
    let (ridge_full, ridge_short) = (ridge_fit(&clean, lambda)?, ridge_fit(&clean.truncated(1000), lambda)?);
    let (mut worst_full, mut sum_full, mut sum_short) = (0.0f64, 0.0, 0.0);
    const SEEDS: u64 = 10;
    for k in 0..SEEDS {
        let q = assemble_snapshots(&data, &dict, &qcfg, derive_seed(31, "dither", &[k]))?;
        let full = estimate_gap(&ridge_full, &edmd_fit(&q)?.0)?.rel_g;
        let short = estimate_gap(&ridge_short, &edmd_fit(&q.truncated(1000))?.0)?.rel_g;
        worst_full = worst_full.max(full);
        sum_full += full;
        sum_short += short;
    }
    let (mean_full, mean_short) = (sum_full / SEEDS as f64, sum_short / SEEDS as f64);
    Ok((
        worst_full <= 0.05 && mean_full < mean_short,
        format!(
            "eps {eps}, gap at T=1e5: mean {:.2}% worst {:.2}%; at T=1e3: mean {:.2}%",
            100.0 * mean_full,
            100.0 * worst_full,
            100.0 * mean_short
        ),
    ))
}

fn mismatch_trend() -> Check {
    let plant = PlantModel::pendulum();
    let data = generate_training_set(&plant, 1000, 100, 41)?;
    let dict = Dictionary::tps_sampled(2, 100, -1.0, 1.0, 42)?;
    let snaps = assemble_snapshots(&data, &dict, &QuantizationConfig::none(), 0)?;
    let eps = 2.0 / 256.0;
    let mut bounds = Vec::new();
    let mut lambdas = Vec::new();
    for t in [1_000, 10_000, 100_000] {
        let s = snaps.truncated(t);
        bounds.push(mismatch_bound(&s, eps)?);
        let (sigma, _) = singular_values(&s.psi());
        lambdas.push(sigma.last().unwrap().powi(2) / t as f64);
    }
    Ok((
        bounds.windows(2).all(|w| w[1] < w[0]),
        format!(
            "eps {eps}: bound {:.10} > {:.10} > {:.10} (lambda_min {:.1e}, {:.1e}, {:.1e})",
            bounds[0], bounds[1], bounds[2], lambdas[0], lambdas[1], lambdas[2]
        ),
    ))
}

fn pendulum_scenario() -> MpcScenario {
    MpcScenario {
        q_diag: vec![1.0, 0.0],
        r_diag: vec![0.01],
        horizon: 100,
        steps: 600,
        x0: vec![],
        reference: Reference::PiecewiseConstant {
            levels: vec![vec![0.4], vec![-0.4]],
            period_steps: 300,
        },
        hessian_floor: 0.0,
        quantize_measurements: false,
    }
}

fn mpc_checks() -> Check {
    // (a) equilibrium: x+ = A0 x + B0 u regulated at the origin
    let plant = PlantModel::linear(vec![vec![0.9, 0.1], vec![0.0, 0.8]], vec![vec![0.0], vec![1.0]])?;
    let data = generate_training_set(&plant, 4, 200, 61)?;
    let (p, _, _) = identify(&data, &Dictionary::identity(2), &QuantizationConfig::none(), 0)?;
    let cfg = MpcConfig::for_plant(
        &plant,
        DMatrix::identity(2, 2),
        DMatrix::from_element(1, 1, 0.1),
        20,
        Reference::Constant { value: vec![0.0, 0.0] },
    );
    let eq = run_closed_loop(&plant, &p, &cfg, &[0.0, 0.0], 200, None)?;
    let ok_a = eq.total_cost <= 1e-6;

    // (b) and (c) from one sweep; the unquantized run is kept as a trace
    let mut sweep = ExperimentConfig::pendulum_desk();
    sweep.word_lengths = vec![4, 6, 8, 10];
    sweep.n_monte_carlo = 10;
    sweep.mpc = Some(pendulum_scenario());
    let result = run_sweep(&sweep)?;
    let reference = result
        .traces
        .iter()
        .find(|t| t.word_length.is_none())
        .map(|t| &t.run);
    let (ok_b, x1_max, u_max) = match reference {
        Some(run) => {
            let x1 = run.states.row(0).amax();
            let u = run.inputs.amax();
            (x1 <= 0.6 && u <= 4.0, x1, u)
        }
        None => (false, f64::NAN, f64::NAN),
    };
    let bs: Vec<f64> = result.aggregates.iter().map(|a| a.word_length as f64).collect();
    let js: Vec<f64> = result.aggregates.iter().map(|a| a.cost_mean.unwrap_or(f64::NAN)).collect();
    let rho = spearman(&bs, &js)?;
    let j_ref = result.reference.achieved_cost.unwrap_or(f64::NAN);
    let j10 = js[3];
    let ok_c = rho < 0.0 && ((j10 - j_ref) / j_ref).abs() <= 0.10;
    Ok((
        ok_a && ok_b && ok_c,
        format!(
            "(a) J_eq {:.1e}; (b) max|x1| {x1_max:.3}, max|u| {u_max:.3}; (c) mean J {js:.3?}, J_unquantized {j_ref:.3}, spearman {rho:.2}",
            eq.total_cost
        ),
    ))
}

fn numerics() -> Check {
    // RK4 order on x' = -x over [0, 1]
    let err = |h: f64| -> Result<f64, dqkoop::Error> {
        let steps = (1.0 / h).round() as usize;
        let mut x = vec![1.0];
        for _ in 0..steps {
            x = rk4_step(|x: &[f64], _: &[f64], dx: &mut [f64]| dx[0] = -x[0], &x, &[], h)?;
        }
        Ok((x[0] - (-1.0f64).exp()).abs())
    };
    let (e1, e2) = (err(0.1)?, err(0.05)?);
    let order = (e1 / e2).log2();

    // KdV unforced mass drift
    let solver = KdvSolver::new(128, 0.01)?;
    let ic = initial_profiles(128);
    let mut y: Vec<f64> = (0..128).map(|i| 0.5 * ic[0][i] + 0.3 * ic[1][i] + 0.2 * ic[2][i]).collect();
    let mut drift = 0.0f64;
    let mut mass = spatial_integral(&y);
    for _ in 0..1000 {
        y = solver.step(&y, &[0.0; 3])?;
        let next = spatial_integral(&y);
        drift = drift.max((next - mass).abs());
        mass = next;
    }

    // QP KKT residuals on random PSD instances
    let mut rng = rng_from_seed(derive_seed(71, "qp", &[]));
    let mut worst_kkt = 0.0f64;
    let mut all_converged = true;
    for k in 0..100 {
        let p = 10 + k % 21;
        let r = 1 + rng.random_range(0..p);
        let l = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
        let h = &l * l.transpose() + DMatrix::identity(p, p) * 1e-3;
        let f = DVector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
        let lo = DVector::from_fn(p, |_, _| rng.random_range(-2.0..-0.1));
        let hi = DVector::from_fn(p, |_, _| rng.random_range(0.1..2.0));
        let mut qp = QpProblem::boxed(h, f, lo, hi);
        if k % 2 == 1 {
            let rows = 1 + p / 2;
            qp.soft = Some(SoftConstraints {
                matrix: DMatrix::from_fn(rows, p, |_, _| rng.random_range(-1.0..1.0)),
                lower: DVector::from_element(rows, -0.5),
                upper: DVector::from_element(rows, 0.5),
                weight: 1e3,
            });
        }
        let sol = solve_qp(&qp)?;
        worst_kkt = worst_kkt.max(sol.kkt.max());
        all_converged &= sol.converged;
    }
    Ok((
        order >= 3.8 && drift <= 1e-8 && worst_kkt <= 1e-6 && all_converged,
        format!("RK4 order {order:.3}; KdV max mass drift/step {drift:.1e}; QP worst KKT {worst_kkt:.1e}"),
    ))
}

fn determinism() -> Check {
    let mut cfg = ExperimentConfig::pendulum_desk();
    cfg.plant = PlantSpec::named("pendulum");
    cfg.training.n_traj = 5;
    cfg.training.horizon = 200;
    cfg.evaluation.n_traj = 2;
    cfg.evaluation.horizon = 200;
    cfg.word_lengths = vec![6, 8];
    cfg.n_monte_carlo = 2;
    let mut scenario = pendulum_scenario();
    scenario.horizon = 20;
    scenario.steps = 40;
    cfg.mpc = Some(scenario);
    let dir = tempfile::tempdir().map_err(|e| dqkoop::Error::InvalidArgument(e.to_string()))?;
    let mut bytes = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let files = emit_outputs(&run_sweep(&cfg)?, &out)?;
        bytes.push(std::fs::read(&files.records).map_err(|e| dqkoop::Error::InvalidArgument(e.to_string()))?);
    }
    Ok((
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!("records.csv {} bytes, identical: {}", bytes[0].len(), bytes[0] == bytes[1]),
    ))
}

fn main() {
    let criteria = [
        Criterion { id: "1", name: "dither moment law", budget: Duration::from_secs(5), run: moment_law },
        Criterion { id: "2", name: "exact recovery", budget: Duration::from_secs(1), run: exact_recovery },
        Criterion { id: "3", name: "word-length slope", budget: Duration::from_secs(300), run: word_length_slope },
        Criterion { id: "4", name: "ridge equivalence", budget: Duration::from_secs(30), run: ridge_equivalence },
        Criterion { id: "5", name: "mismatch bound trend", budget: Duration::from_secs(60), run: mismatch_trend },
        Criterion { id: "6", name: "MPC sanity and trend", budget: Duration::from_secs(600), run: mpc_checks },
        Criterion { id: "7", name: "numerics", budget: Duration::from_secs(60), run: numerics },
        Criterion { id: "8", name: "determinism", budget: Duration::from_secs(60), run: determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = Vec::new();
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| f == c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= c.budget;
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "[{}] criterion {} {}: {} ({:.1} s, budget {} s)",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        if !pass {
            failures.push(c.id);
        }
    }
    if !failures.is_empty() {
        eprintln!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
}
