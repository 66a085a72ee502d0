use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dqkoop::dynamics::kdv::{initial_profiles, KdvSolver};
use dqkoop::{
    assemble_snapshots, condense, edmd_fit, generate_training_set, identify, solve_qp, Dictionary, MpcConfig,
    PlantModel, QuantizationConfig, QuantizationMode, Reference,
};
use nalgebra::{DMatrix, DVector};

fn lift(c: &mut Criterion) {
    let tps = Dictionary::tps_sampled(2, 100, -1.0, 1.0, 1).unwrap();
    let kdv = Dictionary::kdv(128).unwrap();
    let x2 = [0.3, -0.4];
    let x128 = initial_profiles(128)[0].clone();
    let mut g = c.benchmark_group("lift");
    g.bench_function("tps_102", |b| b.iter(|| tps.lift(black_box(&x2)).unwrap()));
    g.bench_function("kdv_385", |b| b.iter(|| kdv.lift(black_box(&x128)).unwrap()));
    g.finish();
}

fn edmd(c: &mut Criterion) {
    let plant = PlantModel::pendulum();
    let data = generate_training_set(&plant, 20, 500, 2).unwrap();
    let dict = Dictionary::tps_sampled(2, 100, -1.0, 1.0, 3).unwrap();
    let mut g = c.benchmark_group("edmd_fit");
    g.sample_size(10);
    for mode in [QuantizationMode::None, QuantizationMode::StateInput, QuantizationMode::Observable] {
        let cfg = QuantizationConfig::with_mode(mode, 8);
        let snaps = assemble_snapshots(&data, &dict, &cfg, 4).unwrap();
        g.bench_with_input(BenchmarkId::new("assemble", format!("{mode:?}")), &cfg, |b, cfg| {
            b.iter(|| assemble_snapshots(&data, &dict, cfg, 4).unwrap())
        });
        if mode == QuantizationMode::None {
            g.bench_function("fit_T10000_N102", |b| b.iter(|| edmd_fit(black_box(&snaps)).unwrap()));
        }
    }
    g.finish();
}

fn qp(c: &mut Criterion) {
    let plant = PlantModel::pendulum();
    let data = generate_training_set(&plant, 20, 500, 2).unwrap();
    let dict = Dictionary::tps_sampled(2, 100, -1.0, 1.0, 3).unwrap();
    let (p, _, _) = identify(&data, &dict, &QuantizationConfig::none(), 0).unwrap();
    let z0 = DVector::from_vec(dict.lift(&[0.1, 0.0]).unwrap());
    let mut g = c.benchmark_group("solve_qp");
    g.sample_size(20);
    for horizon in [20, 100] {
        let cfg = MpcConfig::for_plant(
            &plant,
            DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.0])),
            DMatrix::from_element(1, 1, 0.01),
            horizon,
            Reference::Constant { value: vec![0.4, 0.0] },
        );
        let problem = condense(&p, &cfg, &z0).unwrap();
        g.bench_with_input(BenchmarkId::new("pendulum_tracking", horizon), &problem, |b, qp| {
            b.iter(|| solve_qp(black_box(qp)).unwrap())
        });
    }
    g.finish();
}

fn kdv_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("kdv_step");
    for mesh in [64, 128, 256] {
        let solver = KdvSolver::new(mesh, 0.01).unwrap();
        let y = initial_profiles(mesh)[0].iter().map(|v| 0.5 * v).collect::<Vec<_>>();
        g.bench_with_input(BenchmarkId::from_parameter(mesh), &y, |b, y| {
            b.iter(|| solver.step(black_box(y), &[0.1, 0.0, -0.1]).unwrap())
        });
    }
    g.finish();
}

criterion_group!(kernels, lift, edmd, qp, kdv_step);
criterion_main!(kernels);
