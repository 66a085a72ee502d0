use dqkoop::dynamics::kdv::{forcing_profiles, initial_profiles, spatial_integral, KdvSolver};
use dqkoop::{generate_training_set, rk4_step, simulate, PlantModel};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn integrate(plant: &PlantModel, x0: &[f64], h: f64, t_end: f64) -> Vec<f64> {
    let steps = (t_end / h).round() as usize;
    let mut x = x0.to_vec();
    for _ in 0..steps {
        x = rk4_step(|x: &[f64], u: &[f64], dx: &mut [f64]| plant.vector_field(x, u, dx), &x, &[0.0], h).unwrap();
    }
    x
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn kdv_mid_amplitude(mesh: usize) -> Vec<f64> {
    let ic = initial_profiles(mesh);
    (0..mesh).map(|j| 0.5 * ic[0][j] + 0.3 * ic[1][j] + 0.2 * ic[2][j]).collect()
}

#[test]
fn rk4_is_fourth_order_on_the_nonlinear_plants() {
    for plant in [PlantModel::pendulum(), PlantModel::vdp()] {
        let x0 = [0.8, -0.3];
        let reference = integrate(&plant, &x0, 0.1 / 64.0, 1.0);
        let e1 = dist(&integrate(&plant, &x0, 0.1, 1.0), &reference);
        let e2 = dist(&integrate(&plant, &x0, 0.05, 1.0), &reference);
        let order = (e1 / e2).log2();
        assert!((3.7..4.3).contains(&order), "{}: order {order}", plant.name());
    }
}

#[test]
fn linear_plant_simulation_is_the_matrix_recurrence() {
    let a = [[0.9, 0.1], [0.0, 0.8]];
    let plant = PlantModel::linear(a.iter().map(|r| r.to_vec()).collect(), vec![vec![0.0], vec![1.0]]).unwrap();
    let inputs = DMatrix::from_fn(1, 20, |_, t| (t as f64 * 0.7).sin());
    let tr = simulate(&plant, &[1.0, -1.0], &inputs).unwrap();
    let mut x = [1.0, -1.0];
    for t in 0..20 {
        x = [a[0][0] * x[0] + a[0][1] * x[1], a[1][1] * x[1] + inputs[(0, t)]];
        assert!(dist(&x, tr.states.column(t + 1).as_slice()) < 1e-14);
    }
}

#[test]
fn training_sets_respect_their_sampling_boxes() {
    for plant in [PlantModel::pendulum(), PlantModel::vdp(), PlantModel::motor()] {
        let set = generate_training_set(&plant, 6, 50, 9).unwrap();
        assert_eq!(set.trajectories.len(), 6);
        assert_eq!(set.pair_count(), 300);
        for tr in &set.trajectories {
            assert!(tr.states.column(0).iter().all(|v| (-1.0..=1.0).contains(v)));
            let [lo, hi] = plant.training_input_bounds[0];
            assert!(tr.inputs.iter().all(|u| (lo..=hi).contains(u)));
            assert!(tr.states.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn trajectories_do_not_depend_on_how_many_are_drawn() {
    let plant = PlantModel::pendulum();
    let few = generate_training_set(&plant, 2, 30, 4).unwrap();
    let many = generate_training_set(&plant, 5, 30, 4).unwrap();
    assert_eq!(few.trajectories[..], many.trajectories[..2]);
    let other = generate_training_set(&plant, 2, 30, 5).unwrap();
    assert_ne!(few.trajectories, other.trajectories);
}

#[test]
fn kdv_training_states_are_convex_profile_mixtures() {
    let mesh = 32;
    let set = generate_training_set(&PlantModel::kdv(mesh), 4, 3, 2).unwrap();
    let ic = initial_profiles(mesh);
    for tr in &set.trajectories {
        // solve for the mixture weights on three grid points, then check all
        let x0 = tr.states.column(0);
        let m = DMatrix::from_fn(mesh, 3, |j, k| ic[k][j]);
        let w = m.clone().svd(true, true).solve(&x0.into_owned(), 1e-12).unwrap();
        assert!(w.iter().all(|v| *v >= -1e-9));
        assert!((w.sum() - 1.0).abs() < 1e-9);
        assert!((&m * &w - x0).amax() < 1e-12);
    }
}

#[test]
fn kdv_unforced_flow_conserves_mass_and_nearly_conserves_energy() {
    let solver = KdvSolver::new(128, 0.01).unwrap();
    let mut y = kdv_mid_amplitude(128);
    let (m0, e0) = (spatial_integral(&y), y.iter().map(|v| v * v).sum::<f64>());
    for _ in 0..500 {
        y = solver.step(&y, &[0.0; 3]).unwrap();
    }
    let (m1, e1) = (spatial_integral(&y), y.iter().map(|v| v * v).sum::<f64>());
    assert!((m1 - m0).abs() < 1e-10);
    assert!(((e1 - e0) / e0).abs() < 1e-4, "energy drift {}", (e1 - e0) / e0);
}

#[test]
fn kdv_commutes_with_grid_shifts() {
    let mesh = 64;
    let solver = KdvSolver::new(mesh, 0.01).unwrap();
    let y = kdv_mid_amplitude(mesh);
    let shift = |v: &[f64], s: usize| (0..v.len()).map(|j| v[(j + s) % v.len()]).collect::<Vec<_>>();
    let (mut a, mut b) = (y.clone(), shift(&y, 5));
    for _ in 0..50 {
        a = solver.step(&a, &[0.0; 3]).unwrap();
        b = solver.step(&b, &[0.0; 3]).unwrap();
    }
    assert!(dist(&shift(&a, 5), &b) < 1e-10);
}

#[test]
fn kdv_small_forcing_from_rest_superposes() {
    // from rest the response is linear in u up to the quadratic term, and
    // the mass gained is dt * sum_k u_k * integral(v_k)
    let mesh = 128;
    let dt = 1e-3;
    let solver = KdvSolver::new(mesh, dt).unwrap();
    let profiles = forcing_profiles(mesh);
    let rest = vec![0.0; mesh];
    let y = |u: [f64; 3]| solver.step(&rest, &u).unwrap();
    let (y0, y2) = (y([1.0, 0.0, 0.0]), y([0.0, 0.0, 1.0]));
    let both = y([1.0, 0.0, 1.0]);
    let sum: Vec<f64> = y0.iter().zip(&y2).map(|(a, b)| a + b).collect();
    assert!(dist(&both, &sum) < 1e-6 * dist(&sum, &rest));
    let doubled: Vec<f64> = y0.iter().map(|v| 2.0 * v).collect();
    assert!(dist(&y([2.0, 0.0, 0.0]), &doubled) < 1e-6 * dist(&doubled, &rest));
    let gained = spatial_integral(&both);
    let want = dt * (spatial_integral(&profiles[0]) + spatial_integral(&profiles[2]));
    assert!((gained - want).abs() < 1e-12);
    // each actuator acts where its profile is concentrated
    let peak = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
    assert!(peak(&y0).abs_diff(peak(&profiles[0])) <= 2);
    assert!(peak(&y2).abs_diff(peak(&profiles[2])) <= 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rk4_integrates_linear_fields_to_the_matrix_exponential_series(a in -2.0..2.0f64, h in 1e-3..0.2f64) {
        // one RK4 step of x' = a x multiplies by the 4th-order Taylor polynomial
        let x = rk4_step(|x: &[f64], _: &[f64], dx: &mut [f64]| dx[0] = a * x[0], &[1.0], &[], h).unwrap();
        let z = a * h;
        let taylor = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        prop_assert!((x[0] - taylor).abs() < 1e-14);
    }

    #[test]
    fn training_generation_is_deterministic(seed in any::<u64>()) {
        let plant = PlantModel::vdp();
        prop_assert_eq!(
            generate_training_set(&plant, 2, 20, seed).unwrap().trajectories,
            generate_training_set(&plant, 2, 20, seed).unwrap().trajectories
        );
    }
}
