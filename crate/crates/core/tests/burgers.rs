use std::f64::consts::PI;

use mufno::burgers::{
    build_dataset, load_dataset, sample_grf, save_dataset, solve_burgers, BurgersConfig, BurgersSolver,
    GrfConfig,
};
use mufno::numerics::{Grid1D, SeededRng};
use mufno::Error;

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let nb: f64 = b.iter().map(|y| y * y).sum();
    (d / nb).sqrt()
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn mean(u: &[f64]) -> f64 {
    u.iter().sum::<f64>() / u.len() as f64
}

#[test]
fn diffusion_matches_heat_kernel() {
    let n = 256;
    let u0: Vec<f64> = (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).sin()).collect();
    let solver = BurgersSolver::new(0.1, 1.0, 100).unwrap().diffusion_only();
    let u = solver.solve(&u0).unwrap();
    let decay = (-4.0 * PI * PI * 0.1f64).exp();
    let exact: Vec<f64> = u0.iter().map(|v| decay * v).collect();
    assert!(rel_l2(&u, &exact) < 1e-6);

    // several modes decay independently
    let u0: Vec<f64> = (0..n)
        .map(|j| {
            let x = j as f64 / n as f64;
            (2.0 * PI * x).cos() + 0.5 * (6.0 * PI * x).sin()
        })
        .collect();
    let u = BurgersSolver::new(0.01, 0.5, 7).unwrap().diffusion_only().solve(&u0).unwrap();
    let exact: Vec<f64> = (0..n)
        .map(|j| {
            let x = j as f64 / n as f64;
            let d = |k: f64| (-0.01 * (2.0 * PI * k).powi(2) * 0.5).exp();
            d(1.0) * (2.0 * PI * x).cos() + 0.5 * d(3.0) * (6.0 * PI * x).sin()
        })
        .collect();
    assert!(rel_l2(&u, &exact) < 1e-6);
}

#[test]
fn mean_is_conserved_and_energy_decays() {
    let grid = Grid1D::unit(512).unwrap();
    let grf = GrfConfig::default();
    let base = SeededRng::new(77);
    for i in 0..100 {
        let mut u0 = sample_grf(&grf, &grid, &mut base.derive(i));
        let offset = if i % 2 == 0 { 0.0 } else { 0.3 };
        let e0 = norm(&u0);
        u0.iter_mut().for_each(|v| *v += offset);
        let u = solve_burgers(&u0, 0.1, 1.0, 400).unwrap();
        assert!((mean(&u) - mean(&u0)).abs() < 1e-10, "sample {i}");
        if offset == 0.0 {
            assert!(norm(&u) <= e0 * (1.0 + 1e-9), "sample {i}: {} > {e0}", norm(&u));
        }
    }
}

#[test]
fn time_step_self_convergence() {
    let grid = Grid1D::unit(1024).unwrap();
    let u0 = sample_grf(&GrfConfig::default(), &grid, &mut SeededRng::new(5));
    let b = solve_burgers(&u0, 0.1, 1.0, 1000).unwrap();
    let c = solve_burgers(&u0, 0.1, 1.0, 2000).unwrap();
    let change = rel_l2(&b, &c);
    assert!(change < 1e-8, "halving dt at 1000 steps changed the solution by {change:e}");

    // fourth order on a smooth, mildly stiff case
    let n = 256;
    let u0: Vec<f64> = (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).sin()).collect();
    let solve = |steps| solve_burgers(&u0, 0.1, 1.0, steps).unwrap();
    let (a, b, c) = (solve(50), solve(100), solve(200));
    let order = (rel_l2(&a, &b) / rel_l2(&b, &c)).log2();
    assert!(order >= 3.8, "observed order {order}");
}

#[test]
fn coarse_solve_matches_downsampled_fine_solve() {
    let fine_grid = Grid1D::unit(1024).unwrap();
    for seed in 0..5 {
        let u0 = sample_grf(&GrfConfig::default(), &fine_grid, &mut SeededRng::new(seed));
        let fine = solve_burgers(&u0, 0.1, 1.0, 500).unwrap();
        let u0_coarse: Vec<f64> = u0.iter().step_by(4).copied().collect();
        let coarse = solve_burgers(&u0_coarse, 0.1, 1.0, 500).unwrap();
        let down: Vec<f64> = fine.iter().step_by(4).copied().collect();
        let err = rel_l2(&coarse, &down);
        assert!(err < 0.02, "seed {seed}: {err}");
    }
}

#[test]
fn field_variance_matches_spectral_sum() {
    let grid = Grid1D::unit(64).unwrap();
    let grf = GrfConfig::default();
    let base = SeededRng::new(2024);
    let samples = 10_000;
    let mut sum_sq = 0.0;
    for i in 0..samples {
        let u = sample_grf(&grf, &grid, &mut base.derive(i));
        sum_sq += u[17] * u[17];
    }
    let empirical = sum_sq / samples as f64;
    let predicted = grf.pointwise_variance(64);
    assert!(
        (empirical / predicted - 1.0).abs() < 0.03,
        "{empirical} vs {predicted}"
    );
}

#[test]
fn desk_dataset_smoke() {
    let config = BurgersConfig {
        grid_n_solver: 2048,
        grid_n_train: 256,
        steps: 500,
        n_train: 100,
        n_eval: 25,
        seed: 3,
        ..BurgersConfig::default()
    };
    let splits = build_dataset(&config).unwrap();
    assert_eq!(splits.train.inputs.shape(), [100, 256, 1]);
    assert_eq!(splits.eval.inputs.shape(), [25, 256, 1]);
    for ds in [&splits.train, &splits.eval] {
        assert!(ds.inputs.data().iter().chain(ds.targets.data()).all(|v| v.is_finite()));
        for b in 0..ds.len() {
            let (u0, u1) = (ds.inputs.sample(b), ds.targets.sample(b));
            assert!(norm(u1) <= norm(u0) * (1.0 + 1e-9));
            assert!(mean(u1).abs() < 1e-10);
        }
    }
    let again = build_dataset(&config).unwrap();
    assert_eq!(again, splits);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.fnod");
    save_dataset(&splits.train, &path).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded.inputs, splits.train.inputs);
    assert_eq!(loaded.targets, splits.train.targets);
    assert_eq!(loaded.grid, splits.train.grid);
}

#[test]
fn full_scale_shapes() {
    // full sample counts and resolution on a cheap solver grid
    let config = BurgersConfig {
        grid_n_solver: 1024,
        steps: 300,
        ..BurgersConfig::default()
    };
    let splits = build_dataset(&config).unwrap();
    assert_eq!(splits.train.inputs.shape(), [800, 1024, 1]);
    assert_eq!(splits.eval.targets.shape(), [200, 1024, 1]);
}

#[test]
fn divergence_names_sample() {
    // a huge amplitude passes nothing: the step check rejects it per sample
    let config = BurgersConfig {
        grid_n_solver: 256,
        grid_n_train: 64,
        steps: 2,
        n_train: 3,
        n_eval: 1,
        grf: GrfConfig {
            sigma: GrfConfig::default().sigma * 100.0,
            ..GrfConfig::default()
        },
        ..BurgersConfig::default()
    };
    match build_dataset(&config) {
        Err(Error::SolverDiverged { sample: Some(_), .. }) => {}
        other => panic!("{other:?}"),
    }
}
