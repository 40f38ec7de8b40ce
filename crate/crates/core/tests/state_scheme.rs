mod common;

use common::{interval_model, max_diff, MonolithicOracle};
use phasefield_core::geometry::{SpatialGrid, TimeGrid};
use phasefield_core::harness::loglog_slope;
use phasefield_core::potentials::{LatentHeat, PotentialSpec};
use phasefield_core::sensitivity::norms;
use phasefield_core::state::{
    boundedness_check, energy_diagnostic, BoundaryControl, InitialData, Model, PhysicalParams, SolverOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn converged_sweeps_reach_the_monolithic_solution() {
    let grid = SpatialGrid::interval(1.0, 5).unwrap();
    let tgrid = TimeGrid::new(0.2, 2).unwrap();
    let params = PhysicalParams::new(0.8, 1.2, 1.5, vec![1.0, 0.6]).unwrap();
    let latent = LatentHeat::LogCosh;
    let model = Model::new(grid.clone(), tgrid, params, PotentialSpec::regular(latent), None, SolverOptions::default())
        .unwrap()
        .with_options(SolverOptions { inner_sweeps: 60, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.1..0.9), rng.gen_range(1.0..3.0));
    let init = InitialData {
        theta0: grid.sample(|x| a * (c * x[0]).cos()),
        phi0: grid.sample(|x| b + 0.2 * (c * x[0]).sin()),
    };
    let vals: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u = BoundaryControl::from_fn(&grid, &tgrid, |n, k| vals[2 * n + k]);

    let staggered = model.solve_state(&u, &init).unwrap();
    let oracle = MonolithicOracle { n: 5, h: 0.25, sigma: 0.8, tau: 1.2, alpha: 1.5, m: [1.0, 0.6], latent };
    let (theta, phi) = oracle.solve(&tgrid, &init, &u);
    assert!(max_diff(&staggered.theta, &theta) < 1e-8);
    assert!(max_diff(&staggered.phi, &phi) < 1e-8);

    // The default two sweeps are close but not at the fixed point.
    let two = model.clone().with_options(SolverOptions::default()).solve_state(&u, &init).unwrap();
    assert!(max_diff(&two.phi, &phi) > 1e-12);
}

fn refinement_errors(spec: PotentialSpec) -> (Vec<f64>, Vec<f64>) {
    let grid = SpatialGrid::interval(1.0, 9).unwrap();
    let init = InitialData {
        theta0: grid.sample(|x| (2.0 * x[0]).cos()),
        phi0: grid.sample(|x| 0.3 * (3.0 * x[0]).sin()),
    };
    let solve = |steps: usize| {
        let tgrid = TimeGrid::new(0.5, steps).unwrap();
        let model = Model::new(grid.clone(), tgrid, PhysicalParams::unit(&grid), spec.clone(), None, SolverOptions::default())
            .unwrap();
        let u = BoundaryControl::from_fn(&grid, &tgrid, |n, b| 0.5 * (2.0 * tgrid.time(n) + b as f64).sin());
        (model.clone(), model.solve_state(&u, &init).unwrap())
    };
    let counts = [32usize, 64, 128, 256];
    let runs: Vec<_> = counts.iter().map(|&n| solve(n)).collect();
    let mut dts = Vec::new();
    let mut errs = Vec::new();
    for w in 0..3 {
        let (coarse_model, coarse) = &runs[w];
        let fine = &runs[w + 1].1;
        let sub = |s: &[Vec<f64>]| s.iter().step_by(2).cloned().collect::<Vec<_>>();
        let dphi = norms::difference(&coarse.phi, &sub(&fine.phi));
        let dtheta = norms::difference(&coarse.theta, &sub(&fine.theta));
        dts.push(coarse_model.tgrid().dt());
        errs.push(norms::l2_h(coarse_model, &dphi) + norms::l2_h(coarse_model, &dtheta));
    }
    (dts, errs)
}

#[test]
fn halving_the_step_is_first_order() {
    for spec in [
        PotentialSpec::regular(LatentHeat::LogCosh),
        PotentialSpec::logarithmic(2.0, LatentHeat::LogCosh).unwrap(),
    ] {
        let (dts, errs) = refinement_errors(spec);
        let slope = loglog_slope(&dts, &errs);
        assert!(slope >= 0.9, "slope {slope}, errors {errs:?}");
    }
}

#[test]
fn constant_temperature_is_preserved() {
    let c = 0.7;
    for spec in [
        PotentialSpec::regular(LatentHeat::Linear { ell: 0.0 }),
        PotentialSpec::logarithmic(2.0, LatentHeat::Linear { ell: 0.0 }).unwrap(),
    ] {
        let model = interval_model(spec, 9, 1.0, 100);
        let init = InitialData { theta0: vec![c; 9], phi0: model.grid().sample(|x| 0.4 * x[0]) };
        let u = BoundaryControl::constant(model.grid(), model.tgrid(), c);
        let traj = model.solve_state(&u, &init).unwrap();
        assert!(traj.theta.iter().flatten().all(|v| (v - c).abs() <= 1e-12));
        assert_eq!(boundedness_check(&traj, None).max_abs_theta, traj.theta.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())));
    }
}

#[test]
fn uniform_critical_point_is_preserved() {
    let model = interval_model(PotentialSpec::regular(LatentHeat::Linear { ell: 0.0 }), 9, 1.0, 100);
    let init = InitialData::constant(model.grid(), 0.0, 0.5);
    let u = BoundaryControl::zeros(model.grid(), model.tgrid());
    let traj = model.solve_state(&u, &init).unwrap();
    assert!(traj.phi.iter().flatten().all(|v| (v - 0.5).abs() <= 1e-12));
    assert!(traj.theta.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn constant_equilibrium_energy_is_flat() {
    let c = 0.7;
    let model = interval_model(PotentialSpec::regular(LatentHeat::Linear { ell: 0.0 }), 9, 1.0, 20);
    let init = InitialData::constant(model.grid(), c, 0.5);
    let u = BoundaryControl::constant(model.grid(), model.tgrid(), c);
    let traj = model.solve_state(&u, &init).unwrap();
    let e = energy_diagnostic(&model, &traj, &init, &u).unwrap();
    assert!(e.slack.iter().all(|&s| s >= -1e-12), "{:?}", e.slack);
    // Pointwise energy: 1/2 |c|^2 |Omega| + tau/2 |c|^2 |Gamma| + convex part at 1/2.
    let level = 0.5 * c * c + 0.5 * c * c * 2.0 + (0.0625 - 0.25 + 0.375);
    let dissipation_rate = c * c * 2.0;
    for (n, l) in e.lhs.iter().enumerate() {
        let t = n as f64 * 0.05;
        assert!((l - level - dissipation_rate * t).abs() < 1e-12, "{n}: {l}");
    }
}

#[test]
fn energy_slack_is_nonnegative_over_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = if seed % 2 == 0 {
            PotentialSpec::regular(LatentHeat::LogCosh)
        } else {
            PotentialSpec::logarithmic(2.0, LatentHeat::default()).unwrap()
        };
        let model = interval_model(spec, 17, 1.0, 128);
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-0.8..0.8), rng.gen_range(1.0..4.0));
        let init = InitialData {
            theta0: model.grid().sample(|x| a * (c * x[0]).cos()),
            phi0: model.grid().sample(|x| b * (c * x[0]).sin()),
        };
        let vals: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = BoundaryControl::from_fn(model.grid(), model.tgrid(), |n, k| vals[2 * n + k]);
        let traj = model.solve_state(&u, &init).unwrap();
        let e = energy_diagnostic(&model, &traj, &init, &u).unwrap();
        assert!(e.min_slack() >= -1e-8, "seed {seed}: {}", e.min_slack());
    }
}

#[test]
fn rectangle_runs_keep_trace_and_equilibria() {
    let grid = SpatialGrid::rectangle(1.0, 0.5, 5, 4).unwrap();
    let tgrid = TimeGrid::new(0.5, 10).unwrap();
    let model = Model::new(
        grid.clone(),
        tgrid,
        PhysicalParams::unit(&grid),
        PotentialSpec::regular(LatentHeat::Linear { ell: 0.0 }),
        None,
        SolverOptions::default(),
    )
    .unwrap();
    let init = InitialData::constant(&grid, -0.3, 0.5);
    let u = BoundaryControl::constant(&grid, &tgrid, -0.3);
    let traj = model.solve_state(&u, &init).unwrap();
    assert!(traj.theta.iter().flatten().all(|v| (v + 0.3).abs() <= 1e-12));
    assert!(traj.phi.iter().flatten().all(|v| (v - 0.5).abs() <= 1e-12));
    for (t, g) in traj.theta.iter().zip(&traj.theta_gamma) {
        let expect: Vec<f64> = grid.boundary_nodes().iter().map(|&i| t[i]).collect();
        assert_eq!(g, &expect);
    }
}
