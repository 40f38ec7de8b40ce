#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use phasefield_core::geometry::{SpatialGrid, TimeGrid};
use phasefield_core::potentials::{LatentHeat, PotentialSpec};
use phasefield_core::state::{BoundaryControl, InitialData, Model, PhysicalParams, SolverOptions};

pub fn interval_model(spec: PotentialSpec, nodes: usize, horizon: f64, steps: usize) -> Model {
    let grid = SpatialGrid::interval(1.0, nodes).unwrap();
    let tgrid = TimeGrid::new(horizon, steps).unwrap();
    Model::new(grid.clone(), tgrid, PhysicalParams::unit(&grid), spec, None, SolverOptions::default()).unwrap()
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Fully coupled implicit Euler step for the regular quartic potential on a
/// uniform interval, solved by dense Newton on `(phi, theta)` jointly.
///
/// Matrices are assembled from scratch: lumped mass `h diag(1/2, 1, .., 1/2)`,
/// stiffness `(1/h) tridiag(-1, 2, -1)` with natural end rows, and unit
/// boundary mass at both ends.
pub struct MonolithicOracle {
    pub n: usize,
    pub h: f64,
    pub sigma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub m: [f64; 2],
    pub latent: LatentHeat,
}

impl MonolithicOracle {
    fn mass(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| if i == 0 || i == self.n - 1 { 0.5 * self.h } else { self.h })
    }

    fn stiffness(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut k = DMatrix::zeros(n, n);
        for e in 0..n - 1 {
            let w = 1.0 / self.h;
            k[(e, e)] += w;
            k[(e + 1, e + 1)] += w;
            k[(e, e + 1)] -= w;
            k[(e + 1, e)] -= w;
        }
        k
    }

    fn boundary(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| if i == 0 || i == self.n - 1 { 1.0 } else { 0.0 })
    }

    /// One step from `(theta_n, phi_n)` with boundary control `u = (u_left, u_right)`.
    pub fn step(&self, dt: f64, theta_n: &[f64], phi_n: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mass = self.mass();
        let k = self.stiffness();
        let b = self.boundary();
        let beta = |r: f64| 4.0 * r * r * r - 6.0 * r * r + 3.0 * r;
        let beta_p = |r: f64| 3.0 * (2.0 * r - 1.0) * (2.0 * r - 1.0);
        let pi = |r: f64| -r;
        let lam = |r: f64| self.latent.lambda(r);
        let lam_p = |r: f64| self.latent.lambda_prime(r);
        let mu = DVector::from_fn(n, |i, _| {
            if i == 0 {
                self.m[0] * u[0]
            } else if i == n - 1 {
                self.m[1] * u[1]
            } else {
                0.0
            }
        });
        let a_theta = DMatrix::from_diagonal(&(&mass / dt)) + &k + DMatrix::from_diagonal(&(&b * (self.tau / dt + self.alpha)));

        let mut phi = DVector::from_column_slice(phi_n);
        let mut theta = DVector::from_column_slice(theta_n);
        let phin = DVector::from_column_slice(phi_n);
        let thetan = DVector::from_column_slice(theta_n);
        for _ in 0..100 {
            let mut f = DVector::zeros(2 * n);
            let kphi = &k * &phi;
            let atheta = &a_theta * &theta;
            for i in 0..n {
                f[i] = mass[i] * (phi[i] - phin[i]) / dt
                    + self.sigma * kphi[i]
                    + mass[i] * (beta(phi[i]) + pi(phin[i]) - theta[i] * lam(phin[i]));
                f[n + i] = atheta[i] - mass[i] * thetan[i] / dt - self.tau / dt * b[i] * thetan[i] - self.alpha * b[i] * mu[i]
                    + mass[i] * lam(phi[i]) * (phi[i] - phin[i]) / dt;
            }
            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                for j in 0..n {
                    jac[(i, j)] = self.sigma * k[(i, j)];
                    jac[(n + i, n + j)] = a_theta[(i, j)];
                }
                jac[(i, i)] += mass[i] / dt + mass[i] * beta_p(phi[i]);
                jac[(i, n + i)] = -mass[i] * lam(phin[i]);
                jac[(n + i, i)] = mass[i] * (lam_p(phi[i]) * (phi[i] - phin[i]) + lam(phi[i])) / dt;
            }
            let dz = jac.lu().solve(&f).expect("nonsingular monolithic Jacobian");
            for i in 0..n {
                phi[i] -= dz[i];
                theta[i] -= dz[n + i];
            }
            if dz.amax() < 1e-15 {
                break;
            }
        }
        (theta.iter().copied().collect(), phi.iter().copied().collect())
    }

    pub fn solve(&self, tgrid: &TimeGrid, init: &InitialData, u: &BoundaryControl) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut theta = vec![init.theta0.clone()];
        let mut phi = vec![init.phi0.clone()];
        for k in 0..tgrid.steps() {
            let (t, p) = self.step(tgrid.dt(), &theta[k], &phi[k], u.step(k));
            theta.push(t);
            phi.push(p);
        }
        (theta, phi)
    }
}
