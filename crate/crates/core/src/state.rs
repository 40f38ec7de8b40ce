//! Forward solver for the phase-field system with the dynamic boundary
//! condition on the temperature.
//!
//! One time step of length `dt` runs `K` staggered sweeps. Sweep `k` first
//! solves the order-parameter equation
//!
//! ```text
//!     M (phi - phi_n) / dt + sigma K phi + M (beta(phi) + pi(phi_n) - theta_src lambda(phi_n)) = 0
//! ```
//!
//! by damped Newton (`theta_src` is `theta_n` on the first sweep and the
//! previous sweep's temperature afterwards), then the linear temperature system
//!
//! ```text
//!     M (theta - theta_n) / dt + K theta + M lambda(phi) (phi - phi_n) / dt
//!         + B (tau (theta - theta_n) / dt + alpha (theta - m u_n)) = 0
//! ```
//!
//! with `M`, `B` the lumped domain and boundary masses and `K` the stiffness
//! matrix. Every intermediate sweep is recorded so that the linearized and
//! adjoint solvers can differentiate the exact same map.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BoundaryField, Field, SpatialGrid, TimeGrid};
use crate::linalg::{max_abs, BandedCholesky, BandedSym};
use crate::potentials::{Nonlinearity, PotentialSpec, Regularization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub sigma: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Control aperture on the boundary nodes.
    pub m: BoundaryField,
}

impl PhysicalParams {
    pub fn new(sigma: f64, tau: f64, alpha: f64, m: BoundaryField) -> Result<Self> {
        for (name, v) in [("sigma", sigma), ("tau", tau), ("alpha", alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if let Some(v) = m.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("aperture value {v} must be nonnegative")));
        }
        Ok(PhysicalParams { sigma, tau, alpha, m })
    }

    /// Unit coefficients and `m = 1` on the whole boundary.
    pub fn unit(grid: &SpatialGrid) -> Self {
        PhysicalParams { sigma: 1.0, tau: 1.0, alpha: 1.0, m: vec![1.0; grid.boundary_len()] }
    }
}

/// Boundary control, constant on each time step: `values[n]` acts on
/// `(t_n, t_{n+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryControl {
    values: Vec<BoundaryField>,
}

impl BoundaryControl {
    pub fn new(values: Vec<BoundaryField>) -> Result<Self> {
        let width = values.first().map_or(0, Vec::len);
        if values.iter().any(|row| row.len() != width) {
            return Err(Error::InvalidParameter("control rows have different lengths".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("control values must be finite".into()));
        }
        Ok(BoundaryControl { values })
    }

    pub fn constant(grid: &SpatialGrid, tgrid: &TimeGrid, value: f64) -> Self {
        BoundaryControl { values: vec![vec![value; grid.boundary_len()]; tgrid.steps()] }
    }

    pub fn zeros(grid: &SpatialGrid, tgrid: &TimeGrid) -> Self {
        Self::constant(grid, tgrid, 0.0)
    }

    pub fn from_fn(grid: &SpatialGrid, tgrid: &TimeGrid, f: impl Fn(usize, usize) -> f64) -> Self {
        BoundaryControl {
            values: (0..tgrid.steps()).map(|n| (0..grid.boundary_len()).map(|b| f(n, b)).collect()).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn values(&self) -> &[BoundaryField] {
        &self.values
    }

    pub fn into_values(self) -> Vec<BoundaryField> {
        self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.values.iter().flatten()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        BoundaryControl { values: self.values.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        BoundaryControl {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    /// `L^2(Sigma)` inner product of piecewise-constant controls.
    pub fn inner(&self, other: &Self, grid: &SpatialGrid, tgrid: &TimeGrid) -> f64 {
        let dt = tgrid.dt();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| dt * geometry::weighted_dot(grid.boundary_weights(), a, b))
            .sum()
    }

    pub fn norm(&self, grid: &SpatialGrid, tgrid: &TimeGrid) -> f64 {
        self.inner(self, grid, tgrid).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check(&self, grid: &SpatialGrid, tgrid: &TimeGrid) -> Result<()> {
        if self.values.len() != tgrid.steps() {
            return Err(Error::SizeMismatch { what: "control steps", expected: tgrid.steps(), found: self.values.len() });
        }
        for row in &self.values {
            grid.check_boundary(row)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub theta0: Field,
    pub phi0: Field,
}

impl InitialData {
    pub fn constant(grid: &SpatialGrid, theta: f64, phi: f64) -> Self {
        InitialData { theta0: vec![theta; grid.len()], phi0: vec![phi; grid.len()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Staggered coupling sweeps per time step.
    pub inner_sweeps: usize,
    /// Newton stops once the update is below `newton_tol * (1 + |phi|_inf)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Distance kept from the ends of a bounded potential domain.
    pub guard_margin: f64,
    /// Number of times a failing step may be split in half.
    pub retry_budget: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { inner_sweeps: 2, newton_tol: 1e-12, newton_max_iter: 50, guard_margin: 1e-9, retry_budget: 5 }
    }
}

/// One coupling sweep of a substep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub phi: Field,
    pub theta: Field,
    pub newton_iterations: usize,
    pub newton_residual: f64,
}

/// A time step, or a piece of one after step halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substep {
    pub dt: f64,
    pub theta_start: Field,
    pub phi_start: Field,
    pub sweeps: Vec<Sweep>,
}

impl Substep {
    pub fn end(&self) -> &Sweep {
        self.sweeps.last().expect("substep without sweeps")
    }

    /// Temperature fed to the order-parameter equation of sweep `k`.
    pub fn theta_source(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.theta_start
        } else {
            &self.sweeps[k - 1].theta
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub substeps: Vec<Substep>,
    /// Substeps discarded because Newton failed or hit the domain guard.
    pub rejections: usize,
    pub guard_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub theta: Vec<Field>,
    pub theta_gamma: Vec<BoundaryField>,
    pub phi: Vec<Field>,
    pub xi: Vec<Field>,
    pub steps: Vec<StepRecord>,
}

impl StateTrajectory {
    pub fn time_nodes(&self) -> usize {
        self.theta.len()
    }

    pub fn guard_hits(&self) -> usize {
        self.steps.iter().map(|s| s.guard_hits).sum()
    }

    pub fn rejections(&self) -> usize {
        self.steps.iter().map(|s| s.rejections).sum()
    }

    pub fn newton_iterations(&self) -> Vec<usize> {
        self.steps
            .iter()
            .map(|s| s.substeps.iter().flat_map(|sub| &sub.sweeps).map(|w| w.newton_iterations).sum())
            .collect()
    }

    pub fn max_newton_residual(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| &s.substeps)
            .flat_map(|sub| &sub.sweeps)
            .fold(0.0, |m, w| m.max(w.newton_residual))
    }
}

/// Cached Cholesky factors of the temperature matrix, keyed by step length.
#[derive(Debug, Default)]
pub(crate) struct ThetaFactors {
    cache: HashMap<u64, BandedCholesky>,
}

impl ThetaFactors {
    pub(crate) fn get(&mut self, model: &Model, dt: f64) -> Result<&BandedCholesky> {
        use std::collections::hash_map::Entry;
        match self.cache.entry(dt.to_bits()) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => Ok(e.insert(model.theta_matrix(dt).cholesky()?)),
        }
    }
}

/// Everything that defines the discrete control-to-state map except the
/// control and the initial data.
#[derive(Debug, Clone)]
pub struct Model {
    grid: SpatialGrid,
    tgrid: TimeGrid,
    params: PhysicalParams,
    potential: PotentialSpec,
    regularization: Option<Regularization>,
    options: SolverOptions,
    stiffness: BandedSym,
    /// Boundary weights spread onto the full node vector (zero inside).
    boundary_mass: Field,
    /// Aperture spread onto the full node vector.
    aperture: Field,
}

impl Model {
    pub fn new(
        grid: SpatialGrid,
        tgrid: TimeGrid,
        params: PhysicalParams,
        potential: PotentialSpec,
        regularization: Option<Regularization>,
        options: SolverOptions,
    ) -> Result<Self> {
        grid.check_boundary(&params.m)?;
        if options.inner_sweeps == 0 {
            return Err(Error::InvalidParameter("at least one inner sweep is required".into()));
        }
        let stiffness = grid.stiffness();
        let boundary_mass = geometry::embed(&grid, grid.boundary_weights())?;
        let aperture = geometry::embed(&grid, &params.m)?;
        Ok(Model { grid, tgrid, params, potential, regularization, options, stiffness, boundary_mass, aperture })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }
    pub fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }
    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }
    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }
    pub fn regularization(&self) -> Option<Regularization> {
        self.regularization
    }
    pub fn options(&self) -> &SolverOptions {
        &self.options
    }
    pub fn stiffness(&self) -> &BandedSym {
        &self.stiffness
    }
    pub fn mass(&self) -> &[f64] {
        self.grid.interior_weights()
    }
    pub fn boundary_mass(&self) -> &[f64] {
        &self.boundary_mass
    }
    pub fn aperture(&self) -> &[f64] {
        &self.aperture
    }

    pub fn nonlinearity(&self) -> Nonlinearity<'_> {
        Nonlinearity::new(&self.potential, self.regularization)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_regularization(mut self, regularization: Option<Regularization>) -> Self {
        self.regularization = regularization;
        self
    }

    pub fn with_tgrid(mut self, tgrid: TimeGrid) -> Self {
        self.tgrid = tgrid;
        self
    }

    /// `M/dt + K + (tau/dt + alpha) B`.
    pub fn theta_matrix(&self, dt: f64) -> BandedSym {
        let mut a = self.stiffness.clone();
        let p = &self.params;
        let diag: Vec<f64> = self
            .mass()
            .iter()
            .zip(&self.boundary_mass)
            .map(|(m, b)| m / dt + (p.tau / dt + p.alpha) * b)
            .collect();
        a.add_diagonal(&diag);
        a
    }

    /// Jacobian of the order-parameter residual: `M/dt + sigma K + M diag(beta'(phi))`.
    pub fn phi_jacobian(&self, dt: f64, phi: &[f64]) -> Result<BandedSym> {
        let nl = self.nonlinearity();
        let mut a = self.stiffness.scaled(self.params.sigma);
        let diag = self
            .mass()
            .iter()
            .zip(phi)
            .map(|(m, &p)| Ok(m * (1.0 / dt + nl.beta_pair(p)?.1)))
            .collect::<Result<Vec<f64>>>()?;
        a.add_diagonal(&diag);
        Ok(a)
    }

    /// Order-parameter residual in weak (mass-weighted) form.
    pub fn phi_residual(&self, dt: f64, phi: &[f64], phi_start: &[f64], theta_src: &[f64]) -> Result<Field> {
        let nl = self.nonlinearity();
        let mut r = self.stiffness.matvec(phi);
        for i in 0..r.len() {
            let ps = phi_start[i];
            let local = (phi[i] - ps) / dt + nl.beta(phi[i])? + nl.pi(ps) - theta_src[i] * nl.lambda(ps);
            r[i] = self.params.sigma * r[i] + self.mass()[i] * local;
        }
        Ok(r)
    }

    /// Right-hand side of the temperature system for one sweep.
    pub fn theta_rhs(&self, dt: f64, theta_start: &[f64], phi: &[f64], phi_start: &[f64], control: &[f64]) -> Field {
        let nl = self.nonlinearity();
        let p = &self.params;
        let u = geometry::embed(&self.grid, control).expect("control sized to boundary");
        (0..self.grid.len())
            .map(|i| {
                let m = self.mass()[i];
                let b = self.boundary_mass[i];
                m * theta_start[i] / dt + b * (p.tau * theta_start[i] / dt + p.alpha * self.aperture[i] * u[i])
                    - m * nl.lambda(phi[i]) * (phi[i] - phi_start[i]) / dt
            })
            .collect()
    }

    fn check_init(&self, init: &InitialData) -> Result<()> {
        self.grid.check_field(&init.theta0)?;
        self.grid.check_field(&init.phi0)?;
        if init.theta0.iter().chain(&init.phi0).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("initial data must be finite".into()));
        }
        if let Some((lo, hi)) = self.nonlinearity().guard(self.options.guard_margin) {
            if let Some(&v) = init.phi0.iter().find(|&&v| !(v > lo && v < hi)) {
                let (dlo, dhi) = self.potential.domain();
                return Err(Error::OutsideDomain { value: v, lo: dlo, hi: dhi });
            }
        }
        Ok(())
    }

    /// Runs the forward solver.
    pub fn solve_state(&self, control: &BoundaryControl, init: &InitialData) -> Result<StateTrajectory> {
        control.check(&self.grid, &self.tgrid)?;
        self.check_init(init)?;
        let nl = self.nonlinearity();
        let mut factors = ThetaFactors::default();
        let steps = self.tgrid.steps();
        let mut theta = Vec::with_capacity(steps + 1);
        let mut phi = Vec::with_capacity(steps + 1);
        let mut records = Vec::with_capacity(steps);
        theta.push(init.theta0.clone());
        phi.push(init.phi0.clone());
        for n in 0..steps {
            let mut record = StepRecord { substeps: Vec::new(), rejections: 0, guard_hits: 0 };
            self.advance(
                n,
                &theta[n],
                &phi[n],
                control.step(n),
                self.tgrid.dt(),
                0,
                &mut factors,
                &mut record,
            )?;
            let end = record.substeps.last().expect("advance produces a substep").end();
            theta.push(end.theta.clone());
            phi.push(end.phi.clone());
            records.push(record);
        }
        let theta_gamma = theta
            .iter()
            .map(|t| geometry::trace(&self.grid, t))
            .collect::<Result<Vec<_>>>()?;
        let xi = phi
            .iter()
            .map(|p| p.iter().map(|&v| nl.beta(v)).collect::<Result<Field>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(StateTrajectory { theta, theta_gamma, phi, xi, steps: records })
    }

    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        step: usize,
        theta_start: &[f64],
        phi_start: &[f64],
        control: &[f64],
        dt: f64,
        depth: usize,
        factors: &mut ThetaFactors,
        record: &mut StepRecord,
    ) -> Result<()> {
        match self.substep(step, theta_start, phi_start, control, dt, factors) {
            Ok(sub) => {
                record.substeps.push(sub);
                Ok(())
            }
            Err(e @ (Error::NewtonNonconvergence { .. } | Error::InvariantRegion { .. }))
                if depth < self.options.retry_budget =>
            {
                record.rejections += 1;
                if matches!(e, Error::InvariantRegion { .. }) {
                    record.guard_hits += 1;
                }
                let half = 0.5 * dt;
                self.advance(step, theta_start, phi_start, control, half, depth + 1, factors, record)?;
                let mid = record.substeps.last().expect("first half recorded").end().clone();
                self.advance(step, &mid.theta, &mid.phi, control, half, depth + 1, factors, record)
            }
            Err(e) => Err(e),
        }
    }

    fn substep(
        &self,
        step: usize,
        theta_start: &[f64],
        phi_start: &[f64],
        control: &[f64],
        dt: f64,
        factors: &mut ThetaFactors,
    ) -> Result<Substep> {
        let mut sub = Substep {
            dt,
            theta_start: theta_start.to_vec(),
            phi_start: phi_start.to_vec(),
            sweeps: Vec::with_capacity(self.options.inner_sweeps),
        };
        for k in 0..self.options.inner_sweeps {
            let guess = if k == 0 { phi_start } else { &sub.sweeps[k - 1].phi };
            let (phi, iterations, residual) =
                self.newton_phi(step, dt, guess.to_vec(), phi_start, sub.theta_source(k))?;
            let rhs = self.theta_rhs(dt, theta_start, &phi, phi_start, control);
            let theta = factors.get(self, dt)?.solve(&rhs);
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::LinearSolve(format!("non-finite temperature at step {step}")));
            }
            sub.sweeps.push(Sweep { phi, theta, newton_iterations: iterations, newton_residual: residual });
        }
        Ok(sub)
    }

    fn scaled_norm(&self, r: &[f64]) -> f64 {
        r.iter().zip(self.mass()).fold(0.0, |m, (x, w)| m.max((x / w).abs()))
    }

    /// Damped Newton for the order-parameter equation. Returns the solution,
    /// the iteration count and the final residual (divided by the lumped mass).
    fn newton_phi(
        &self,
        step: usize,
        dt: f64,
        mut phi: Field,
        phi_start: &[f64],
        theta_src: &[f64],
    ) -> Result<(Field, usize, f64)> {
        let guard = self.nonlinearity().guard(self.options.guard_margin);
        let clamp = |v: f64| match guard {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        };
        let mut res = self.phi_residual(dt, &phi, phi_start, theta_src)?;
        let mut norm = self.scaled_norm(&res);
        let mut iterations = 0;
        let mut converged = norm == 0.0;
        while !converged && iterations < self.options.newton_max_iter {
            iterations += 1;
            let jac = self.phi_jacobian(dt, &phi)?;
            let mut delta: Field = res.iter().map(|r| -r).collect();
            jac.cholesky()?.solve_in_place(&mut delta);
            let small = max_abs(&delta) <= self.options.newton_tol * (1.0 + max_abs(&phi));
            let mut t = 1.0;
            loop {
                let cand: Field = phi.iter().zip(&delta).map(|(p, d)| clamp(p + t * d)).collect();
                let cres = self.phi_residual(dt, &cand, phi_start, theta_src)?;
                let cnorm = self.scaled_norm(&cres);
                if small || cnorm < norm || cnorm == 0.0 {
                    phi = cand;
                    res = cres;
                    norm = cnorm;
                    break;
                }
                t *= 0.5;
                if t < 1e-10 {
                    return Err(Error::NewtonNonconvergence { step, residual: norm });
                }
            }
            converged = small || norm == 0.0;
        }
        if !converged {
            return Err(Error::NewtonNonconvergence { step, residual: norm });
        }
        if let Some((lo, hi)) = guard {
            if phi.iter().any(|&v| v <= lo || v >= hi) {
                return Err(Error::InvariantRegion { step });
            }
        }
        Ok((phi, iterations, norm))
    }
}

/// Convenience wrapper building a [`Model`] with default solver options.
#[allow(clippy::too_many_arguments)]
pub fn solve_state(
    grid: &SpatialGrid,
    tgrid: &TimeGrid,
    params: &PhysicalParams,
    potential: &PotentialSpec,
    regularization: Option<Regularization>,
    control: &BoundaryControl,
    init: &InitialData,
) -> Result<StateTrajectory> {
    Model::new(
        grid.clone(),
        *tgrid,
        params.clone(),
        potential.clone(),
        regularization,
        SolverOptions::default(),
    )?
    .solve_state(control, init)
}

/// Largest entry of the discrete weak-form residual, per time step.
///
/// Step endpoints are read from the public trajectory fields, so a
/// perturbation of any stored value shows up in the residual of the step(s)
/// it belongs to.
pub fn weak_form_residual(
    model: &Model,
    traj: &StateTrajectory,
    control: &BoundaryControl,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(traj.steps.len());
    for (n, record) in traj.steps.iter().enumerate() {
        let count = record.substeps.len();
        let mut worst = 0.0f64;
        for (s, sub) in record.substeps.iter().enumerate() {
            let (theta_start, phi_start) = if s == 0 {
                (traj.theta[n].as_slice(), traj.phi[n].as_slice())
            } else {
                (sub.theta_start.as_slice(), sub.phi_start.as_slice())
            };
            let sweeps = sub.sweeps.len();
            for k in 0..sweeps {
                let last = s + 1 == count && k + 1 == sweeps;
                let (theta, phi) = if last {
                    (traj.theta[n + 1].as_slice(), traj.phi[n + 1].as_slice())
                } else {
                    (sub.sweeps[k].theta.as_slice(), sub.sweeps[k].phi.as_slice())
                };
                let theta_src = if k == 0 { theta_start } else { sub.sweeps[k - 1].theta.as_slice() };
                let rphi = model.phi_residual(sub.dt, phi, phi_start, theta_src)?;
                let rhs = model.theta_rhs(sub.dt, theta_start, phi, phi_start, control.step(n));
                let lhs = model.theta_matrix(sub.dt).matvec(theta);
                worst = worst.max(max_abs(&rphi));
                worst = lhs.iter().zip(&rhs).fold(worst, |m, (a, b)| m.max((a - b).abs()));
            }
        }
        out.push(worst);
    }
    Ok(out)
}

/// Discrete version of the basic energy balance, evaluated at every time node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub slack: Vec<f64>,
}

impl EnergyReport {
    pub fn min_slack(&self) -> f64 {
        self.slack.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Left side: `1/2 |theta|^2 + int |grad theta|^2 + tau/2 |theta_G|^2
/// + alpha int |theta_G|^2 + int |d_t phi|^2 + sigma/2 |grad phi|^2 + int B(phi)`;
/// right side: the same quantities at `t = 0` plus the control work
/// `alpha int m u theta_G` and `-int pi(phi) d_t phi`.
pub fn energy_diagnostic(
    model: &Model,
    traj: &StateTrajectory,
    init: &InitialData,
    control: &BoundaryControl,
) -> Result<EnergyReport> {
    let nl = model.nonlinearity();
    let p = model.params();
    let mass = model.mass();
    let bmass = model.boundary_mass();
    let k = model.stiffness();
    let quad = |a: &[f64]| geometry::weighted_dot(mass, a, a);
    let bquad = |a: &[f64]| geometry::weighted_dot(bmass, a, a);
    let kquad = |a: &[f64]| geometry::dot(a, &k.matvec(a));
    let convex = |phi: &[f64]| -> Result<f64> {
        phi.iter().zip(mass).map(|(&v, w)| Ok(w * nl.beta_hat(v)?)).sum()
    };
    let pointwise = |theta: &[f64], phi: &[f64]| -> Result<f64> {
        Ok(0.5 * quad(theta) + 0.5 * p.tau * bquad(theta) + 0.5 * p.sigma * kquad(phi) + convex(phi)?)
    };

    let rhs0 = pointwise(&init.theta0, &init.phi0)?;
    let mut lhs = vec![rhs0];
    let mut rhs = vec![rhs0];
    let mut dissipation = 0.0;
    let mut work = 0.0;
    for (n, record) in traj.steps.iter().enumerate() {
        let u = geometry::embed(model.grid(), control.step(n))?;
        for sub in &record.substeps {
            let end = sub.end();
            let dt = sub.dt;
            let dphi: Field = end.phi.iter().zip(&sub.phi_start).map(|(a, b)| (a - b) / dt).collect();
            dissipation += dt * (kquad(&end.theta) + p.alpha * bquad(&end.theta) + quad(&dphi));
            let control_work: f64 = (0..u.len()).map(|i| bmass[i] * model.aperture()[i] * u[i] * end.theta[i]).sum();
            let pi_work: f64 = (0..u.len()).map(|i| mass[i] * nl.pi(sub.phi_start[i]) * dphi[i]).sum();
            work += dt * (p.alpha * control_work - pi_work);
        }
        lhs.push(pointwise(&traj.theta[n + 1], &traj.phi[n + 1])? + dissipation);
        rhs.push(rhs0 + work);
    }
    let slack = rhs.iter().zip(&lhs).map(|(r, l)| r - l).collect();
    Ok(EnergyReport { lhs, rhs, slack })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub max_abs_theta: f64,
    pub min_phi: f64,
    pub max_phi: f64,
    pub max_abs_xi: f64,
    /// Whether `phi` stays strictly inside the supplied interval, if any.
    pub contained: Option<bool>,
}

pub fn boundedness_check(traj: &StateTrajectory, bounds: Option<(f64, f64)>) -> BoundednessReport {
    let max_abs_theta = traj.theta.iter().map(|f| max_abs(f)).fold(0.0, f64::max);
    let max_abs_xi = traj.xi.iter().map(|f| max_abs(f)).fold(0.0, f64::max);
    let min_phi = traj.phi.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let max_phi = traj.phi.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let contained = bounds.map(|(lo, hi)| min_phi > lo && max_phi < hi);
    BoundednessReport { max_abs_theta, min_phi, max_phi, max_abs_xi, contained }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::LatentHeat;

    fn model(potential: PotentialSpec, steps: usize) -> Model {
        let grid = SpatialGrid::interval(1.0, 9).unwrap();
        let tgrid = TimeGrid::new(1.0, steps).unwrap();
        let params = PhysicalParams::unit(&grid);
        Model::new(grid, tgrid, params, potential, None, SolverOptions::default()).unwrap()
    }

    #[test]
    fn zero_data_is_an_exact_fixed_point() {
        let reg = PotentialSpec::regular(LatentHeat::default());
        let log = PotentialSpec::logarithmic(2.0, LatentHeat::LogCosh).unwrap();
        for spec in [reg, log] {
            let m = model(spec, 6);
            let init = InitialData::constant(m.grid(), 0.0, 0.0);
            let u = BoundaryControl::zeros(m.grid(), m.tgrid());
            let traj = m.solve_state(&u, &init).unwrap();
            for n in 0..=6 {
                assert!(traj.theta[n].iter().chain(&traj.phi[n]).chain(&traj.xi[n]).all(|&v| v == 0.0));
            }
            assert!(weak_form_residual(&m, &traj, &u).unwrap().iter().all(|&r| r == 0.0));
            let e = energy_diagnostic(&m, &traj, &init, &u).unwrap();
            assert!(e.lhs.iter().chain(&e.rhs).all(|&v| v == 0.0));
            let b = boundedness_check(&traj, None);
            assert_eq!((b.max_abs_theta, b.min_phi, b.max_phi, b.max_abs_xi), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn trace_and_xi_identities() {
        let m = model(PotentialSpec::logarithmic(2.0, LatentHeat::default()).unwrap(), 5);
        let init = InitialData {
            theta0: m.grid().sample(|x| (3.0 * x[0]).sin()),
            phi0: m.grid().sample(|x| 0.4 * (2.0 * x[0]).cos()),
        };
        let u = BoundaryControl::from_fn(m.grid(), m.tgrid(), |n, b| 0.3 * n as f64 - 0.5 * b as f64);
        let traj = m.solve_state(&u, &init).unwrap();
        for n in 0..traj.time_nodes() {
            assert_eq!(traj.theta_gamma[n], geometry::trace(m.grid(), &traj.theta[n]).unwrap());
            for (x, p) in traj.xi[n].iter().zip(&traj.phi[n]) {
                assert_eq!(*x, m.potential().beta(*p).unwrap());
            }
        }
        let res = weak_form_residual(&m, &traj, &u).unwrap();
        assert!(res.iter().all(|&r| r <= 1e-8), "{res:?}");
    }

    #[test]
    fn residual_detects_a_perturbed_node() {
        let m = model(PotentialSpec::regular(LatentHeat::default()), 4);
        let init = InitialData { theta0: m.grid().sample(|x| x[0]), phi0: m.grid().sample(|x| 0.2 * x[0]) };
        let u = BoundaryControl::constant(m.grid(), m.tgrid(), 0.5);
        let mut traj = m.solve_state(&u, &init).unwrap();
        traj.theta[2][4] += 1e-3;
        let res = weak_form_residual(&m, &traj, &u).unwrap();
        assert!(res[1] > 1e-6 && res[2] > 1e-6, "{res:?}");
        assert!(res[0] < 1e-8 && res[3] < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(PotentialSpec::logarithmic(2.0, LatentHeat::default()).unwrap(), 3);
        let u = BoundaryControl::zeros(m.grid(), m.tgrid());
        let bad = InitialData::constant(m.grid(), 0.0, 1.0);
        assert!(matches!(m.solve_state(&u, &bad), Err(Error::OutsideDomain { .. })));
        let short = BoundaryControl::new(vec![vec![0.0, 0.0]]).unwrap();
        let ok = InitialData::constant(m.grid(), 0.0, 0.0);
        assert!(matches!(m.solve_state(&short, &ok), Err(Error::SizeMismatch { .. })));
        assert!(PhysicalParams::new(1.0, 0.0, 1.0, vec![1.0, 1.0]).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, vec![-1.0, 1.0]).is_err());
    }

    #[test]
    fn boundedness_guard_containment() {
        let m = model(PotentialSpec::logarithmic(2.0, LatentHeat::default()).unwrap(), 8);
        let init = InitialData { theta0: vec![2.0; 9], phi0: m.grid().sample(|x| 0.9 * (x[0] - 0.5)) };
        let u = BoundaryControl::constant(m.grid(), m.tgrid(), 3.0);
        let traj = m.solve_state(&u, &init).unwrap();
        let b = boundedness_check(&traj, Some((-1.0, 1.0)));
        assert_eq!(b.contained, Some(true));
        assert!(b.min_phi > -1.0 && b.max_phi < 1.0);
    }
}
