//! Tracking cost, control box, projected-gradient descent and the pointwise
//! certificate of first-order optimality.

use serde::{Deserialize, Serialize};

use crate::adjoint::{self, AdjointTrajectory, CostSpec};
use crate::error::{Error, Result};
use crate::geometry::{self, Field};
use crate::state::{BoundaryControl, InitialData, Model, StateTrajectory};

/// `J = kappa1/2 int_Q |theta - theta_Q|^2 + kappa2/2 int_Omega |phi(T) - phi_Omega|^2`,
/// trapezoid in time.
pub fn evaluate_cost(model: &Model, state: &StateTrajectory, cost: &CostSpec) -> Result<f64> {
    cost.check(model)?;
    let mass = model.mass();
    let tgrid = model.tgrid();
    let steps = tgrid.steps();
    let mut j = 0.0;
    if cost.kappa1 != 0.0 {
        for n in 0..=steps {
            let d: Field = state.theta[n].iter().zip(&cost.theta_q[n]).map(|(a, b)| a - b).collect();
            j += 0.5 * cost.kappa1 * tgrid.trapezoid_weight(n) * geometry::weighted_dot(mass, &d, &d);
        }
    }
    if cost.kappa2 != 0.0 {
        let d: Field = state.phi[steps].iter().zip(&cost.phi_omega).map(|(a, b)| a - b).collect();
        j += 0.5 * cost.kappa2 * geometry::weighted_dot(mass, &d, &d);
    }
    Ok(j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: BoundaryControl,
    pub upper: BoundaryControl,
}

impl ControlBounds {
    pub fn new(lower: BoundaryControl, upper: BoundaryControl) -> Result<Self> {
        if lower.steps() != upper.steps() {
            return Err(Error::InvalidBounds("lower and upper bounds differ in size".into()));
        }
        for (n, (lo, hi)) in lower.values().iter().zip(upper.values()).enumerate() {
            if lo.len() != hi.len() {
                return Err(Error::InvalidBounds("lower and upper bounds differ in size".into()));
            }
            if let Some(b) = (0..lo.len()).find(|&b| lo[b] > hi[b]) {
                return Err(Error::InvalidBounds(format!(
                    "u_min = {} exceeds u_max = {} at step {n}, boundary node {b}",
                    lo[b], hi[b]
                )));
            }
        }
        Ok(ControlBounds { lower, upper })
    }

    pub fn constant(model: &Model, lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            BoundaryControl::constant(model.grid(), model.tgrid(), lower),
            BoundaryControl::constant(model.grid(), model.tgrid(), upper),
        )
    }

    pub fn midpoint(&self) -> BoundaryControl {
        self.lower.zip_map(&self.upper, |a, b| 0.5 * (a + b))
    }

    pub fn contains(&self, u: &BoundaryControl) -> bool {
        u.values()
            .iter()
            .zip(self.lower.values().iter().zip(self.upper.values()))
            .all(|(row, (lo, hi))| row.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v >= a && v <= b))
    }
}

/// Nodewise clamp onto the box.
pub fn project(u: &BoundaryControl, bounds: &ControlBounds) -> Result<BoundaryControl> {
    if u.steps() != bounds.lower.steps() || u.values().iter().zip(bounds.lower.values()).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::SizeMismatch { what: "control vs bounds", expected: bounds.lower.steps(), found: u.steps() });
    }
    let values = u
        .values()
        .iter()
        .zip(bounds.lower.values().iter().zip(bounds.upper.values()))
        .map(|(row, (lo, hi))| {
            row.iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&a, &b))| {
                    if a > b {
                        Err(Error::InvalidBounds(format!("u_min = {a} exceeds u_max = {b}")))
                    } else {
                        Ok(v.clamp(a, b))
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    BoundaryControl::new(values)
}

/// Model, initial data and cost: everything needed to evaluate `J(u)` and
/// its gradient.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub model: Model,
    pub init: InitialData,
    pub cost: CostSpec,
}

/// Cost, gradient and the solutions they came from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub state: StateTrajectory,
    pub adjoint: AdjointTrajectory,
    pub gradient: BoundaryControl,
}

impl ControlProblem {
    pub fn new(model: Model, init: InitialData, cost: CostSpec) -> Result<Self> {
        cost.check(&model)?;
        Ok(ControlProblem { model, init, cost })
    }

    pub fn state(&self, u: &BoundaryControl) -> Result<StateTrajectory> {
        self.model.solve_state(u, &self.init)
    }

    pub fn cost(&self, u: &BoundaryControl) -> Result<f64> {
        evaluate_cost(&self.model, &self.state(u)?, &self.cost)
    }

    pub fn evaluate(&self, u: &BoundaryControl) -> Result<Evaluation> {
        let state = self.state(u)?;
        let cost = evaluate_cost(&self.model, &state, &self.cost)?;
        let adjoint = adjoint::solve_adjoint(&self.model, &state, &self.cost)?;
        let gradient = adjoint::gradient(&self.model, &adjoint);
        Ok(Evaluation { cost, state, adjoint, gradient })
    }

    fn norm(&self, u: &BoundaryControl) -> f64 {
        u.norm(self.model.grid(), self.model.tgrid())
    }

    /// `|u - P(u - g)|_{L^2(Sigma)}`.
    pub fn stationarity_residual(&self, u: &BoundaryControl, g: &BoundaryControl, bounds: &ControlBounds) -> Result<f64> {
        let moved = project(&u.add_scaled(g, -1.0), bounds)?;
        Ok(self.norm(&u.add_scaled(&moved, -1.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub s0: f64,
    pub armijo_c1: f64,
    pub backtrack_ratio: f64,
    pub backtrack_budget: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { max_iter: 200, tol: 1e-6, s0: 1.0, armijo_c1: 1e-4, backtrack_ratio: 0.5, backtrack_budget: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub lower: Vec<Vec<bool>>,
    pub upper: Vec<Vec<bool>>,
    pub free: Vec<Vec<bool>>,
}

impl ActiveSets {
    pub fn of(u: &BoundaryControl, bounds: &ControlBounds) -> Self {
        let mask = |f: &dyn Fn(f64, f64, f64) -> bool| -> Vec<Vec<bool>> {
            u.values()
                .iter()
                .zip(bounds.lower.values().iter().zip(bounds.upper.values()))
                .map(|(row, (lo, hi))| row.iter().zip(lo.iter().zip(hi)).map(|(&v, (&a, &b))| f(v, a, b)).collect())
                .collect()
        };
        ActiveSets {
            lower: mask(&|v, a, _| v == a),
            upper: mask(&|v, a, b| v == b && a != b),
            free: mask(&|v, a, b| v > a && v < b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    /// Accepted steps.
    pub iterations: usize,
    /// State solves, including rejected line-search trials.
    pub evaluations: usize,
    pub cost_history: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub termination: Termination,
    pub control: BoundaryControl,
    pub active: ActiveSets,
    pub certification: CertificationReport,
}

impl OptimizeReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("cost history is never empty")
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("residual history is never empty")
    }
}

/// Projected gradient with a backtracking Armijo rule along the projection arc:
/// accept `u+ = P(u - s g)` once `J(u+) <= J(u) - c1 / s |u+ - u|^2`.
pub fn projected_gradient(
    problem: &ControlProblem,
    u0: &BoundaryControl,
    bounds: &ControlBounds,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    if !(opts.s0 > 0.0 && opts.backtrack_ratio > 0.0 && opts.backtrack_ratio < 1.0 && opts.tol >= 0.0) {
        return Err(Error::InvalidParameter("step, backtrack ratio or tolerance out of range".into()));
    }
    let mut u = project(u0, bounds)?;
    let mut eval = problem.evaluate(&u)?;
    let mut evaluations = 1;
    let mut residual = problem.stationarity_residual(&u, &eval.gradient, bounds)?;
    let mut report = OptimizeReport {
        iterations: 0,
        evaluations: 0,
        cost_history: vec![eval.cost],
        residual_history: vec![residual],
        step_history: Vec::new(),
        termination: Termination::MaxIterations,
        control: u.clone(),
        active: ActiveSets::of(&u, bounds),
        certification: CertificationReport::default(),
    };
    loop {
        if residual <= opts.tol {
            report.termination = Termination::Converged;
            break;
        }
        if report.iterations >= opts.max_iter {
            report.termination = Termination::MaxIterations;
            break;
        }
        let mut s = opts.s0;
        let mut accepted = None;
        for _ in 0..opts.backtrack_budget {
            let trial = project(&u.add_scaled(&eval.gradient, -s), bounds)?;
            let moved = problem.norm(&trial.add_scaled(&u, -1.0));
            evaluations += 1;
            match problem.cost(&trial) {
                Ok(j) if j <= eval.cost - opts.armijo_c1 / s * moved * moved => {
                    accepted = Some(trial);
                    break;
                }
                Ok(_) | Err(Error::NewtonNonconvergence { .. } | Error::InvariantRegion { .. }) => {
                    s *= opts.backtrack_ratio;
                }
                Err(e) => return Err(e),
            }
        }
        let Some(trial) = accepted else {
            report.termination = Termination::LineSearchFailed;
            break;
        };
        u = trial;
        eval = problem.evaluate(&u)?;
        evaluations += 1;
        residual = problem.stationarity_residual(&u, &eval.gradient, bounds)?;
        report.iterations += 1;
        report.cost_history.push(eval.cost);
        report.residual_history.push(residual);
        report.step_history.push(s);
    }
    report.evaluations = evaluations;
    report.active = ActiveSets::of(&u, bounds);
    report.certification = check_optimality(&problem.model, &u, &eval.adjoint, bounds, None)?;
    report.control = u;
    Ok(report)
}

/// Outcome of the pointwise sign test on `s = m p_G`:
/// `s < -tol` demands `u = u_max`, `s > tol` demands `u = u_min`,
/// `|s| <= tol` leaves `u` free.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub tol_sign: f64,
    pub pairs: usize,
    pub satisfied: usize,
    pub satisfied_fraction: f64,
    /// `int_Sigma max_{y in [u_min, u_max]} -m p_G (y - u)`.
    pub normal_cone_residual: f64,
    /// `(step, boundary slot)` of every failed clause.
    pub violations: Vec<(usize, usize)>,
    pub at_lower: usize,
    pub at_upper: usize,
    pub free: usize,
}

/// Certifies the pointwise optimality condition at `u` from its adjoint.
/// `tol_sign` defaults to `1e-8 (1 + max |m p_G|)`.
pub fn check_optimality(
    model: &Model,
    u: &BoundaryControl,
    adjoint: &AdjointTrajectory,
    bounds: &ControlBounds,
    tol_sign: Option<f64>,
) -> Result<CertificationReport> {
    let grid = model.grid();
    let m = &model.params().m;
    let steps = model.tgrid().steps();
    let dt = model.tgrid().dt();
    if u.steps() != steps || adjoint.p_gamma.len() < steps {
        return Err(Error::SizeMismatch { what: "control steps", expected: steps, found: u.steps() });
    }
    let sign = |n: usize, b: usize| m[b] * adjoint.p_gamma[n][b];
    let smax = (0..steps)
        .flat_map(|n| (0..grid.boundary_len()).map(move |b| (n, b)))
        .map(|(n, b)| sign(n, b).abs())
        .fold(0.0, f64::max);
    let tol = tol_sign.unwrap_or(1e-8 * (1.0 + smax));
    let mut rep = CertificationReport { tol_sign: tol, ..Default::default() };
    for n in 0..steps {
        for b in 0..grid.boundary_len() {
            let s = sign(n, b);
            let v = u.step(n)[b];
            let lo = bounds.lower.step(n)[b];
            let hi = bounds.upper.step(n)[b];
            let ok = if s < -tol {
                rep.at_upper += 1;
                (v - hi).abs() <= tol
            } else if s > tol {
                rep.at_lower += 1;
                (v - lo).abs() <= tol
            } else {
                rep.free += 1;
                true
            };
            rep.pairs += 1;
            if ok {
                rep.satisfied += 1;
            } else {
                rep.violations.push((n, b));
            }
            let worst = (-s * (lo - v)).max(-s * (hi - v)).max(0.0);
            rep.normal_cone_residual += dt * grid.boundary_weights()[b] * worst;
        }
    }
    rep.satisfied_fraction = if rep.pairs == 0 { 1.0 } else { rep.satisfied as f64 / rep.pairs as f64 };
    Ok(rep)
}
