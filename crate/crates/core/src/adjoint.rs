//! Backward adjoint march and the control gradient.
//!
//! The adjoint is the exact transpose of [`crate::sensitivity`]: the same
//! frozen sweep coefficients are applied in reverse order. With `mu`, `nu` the
//! multipliers of the temperature and order-parameter solves of every sweep,
//! the stored fields are `p[n] = sum(mu) / dt` and `q[n] = sum(nu) / dt` over
//! the sweeps of step `n`, and the gradient of the cost with respect to the
//! control of step `n` in `L^2(Sigma)` is exactly `alpha m p_G[n]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BoundaryField, Field};
use crate::sensitivity::{self, linearize_sweep, theta_start_operator};
use crate::state::{BoundaryControl, Model, StateTrajectory, ThetaFactors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub kappa1: f64,
    pub kappa2: f64,
    /// Target temperature at every time node.
    pub theta_q: Vec<Field>,
    pub phi_omega: Field,
}

impl CostSpec {
    pub fn new(kappa1: f64, kappa2: f64, theta_q: Vec<Field>, phi_omega: Field) -> Result<Self> {
        for (name, k) in [("kappa1", kappa1), ("kappa2", kappa2)] {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {k} must be nonnegative")));
            }
        }
        Ok(CostSpec { kappa1, kappa2, theta_q, phi_omega })
    }

    /// Constant targets.
    pub fn tracking(model: &Model, kappa1: f64, kappa2: f64, theta_q: f64, phi_omega: f64) -> Self {
        let n = model.grid().len();
        CostSpec {
            kappa1,
            kappa2,
            theta_q: vec![vec![theta_q; n]; model.tgrid().steps() + 1],
            phi_omega: vec![phi_omega; n],
        }
    }

    pub(crate) fn check(&self, model: &Model) -> Result<()> {
        let nodes = model.tgrid().steps() + 1;
        if self.theta_q.len() != nodes {
            return Err(Error::SizeMismatch { what: "temperature target", expected: nodes, found: self.theta_q.len() });
        }
        for f in &self.theta_q {
            model.grid().check_field(f)?;
        }
        model.grid().check_field(&self.phi_omega)
    }

    /// Gradient of the temperature-tracking term with respect to `theta[n]`.
    fn theta_source(&self, model: &Model, state: &StateTrajectory, n: usize) -> Field {
        let w = self.kappa1 * model.tgrid().trapezoid_weight(n);
        state.theta[n]
            .iter()
            .zip(&self.theta_q[n])
            .zip(model.mass())
            .map(|((a, b), m)| w * m * (a - b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointTrajectory {
    pub p: Vec<Field>,
    pub p_gamma: Vec<BoundaryField>,
    pub q: Vec<Field>,
}

pub fn solve_adjoint(model: &Model, state: &StateTrajectory, cost: &CostSpec) -> Result<AdjointTrajectory> {
    cost.check(model)?;
    let grid = model.grid();
    let n_nodes = grid.len();
    let steps = model.tgrid().steps();
    let dt_step = model.tgrid().dt();
    let mut factors = ThetaFactors::default();

    let mut p = vec![vec![0.0; n_nodes]; steps + 1];
    let mut q = vec![vec![0.0; n_nodes]; steps + 1];
    q[steps] = state.phi[steps].iter().zip(&cost.phi_omega).map(|(a, b)| cost.kappa2 * (a - b)).collect();

    let mut bar_theta = cost.theta_source(model, state, steps);
    let mut bar_phi: Field = q[steps].iter().zip(model.mass()).map(|(v, m)| m * v).collect();

    for n in (0..steps).rev() {
        let mut mu_sum = vec![0.0; n_nodes];
        let mut nu_sum = vec![0.0; n_nodes];
        for sub in state.steps[n].substeps.iter().rev() {
            let sweeps = sub.sweeps.len();
            // Adjoint accumulators for each sweep's outputs and the substep start.
            let mut bar_theta_k = vec![vec![0.0; n_nodes]; sweeps];
            let mut bar_phi_k = vec![vec![0.0; n_nodes]; sweeps];
            bar_theta_k[sweeps - 1] = bar_theta;
            bar_phi_k[sweeps - 1] = bar_phi;
            let mut bar_theta_s = vec![0.0; n_nodes];
            let mut bar_phi_s = vec![0.0; n_nodes];
            for k in (0..sweeps).rev() {
                let lin = linearize_sweep(model, sub, k)?;
                let mu = factors.get(model, sub.dt)?.solve(&bar_theta_k[k]);
                let back = theta_start_operator(model, sub.dt, &mu);
                for i in 0..n_nodes {
                    bar_theta_s[i] += back[i];
                    bar_phi_k[k][i] -= lin.coupling[i] * mu[i];
                    bar_phi_s[i] += lin.coupling_start[i] * mu[i];
                    mu_sum[i] += mu[i];
                }
                let nu = lin.jacobian.solve(&bar_phi_k[k]);
                for i in 0..n_nodes {
                    bar_phi_s[i] += lin.start_phi[i] * nu[i];
                    nu_sum[i] += nu[i];
                }
                let target = if k == 0 { &mut bar_theta_s } else { &mut bar_theta_k[k - 1] };
                for i in 0..n_nodes {
                    target[i] += lin.source_theta[i] * nu[i];
                }
            }
            bar_theta = bar_theta_s;
            bar_phi = bar_phi_s;
        }
        p[n] = mu_sum.iter().map(|v| v / dt_step).collect();
        q[n] = nu_sum.iter().map(|v| v / dt_step).collect();
        if n > 0 {
            let src = cost.theta_source(model, state, n);
            for (b, s) in bar_theta.iter_mut().zip(src) {
                *b += s;
            }
        }
    }
    let p_gamma = p.iter().map(|f| geometry::trace(grid, f)).collect::<Result<Vec<_>>>()?;
    Ok(AdjointTrajectory { p, p_gamma, q })
}

/// Riesz representative of the cost derivative in `L^2(Sigma)`:
/// `g[n][b] = alpha m[b] p_G[n][b]` for each control step `n`.
pub fn gradient(model: &Model, adjoint: &AdjointTrajectory) -> BoundaryControl {
    let p = model.params();
    let steps = model.tgrid().steps();
    let values = adjoint.p_gamma[..steps]
        .iter()
        .map(|row| row.iter().zip(&p.m).map(|(pg, m)| p.alpha * m * pg).collect())
        .collect();
    BoundaryControl::new(values).expect("gradient values are finite")
}

/// `|<g, h> - DJ[h]| / max(1, |<g, h>|)` with `DJ[h]` from the linearized solver.
pub fn duality_gap(model: &Model, state: &StateTrajectory, cost: &CostSpec, h: &BoundaryControl) -> Result<f64> {
    let adj = solve_adjoint(model, state, cost)?;
    let g = gradient(model, &adj);
    let gh = g.inner(h, model.grid(), model.tgrid());
    let sens = sensitivity::solve_linearized(model, state, h)?;
    let dj = sensitivity::directional_cost_derivative(model, state, &sens, cost);
    Ok((gh - dj).abs() / gh.abs().max(1.0))
}
