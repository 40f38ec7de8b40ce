//! Exact directional derivative of the discrete control-to-state map.
//!
//! Each substep of the forward scheme is differentiated as it was computed:
//! the Newton solve of sweep `k` is differentiated through the implicit
//! function theorem, the temperature solve is linear already. The result is
//! the Fréchet derivative of the discrete solver, and [`crate::adjoint`]
//! applies the transpose of the very same coefficients.

use serde::{Deserialize, Serialize};

use crate::adjoint::CostSpec;
use crate::error::Result;
use crate::geometry::{self, BoundaryField, Field};
use crate::linalg::BandedCholesky;
use crate::state::{BoundaryControl, Model, StateTrajectory, Substep, ThetaFactors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTrajectory {
    pub theta: Vec<Field>,
    pub theta_gamma: Vec<BoundaryField>,
    pub phi: Vec<Field>,
}

/// Frozen coefficients of the linearization of one sweep.
///
/// With `ds`, `dt_src` the perturbations of the substep start and of the
/// temperature source, the sweep's tangent reads
///
/// ```text
///     J_k dphi   = start_phi .* dphi_s + source_theta .* dtheta_src
///     A dtheta   = (M/dt + tau/dt B) dtheta_s + alpha B m h
///                  - coupling .* dphi + coupling_start .* dphi_s
/// ```
pub(crate) struct SweepLinearization {
    pub jacobian: BandedCholesky,
    pub start_phi: Field,
    pub source_theta: Field,
    pub coupling: Field,
    pub coupling_start: Field,
}

pub(crate) fn linearize_sweep(model: &Model, sub: &Substep, k: usize) -> Result<SweepLinearization> {
    let nl = model.nonlinearity();
    let dt = sub.dt;
    let sweep = &sub.sweeps[k];
    let theta_src = sub.theta_source(k);
    let mass = model.mass();
    let n = mass.len();
    let mut start_phi = Vec::with_capacity(n);
    let mut source_theta = Vec::with_capacity(n);
    let mut coupling = Vec::with_capacity(n);
    let mut coupling_start = Vec::with_capacity(n);
    for i in 0..n {
        let ps = sub.phi_start[i];
        let p = sweep.phi[i];
        let m = mass[i];
        start_phi.push(m * (1.0 / dt - nl.pi_prime(ps) + theta_src[i] * nl.lambda_prime(ps)));
        source_theta.push(m * nl.lambda(ps));
        coupling.push(m / dt * (nl.lambda_prime(p) * (p - ps) + nl.lambda(p)));
        coupling_start.push(m / dt * nl.lambda(p));
    }
    Ok(SweepLinearization {
        jacobian: model.phi_jacobian(dt, &sweep.phi)?.cholesky()?,
        start_phi,
        source_theta,
        coupling,
        coupling_start,
    })
}

/// `(M/dt + tau/dt B) v`.
pub(crate) fn theta_start_operator(model: &Model, dt: f64, v: &[f64]) -> Field {
    let tau = model.params().tau;
    model
        .mass()
        .iter()
        .zip(model.boundary_mass())
        .zip(v)
        .map(|((m, b), x)| (m + tau * b) / dt * x)
        .collect()
}

/// Solves the linearized system along direction `h`.
pub fn solve_linearized(model: &Model, state: &StateTrajectory, h: &BoundaryControl) -> Result<SensitivityTrajectory> {
    h.check(model.grid(), model.tgrid())?;
    let grid = model.grid();
    let alpha = model.params().alpha;
    let n_nodes = grid.len();
    let mut factors = ThetaFactors::default();
    let mut theta = vec![vec![0.0; n_nodes]];
    let mut phi = vec![vec![0.0; n_nodes]];
    for (n, record) in state.steps.iter().enumerate() {
        let hn = geometry::embed(grid, h.step(n))?;
        let forcing: Field = (0..n_nodes)
            .map(|i| alpha * model.boundary_mass()[i] * model.aperture()[i] * hn[i])
            .collect();
        let mut d_theta_s = theta[n].clone();
        let mut d_phi_s = phi[n].clone();
        for sub in &record.substeps {
            let mut prev_theta = d_theta_s.clone();
            let mut d_phi = d_phi_s.clone();
            for k in 0..sub.sweeps.len() {
                let lin = linearize_sweep(model, sub, k)?;
                let src = if k == 0 { &d_theta_s } else { &prev_theta };
                let mut rhs: Field = (0..n_nodes)
                    .map(|i| lin.start_phi[i] * d_phi_s[i] + lin.source_theta[i] * src[i])
                    .collect();
                lin.jacobian.solve_in_place(&mut rhs);
                d_phi = rhs;
                let base = theta_start_operator(model, sub.dt, &d_theta_s);
                let mut rhs: Field = (0..n_nodes)
                    .map(|i| {
                        base[i] + forcing[i] - lin.coupling[i] * d_phi[i] + lin.coupling_start[i] * d_phi_s[i]
                    })
                    .collect();
                factors.get(model, sub.dt)?.solve_in_place(&mut rhs);
                prev_theta = rhs;
            }
            d_theta_s = prev_theta;
            d_phi_s = d_phi;
        }
        theta.push(d_theta_s);
        phi.push(d_phi_s);
    }
    let theta_gamma = theta.iter().map(|t| geometry::trace(grid, t)).collect::<Result<Vec<_>>>()?;
    Ok(SensitivityTrajectory { theta, theta_gamma, phi })
}

/// `kappa1 int_Q (theta - theta_Q) Theta + kappa2 int_Omega (phi(T) - phi_Omega) Phi(T)`
/// with the same quadrature as the cost functional.
pub fn directional_cost_derivative(
    model: &Model,
    state: &StateTrajectory,
    sens: &SensitivityTrajectory,
    cost: &CostSpec,
) -> f64 {
    let mass = model.mass();
    let tgrid = model.tgrid();
    let steps = tgrid.steps();
    let mut acc = 0.0;
    if cost.kappa1 != 0.0 {
        for n in 0..=steps {
            let diff: Field = state.theta[n].iter().zip(&cost.theta_q[n]).map(|(a, b)| a - b).collect();
            acc += cost.kappa1 * tgrid.trapezoid_weight(n) * geometry::weighted_dot(mass, &diff, &sens.theta[n]);
        }
    }
    if cost.kappa2 != 0.0 {
        let diff: Field = state.phi[steps].iter().zip(&cost.phi_omega).map(|(a, b)| a - b).collect();
        acc += cost.kappa2 * geometry::weighted_dot(mass, &diff, &sens.phi[steps]);
    }
    acc
}

/// Discrete norms mirroring the function spaces of the state and of the
/// linearized problem. All time integrals use the trapezoid rule.
pub mod norms {
    use crate::geometry::{self, Field};
    use crate::state::Model;

    /// `|v|_H^2 = v^T M v`.
    pub fn h_sq(model: &Model, v: &[f64]) -> f64 {
        geometry::weighted_dot(model.mass(), v, v)
    }

    /// `|v|_V^2 = v^T M v + v^T K v`.
    pub fn v_sq(model: &Model, v: &[f64]) -> f64 {
        h_sq(model, v) + geometry::dot(v, &model.stiffness().matvec(v))
    }

    pub fn boundary_sq(model: &Model, v: &[f64]) -> f64 {
        geometry::weighted_dot(model.grid().boundary_weights(), v, v)
    }

    fn l2_time(model: &Model, series: &[Field], f: impl Fn(&[f64]) -> f64) -> f64 {
        let t = model.tgrid();
        series.iter().enumerate().map(|(n, v)| t.trapezoid_weight(n) * f(v)).sum::<f64>().sqrt()
    }

    fn sup_time(series: &[Field], f: impl Fn(&[f64]) -> f64) -> f64 {
        series.iter().map(|v| f(v).sqrt()).fold(0.0, f64::max)
    }

    pub fn l2_h(model: &Model, series: &[Field]) -> f64 {
        l2_time(model, series, |v| h_sq(model, v))
    }
    pub fn l2_v(model: &Model, series: &[Field]) -> f64 {
        l2_time(model, series, |v| v_sq(model, v))
    }
    pub fn l2_boundary(model: &Model, series: &[Field]) -> f64 {
        l2_time(model, series, |v| boundary_sq(model, v))
    }
    pub fn linf_h(model: &Model, series: &[Field]) -> f64 {
        sup_time(series, |v| h_sq(model, v))
    }
    pub fn linf_v(model: &Model, series: &[Field]) -> f64 {
        sup_time(series, |v| v_sq(model, v))
    }

    /// `|v|_{H^1(0,T;H)}` with forward differences for the time derivative.
    pub fn h1_h(model: &Model, series: &[Field]) -> f64 {
        let dt = model.tgrid().dt();
        let deriv: f64 = series
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) / dt).collect();
                dt * h_sq(model, &d)
            })
            .sum();
        (l2_h(model, series).powi(2) + deriv).sqrt()
    }

    /// Norm of the linearized solution: `|Theta|_{L2(Q)} + |1*Theta|_{Linf(V)}
    /// + |Theta_G|_{L2(Sigma)} + |Phi|_{C(H) ∩ L2(V)}`.
    pub fn sensitivity_norm(model: &Model, theta: &[Field], theta_gamma: &[Field], phi: &[Field]) -> f64 {
        let conv = geometry::convolve_time_field(model.tgrid(), theta);
        l2_h(model, theta)
            + linf_v(model, &conv)
            + l2_boundary(model, theta_gamma)
            + linf_h(model, phi)
            + l2_v(model, phi)
    }

    /// Composite norm of a state difference used by the continuous-dependence
    /// probe: `|theta|_{Linf(H)} + |1*theta|_{Linf(V)} + |theta_G|_{L2(Sigma)}
    /// + |phi|_{H1(H) ∩ Linf(V)}`.
    pub fn state_difference_norm(model: &Model, theta: &[Field], theta_gamma: &[Field], phi: &[Field]) -> f64 {
        let conv = geometry::convolve_time_field(model.tgrid(), theta);
        linf_h(model, theta) + linf_v(model, &conv) + l2_boundary(model, theta_gamma) + h1_h(model, phi) + linf_v(model, phi)
    }

    pub fn difference(a: &[Field], b: &[Field]) -> Vec<Field> {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
    }
}

impl SensitivityTrajectory {
    pub fn norm(&self, model: &Model) -> f64 {
        norms::sensitivity_norm(model, &self.theta, &self.theta_gamma, &self.phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SpatialGrid, TimeGrid};
    use crate::potentials::{LatentHeat, PotentialSpec};
    use crate::state::{InitialData, PhysicalParams, SolverOptions};

    fn setup() -> (Model, InitialData, BoundaryControl) {
        let grid = SpatialGrid::interval(1.0, 7).unwrap();
        let tgrid = TimeGrid::new(0.5, 5).unwrap();
        let params = PhysicalParams::new(0.7, 1.3, 2.0, vec![1.0, 0.5]).unwrap();
        let spec = PotentialSpec::regular(LatentHeat::LogCosh);
        let model = Model::new(grid, tgrid, params, spec, None, SolverOptions::default()).unwrap();
        let init = InitialData {
            theta0: model.grid().sample(|x| (2.0 * x[0]).cos()),
            phi0: model.grid().sample(|x| 0.3 + 0.2 * x[0]),
        };
        let u = BoundaryControl::from_fn(model.grid(), model.tgrid(), |n, b| 0.2 * n as f64 - 0.4 * b as f64);
        (model, init, u)
    }

    #[test]
    fn zero_direction_gives_zero_sensitivity() {
        let (model, init, u) = setup();
        let state = model.solve_state(&u, &init).unwrap();
        let h = BoundaryControl::zeros(model.grid(), model.tgrid());
        let s = solve_linearized(&model, &state, &h).unwrap();
        assert!(s.theta.iter().chain(&s.phi).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_the_direction() {
        let (model, init, u) = setup();
        let state = model.solve_state(&u, &init).unwrap();
        let h1 = BoundaryControl::from_fn(model.grid(), model.tgrid(), |n, b| ((n + 2 * b) as f64).sin());
        let h2 = BoundaryControl::from_fn(model.grid(), model.tgrid(), |n, b| ((3 * n + b) as f64).cos());
        let s1 = solve_linearized(&model, &state, &h1).unwrap();
        let s2 = solve_linearized(&model, &state, &h2).unwrap();
        let s12 = solve_linearized(&model, &state, &h1.add_scaled(&h2, 1.0)).unwrap();
        let sdouble = solve_linearized(&model, &state, &h1.map(|v| 2.0 * v)).unwrap();
        for n in 0..s1.theta.len() {
            for i in 0..s1.theta[n].len() {
                assert!((s12.theta[n][i] - s1.theta[n][i] - s2.theta[n][i]).abs() < 1e-12);
                assert!((s12.phi[n][i] - s1.phi[n][i] - s2.phi[n][i]).abs() < 1e-12);
                assert!((sdouble.theta[n][i] - 2.0 * s1.theta[n][i]).abs() < 1e-12);
                assert!((sdouble.phi[n][i] - 2.0 * s1.phi[n][i]).abs() < 1e-12);
            }
            assert_eq!(s1.theta_gamma[n], geometry::trace(model.grid(), &s1.theta[n]).unwrap());
        }
    }

    #[test]
    fn cost_derivative_vanishes_without_weights_or_sensitivity() {
        let (model, init, u) = setup();
        let state = model.solve_state(&u, &init).unwrap();
        let h = BoundaryControl::constant(model.grid(), model.tgrid(), 1.0);
        let s = solve_linearized(&model, &state, &h).unwrap();
        let zero_cost = CostSpec::tracking(&model, 0.0, 0.0, 1.0, 0.5);
        assert_eq!(directional_cost_derivative(&model, &state, &s, &zero_cost), 0.0);
        let cost = CostSpec::tracking(&model, 1.0, 1.0, 1.0, 0.5);
        let zero = solve_linearized(&model, &state, &BoundaryControl::zeros(model.grid(), model.tgrid())).unwrap();
        assert_eq!(directional_cost_derivative(&model, &state, &zero, &cost), 0.0);
    }
}
