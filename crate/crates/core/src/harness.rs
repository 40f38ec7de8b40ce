//! Experiment drivers: gradient checks, Yosida ε-sweeps, continuous
//! dependence probes and boundedness audits.
//!
//! Every report is a deterministic function of the [`Instance`] and its seed.
//! Independent probes run on the rayon pool and are collected by index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{self, CostSpec};
use crate::error::{Error, Result};
use crate::geometry::{Field, SpatialGrid};
use crate::optimize::{ControlBounds, ControlProblem};
use crate::potentials::Regularization;
use crate::sensitivity::{self, norms};
use crate::state::{self, BoundaryControl, InitialData, Model, StateTrajectory};

/// A fully specified control problem plus the base control at which probes
/// are taken.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: Model,
    pub init: InitialData,
    pub control: BoundaryControl,
    pub cost: CostSpec,
    pub bounds: ControlBounds,
    pub seed: u64,
}

fn smooth_field(grid: &SpatialGrid, rng: &mut ChaCha8Rng, offset: f64, amplitude: f64) -> Field {
    let lengths = grid.lengths().to_vec();
    let modes: Vec<(f64, f64, f64)> = lengths
        .iter()
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(1.0..3.0), rng.gen_range(0.0..std::f64::consts::PI)))
        .collect();
    let axes = lengths.len() as f64;
    grid.sample(|x| {
        let wave: f64 = x
            .iter()
            .zip(&lengths)
            .zip(&modes)
            .map(|((xi, l), (c, k, s))| c * (k * std::f64::consts::PI * xi / l + s).cos())
            .sum();
        offset + amplitude * wave / axes
    })
}

fn random_control(model: &Model, bounds: &ControlBounds, rng: &mut ChaCha8Rng) -> BoundaryControl {
    let t: Vec<Vec<f64>> = (0..model.tgrid().steps())
        .map(|_| (0..model.grid().boundary_len()).map(|_| rng.gen_range(0.0..=1.0)).collect())
        .collect();
    BoundaryControl::from_fn(model.grid(), model.tgrid(), |n, b| {
        let lo = bounds.lower.step(n)[b];
        let hi = bounds.upper.step(n)[b];
        lo + t[n][b] * (hi - lo)
    })
}

fn random_direction(model: &Model, rng: &mut ChaCha8Rng) -> BoundaryControl {
    let v: Vec<Vec<f64>> = (0..model.tgrid().steps())
        .map(|_| (0..model.grid().boundary_len()).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    BoundaryControl::new(v).expect("finite direction")
}

impl Instance {
    pub fn new(
        model: Model,
        init: InitialData,
        control: BoundaryControl,
        cost: CostSpec,
        bounds: ControlBounds,
        seed: u64,
    ) -> Result<Self> {
        ControlProblem::new(model.clone(), init.clone(), cost.clone())?;
        Ok(Instance { model, init, control, cost, bounds, seed })
    }

    /// Random smooth initial data and targets, a random control inside the box
    /// `[-1, 1]`, and `kappa1 = kappa2 = 1`. Order-parameter data stay well
    /// inside the domain of a singular potential.
    pub fn seeded(model: Model, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = model.grid().clone();
        let (offset, amp) = if model.potential().is_singular() { (0.0, 0.6) } else { (0.5, 0.5) };
        let init = InitialData {
            theta0: smooth_field(&grid, &mut rng, 0.0, 1.0),
            phi0: smooth_field(&grid, &mut rng, offset, amp),
        };
        let bounds = ControlBounds::constant(&model, -1.0, 1.0)?;
        let control = random_control(&model, &bounds, &mut rng);
        let steps = model.tgrid().steps();
        let target = smooth_field(&grid, &mut rng, 0.0, 0.5);
        let theta_q = (0..=steps).map(|n| target.iter().map(|v| v * (1.0 - 0.5 * n as f64 / steps as f64)).collect()).collect();
        let phi_omega = smooth_field(&grid, &mut rng, offset, amp);
        let cost = CostSpec::new(1.0, 1.0, theta_q, phi_omega)?;
        Instance::new(model, init, control, cost, bounds, seed)
    }

    /// Tracking problem whose temperature target is produced by `u_dagger`,
    /// so that `J(u_dagger) = 0`; the base control is the box midpoint.
    pub fn self_tracking(
        model: Model,
        init: InitialData,
        u_dagger: &BoundaryControl,
        bounds: ControlBounds,
        seed: u64,
    ) -> Result<Self> {
        let target = model.solve_state(u_dagger, &init)?;
        let cost = CostSpec::new(1.0, 0.0, target.theta, vec![0.0; model.grid().len()])?;
        let control = bounds.midpoint();
        Instance::new(model, init, control, cost, bounds, seed)
    }

    pub fn problem(&self) -> ControlProblem {
        ControlProblem { model: self.model.clone(), init: self.init.clone(), cost: self.cost.clone() }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Report `-g` instead of the adjoint gradient.
    NegatedGradient,
    /// Perturb one stored node of the base trajectory before differentiating.
    PerturbedTrajectory,
}

impl std::str::FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negated-gradient" | "negated_gradient" => Ok(Fault::NegatedGradient),
            "perturbed-trajectory" | "perturbed_trajectory" => Ok(Fault::PerturbedTrajectory),
            other => Err(Error::InvalidParameter(format!("unknown fault `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    pub n_directions: usize,
    /// Step sizes of the Taylor-remainder fits.
    pub deltas: Vec<f64>,
    /// Step of the central difference.
    pub fd_delta: f64,
    pub rel_tol: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub gap_tol: f64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            n_directions: 5,
            deltas: vec![1e-1, 1e-2, 1e-3],
            fd_delta: 1e-4,
            rel_tol: 1e-3,
            slope_min: 1.7,
            slope_max: 2.3,
            gap_tol: 1e-10,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub index: usize,
    /// `<g, h>` from the adjoint.
    pub adjoint_derivative: f64,
    /// `(J(u + d h) - J(u - d h)) / 2d`.
    pub fd_derivative: f64,
    pub rel_err: f64,
    pub cost_remainders: Vec<f64>,
    /// `None` when every remainder is at round-off level.
    pub cost_slope: Option<f64>,
    pub state_remainders: Vec<f64>,
    pub state_slope: Option<f64>,
    pub duality_gap: f64,
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub options: GradCheckOptions,
    /// Largest entry of the weak-form residual of the trajectory the gradient
    /// was computed from.
    pub base_residual: f64,
    pub directions: Vec<DirectionReport>,
    pub max_rel_err: f64,
    pub max_duality_gap: f64,
    pub passed: bool,
}

fn slope_or_exact(deltas: &[f64], remainders: &[f64], scale: f64) -> Option<f64> {
    if remainders.iter().all(|&r| r <= 1e-13 * scale.max(1.0)) {
        None
    } else {
        Some(loglog_slope(deltas, &remainders.iter().map(|r| r.max(f64::MIN_POSITIVE)).collect::<Vec<_>>()))
    }
}

fn state_series(a: &StateTrajectory, b: &StateTrajectory) -> (Vec<Field>, Vec<Field>, Vec<Field>) {
    (
        norms::difference(&a.theta, &b.theta),
        norms::difference(&a.theta_gamma, &b.theta_gamma),
        norms::difference(&a.phi, &b.phi),
    )
}

/// Central-difference and Taylor-remainder checks of the adjoint gradient
/// and of the linearized solver, plus the duality gap, in random directions.
pub fn grad_check(instance: &Instance, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let problem = instance.problem();
    let model = &instance.model;
    let u = &instance.control;
    let mut base = problem.state(u)?;
    if opts.fault == Some(Fault::PerturbedTrajectory) {
        let n = base.theta.len() / 2;
        let i = base.theta[n].len() / 2;
        base.theta[n][i] += 1e-3;
        base.phi[n][i] += 1e-3;
    }
    let base_residual = state::weak_form_residual(model, &base, u)?.into_iter().fold(0.0, f64::max);
    let j0 = crate::optimize::evaluate_cost(model, &base, &instance.cost)?;
    let adj = adjoint::solve_adjoint(model, &base, &instance.cost)?;
    let mut g = adjoint::gradient(model, &adj);
    if opts.fault == Some(Fault::NegatedGradient) {
        g = g.map(|v| -v);
    }

    let mut rng = instance.rng(1);
    let directions: Vec<BoundaryControl> = (0..opts.n_directions).map(|_| random_direction(model, &mut rng)).collect();

    let probe = |index: usize, h: &BoundaryControl| -> Result<DirectionReport> {
        let gh = g.inner(h, model.grid(), model.tgrid());
        let d = opts.fd_delta;
        let jp = problem.cost(&u.add_scaled(h, d))?;
        let jm = problem.cost(&u.add_scaled(h, -d))?;
        let fd = (jp - jm) / (2.0 * d);
        let rel_err = if gh.abs().max(fd.abs()) <= 1e-14 { 0.0 } else { (fd - gh).abs() / gh.abs().max(1e-14) };

        let sens = sensitivity::solve_linearized(model, &base, h)?;
        let mut cost_remainders = Vec::with_capacity(opts.deltas.len());
        let mut state_remainders = Vec::with_capacity(opts.deltas.len());
        for &delta in &opts.deltas {
            let moved = problem.state(&u.add_scaled(h, delta))?;
            let j = crate::optimize::evaluate_cost(model, &moved, &instance.cost)?;
            cost_remainders.push((j - j0 - delta * gh).abs());
            let (mut dt, mut dg, mut dp) = state_series(&moved, &base);
            for (field, lin) in [(&mut dt, &sens.theta), (&mut dg, &sens.theta_gamma), (&mut dp, &sens.phi)] {
                for (row, lrow) in field.iter_mut().zip(lin) {
                    for (v, l) in row.iter_mut().zip(lrow) {
                        *v -= delta * l;
                    }
                }
            }
            state_remainders.push(norms::sensitivity_norm(model, &dt, &dg, &dp));
        }
        let cost_slope = slope_or_exact(&opts.deltas, &cost_remainders, j0.abs());
        let state_slope = slope_or_exact(&opts.deltas, &state_remainders, 1.0);
        let dj = sensitivity::directional_cost_derivative(model, &base, &sens, &instance.cost);
        let duality_gap = (gh - dj).abs() / gh.abs().max(1.0);
        let in_band = |s: Option<f64>| s.map_or(true, |s| s >= opts.slope_min && s <= opts.slope_max);
        let passed = rel_err <= opts.rel_tol && in_band(cost_slope) && in_band(state_slope) && duality_gap <= opts.gap_tol;
        Ok(DirectionReport {
            index,
            adjoint_derivative: gh,
            fd_derivative: fd,
            rel_err,
            cost_remainders,
            cost_slope,
            state_remainders,
            state_slope,
            duality_gap,
            error: None,
            passed,
        })
    };

    let directions: Vec<DirectionReport> = directions
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            probe(i, h).unwrap_or_else(|e| DirectionReport {
                index: i,
                adjoint_derivative: f64::NAN,
                fd_derivative: f64::NAN,
                rel_err: f64::NAN,
                cost_remainders: Vec::new(),
                cost_slope: None,
                state_remainders: Vec::new(),
                state_slope: None,
                duality_gap: f64::NAN,
                error: Some(e.to_string()),
                passed: false,
            })
        })
        .collect();
    let max_rel_err = directions.iter().map(|d| d.rel_err).fold(0.0, f64::max);
    let max_duality_gap = directions.iter().map(|d| d.duality_gap).fold(0.0, f64::max);
    let passed = base_residual <= 1e-8 && directions.iter().all(|d| d.passed);
    Ok(GradCheckReport {
        seed: instance.seed,
        options: opts.clone(),
        base_residual,
        directions,
        max_rel_err,
        max_duality_gap,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSweepReport {
    pub seed: u64,
    pub epsilons: Vec<f64>,
    /// `|phi_eps[i] - phi_eps[i+1]|_{L2(Q)}`.
    pub phi_successive: Vec<f64>,
    pub theta_successive: Vec<f64>,
    /// `|phi_eps - phi|_{L2(Q)}` against the unregularized solve.
    pub phi_to_direct: Vec<f64>,
    pub theta_to_direct: Vec<f64>,
    pub successive_decreasing: bool,
    pub direct_decreasing: bool,
    pub passed: bool,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0) || v.windows(2).all(|w| w[1] < w[0])
}

fn regularized(model: &Model, eps: f64) -> Result<Model> {
    Ok(model.clone().with_regularization(Some(Regularization::new(eps)?)))
}

/// Solves with `beta_eps`, `lambda_eps` for every `eps` and without
/// regularization, and compares the trajectories in `L2(Q)`.
pub fn epsilon_sweep(instance: &Instance, epsilons: &[f64]) -> Result<EpsilonSweepReport> {
    let model = instance.model.clone().with_regularization(None);
    if !model.potential().is_singular() {
        return Err(Error::InvalidParameter("epsilon sweep needs a singular potential".into()));
    }
    let direct = model.solve_state(&instance.control, &instance.init)?;
    let solves: Vec<StateTrajectory> = epsilons
        .par_iter()
        .map(|&eps| regularized(&model, eps)?.solve_state(&instance.control, &instance.init))
        .collect::<Result<_>>()?;
    let dist = |a: &[Field], b: &[Field]| norms::l2_h(&model, &norms::difference(a, b));
    let phi_successive: Vec<f64> = solves.windows(2).map(|w| dist(&w[0].phi, &w[1].phi)).collect();
    let theta_successive: Vec<f64> = solves.windows(2).map(|w| dist(&w[0].theta, &w[1].theta)).collect();
    let phi_to_direct: Vec<f64> = solves.iter().map(|s| dist(&s.phi, &direct.phi)).collect();
    let theta_to_direct: Vec<f64> = solves.iter().map(|s| dist(&s.theta, &direct.theta)).collect();
    let successive_decreasing = strictly_decreasing(&phi_successive);
    let direct_decreasing = strictly_decreasing(&phi_to_direct);
    Ok(EpsilonSweepReport {
        seed: instance.seed,
        epsilons: epsilons.to_vec(),
        phi_successive,
        theta_successive,
        phi_to_direct,
        theta_to_direct,
        successive_decreasing,
        direct_decreasing,
        passed: successive_decreasing && direct_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub epsilon: f64,
    pub steps: usize,
    pub phi_to_direct: f64,
}

/// Distance between the regularized and the direct solve for each pair of
/// `epsilon` and number of time steps. The control is held piecewise
/// constant in time, so refining the steps does not change it.
pub fn epsilon_refinement(instance: &Instance, epsilons: &[f64], step_counts: &[usize]) -> Result<Vec<RefinementRow>> {
    let base = instance.model.clone().with_regularization(None);
    let coarse = base.tgrid().steps();
    let cases: Vec<(f64, usize)> = epsilons.iter().flat_map(|&e| step_counts.iter().map(move |&n| (e, n))).collect();
    cases
        .par_iter()
        .map(|&(epsilon, steps)| {
            let tgrid = crate::geometry::TimeGrid::new(base.tgrid().horizon(), steps)?;
            let model = base.clone().with_tgrid(tgrid);
            let control = BoundaryControl::from_fn(model.grid(), model.tgrid(), |n, b| {
                let t = model.tgrid().time(n);
                let k = ((t / base.tgrid().dt()).floor() as usize).min(coarse - 1);
                instance.control.step(k)[b]
            });
            let direct = model.solve_state(&control, &instance.init)?;
            let reg = regularized(&model, epsilon)?.solve_state(&control, &instance.init)?;
            let phi_to_direct = norms::l2_h(&model, &norms::difference(&reg.phi, &direct.phi));
            Ok(RefinementRow { epsilon, steps, phi_to_direct })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pair: usize,
    pub separation: f64,
    pub control_distance: f64,
    pub state_distance: f64,
    /// `None` when the two controls coincide.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContDepReport {
    pub seed: u64,
    pub separations: Vec<f64>,
    pub samples: Vec<PairSample>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max_ratio / min_ratio`.
    pub band: f64,
    pub max_band: f64,
    pub passed: bool,
}

pub const CONTDEP_SEPARATIONS: [f64; 4] = [1.0, 1e-2, 1e-4, 1e-6];

/// Ratio of the composite state-difference norm to `|u1 - u2|_{L2(Sigma)}`
/// over random pairs at each separation.
pub fn contdep_probe(instance: &Instance, n_pairs: usize, separations: &[f64]) -> Result<ContDepReport> {
    let model = &instance.model;
    let mut rng = instance.rng(2);
    let pairs: Vec<(BoundaryControl, BoundaryControl)> = (0..n_pairs)
        .map(|_| {
            let u1 = random_control(model, &instance.bounds, &mut rng);
            let d = random_direction(model, &mut rng);
            let norm = d.norm(model.grid(), model.tgrid());
            (u1, d.map(|v| v / norm))
        })
        .collect();
    let cases: Vec<(usize, f64)> = (0..n_pairs).flat_map(|p| separations.iter().map(move |&s| (p, s))).collect();
    let samples: Vec<PairSample> = cases
        .par_iter()
        .map(|&(pair, separation)| {
            let (u1, d) = &pairs[pair];
            let u2 = u1.add_scaled(d, separation);
            let s1 = model.solve_state(u1, &instance.init)?;
            let s2 = model.solve_state(&u2, &instance.init)?;
            let control_distance = u1.add_scaled(&u2, -1.0).norm(model.grid(), model.tgrid());
            let (dt, dg, dp) = state_series(&s1, &s2);
            let state_distance = norms::state_difference_norm(model, &dt, &dg, &dp);
            let ratio = (control_distance > 0.0).then(|| state_distance / control_distance);
            Ok(PairSample { pair, separation, control_distance, state_distance, ratio })
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = samples.iter().filter_map(|s| s.ratio).collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let band = if ratios.is_empty() { 1.0 } else { max_ratio / min_ratio };
    let max_band = 100.0;
    Ok(ContDepReport {
        seed: instance.seed,
        separations: separations.to_vec(),
        samples,
        min_ratio,
        max_ratio,
        band,
        max_band,
        passed: band.is_finite() && band <= max_band,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRun {
    pub label: String,
    pub max_abs_theta: f64,
    pub min_phi: f64,
    pub max_phi: f64,
    pub max_abs_xi: f64,
    pub guard_hits: usize,
    pub rejections: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedAuditReport {
    pub seed: u64,
    pub runs: Vec<AuditRun>,
    /// `max(|theta_0|_inf, |u_min|_inf, |u_max|_inf)`.
    pub data_norm: f64,
    pub theta_bound: f64,
    /// Required distance of `phi` from the ends of a bounded domain.
    pub interior_margin: f64,
    pub contained: bool,
    pub passed: bool,
}

/// Boundedness over the box corners `u = u_min`, `u = u_max` and `n_random`
/// random admissible controls.
pub fn bounded_audit(instance: &Instance, n_random: usize) -> Result<BoundedAuditReport> {
    let model = &instance.model;
    let mut rng = instance.rng(3);
    let mut controls = vec![
        ("lower".to_string(), instance.bounds.lower.clone()),
        ("upper".to_string(), instance.bounds.upper.clone()),
    ];
    for i in 0..n_random {
        controls.push((format!("random-{i}"), random_control(model, &instance.bounds, &mut rng)));
    }
    let runs: Vec<AuditRun> = controls
        .par_iter()
        .map(|(label, u)| match model.solve_state(u, &instance.init) {
            Ok(traj) => {
                let b = state::boundedness_check(&traj, None);
                AuditRun {
                    label: label.clone(),
                    max_abs_theta: b.max_abs_theta,
                    min_phi: b.min_phi,
                    max_phi: b.max_phi,
                    max_abs_xi: b.max_abs_xi,
                    guard_hits: traj.guard_hits(),
                    rejections: traj.rejections(),
                    error: None,
                }
            }
            Err(e) => AuditRun {
                label: label.clone(),
                max_abs_theta: f64::NAN,
                min_phi: f64::NAN,
                max_phi: f64::NAN,
                max_abs_xi: f64::NAN,
                guard_hits: 0,
                rejections: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let data_norm = instance
        .init
        .theta0
        .iter()
        .chain(instance.bounds.lower.iter())
        .chain(instance.bounds.upper.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let theta_bound = runs.iter().map(|r| r.max_abs_theta).fold(0.0, f64::max);
    let interior_margin = 1e-6;
    let (lo, hi) = model.potential().domain();
    let contained = runs.iter().all(|r| {
        r.error.is_none() && r.min_phi > lo + interior_margin && r.max_phi < hi - interior_margin
    });
    let clean = runs.iter().all(|r| r.rejections == 0 && r.guard_hits == 0);
    let envelope = if data_norm > 0.0 { theta_bound <= 10.0 * data_norm } else { theta_bound == 0.0 };
    Ok(BoundedAuditReport {
        seed: instance.seed,
        runs,
        data_norm,
        theta_bound,
        interior_margin,
        contained,
        passed: contained && clean && envelope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TimeGrid;
    use crate::potentials::{LatentHeat, PotentialSpec};
    use crate::state::{PhysicalParams, SolverOptions};

    fn model(spec: PotentialSpec, nodes: usize, steps: usize) -> Model {
        let grid = SpatialGrid::interval(1.0, nodes).unwrap();
        let tgrid = TimeGrid::new(1.0, steps).unwrap();
        Model::new(grid.clone(), tgrid, PhysicalParams::unit(&grid), spec, None, SolverOptions::default()).unwrap()
    }

    #[test]
    fn loglog_slope_of_power_laws() {
        let x = [1e-1, 1e-2, 1e-3];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_instances_are_reproducible() {
        let spec = PotentialSpec::logarithmic(2.0, LatentHeat::LogCosh).unwrap();
        let a = Instance::seeded(model(spec.clone(), 7, 4), 11).unwrap();
        let b = Instance::seeded(model(spec.clone(), 7, 4), 11).unwrap();
        let c = Instance::seeded(model(spec, 7, 4), 12).unwrap();
        assert_eq!((&a.init, &a.control, &a.cost), (&b.init, &b.control, &b.cost));
        assert_ne!(a.control, c.control);
        assert!(a.init.phi0.iter().all(|v| v.abs() < 0.7));
        assert!(a.bounds.contains(&a.control));
    }

    #[test]
    fn zero_weights_give_zero_derivatives() {
        let mut inst = Instance::seeded(model(PotentialSpec::regular(LatentHeat::default()), 5, 4), 3).unwrap();
        inst.cost.kappa1 = 0.0;
        inst.cost.kappa2 = 0.0;
        let rep = grad_check(&inst, &GradCheckOptions::default()).unwrap();
        assert!(rep.passed);
        for d in &rep.directions {
            assert_eq!((d.adjoint_derivative, d.fd_derivative, d.rel_err), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn negated_gradient_is_caught() {
        let inst = Instance::seeded(model(PotentialSpec::regular(LatentHeat::LogCosh), 5, 4), 5).unwrap();
        let opts = GradCheckOptions { n_directions: 2, fault: Some(Fault::NegatedGradient), ..Default::default() };
        let rep = grad_check(&inst, &opts).unwrap();
        assert!(!rep.passed);
        for d in &rep.directions {
            assert!((d.rel_err - 2.0).abs() < 1e-3, "{}", d.rel_err);
        }
    }

    #[test]
    fn zero_data_sweeps_and_audits_are_zero() {
        let m = model(PotentialSpec::logarithmic(2.0, LatentHeat::LogCosh).unwrap(), 5, 4);
        let zero = BoundaryControl::zeros(m.grid(), m.tgrid());
        let inst = Instance::new(
            m.clone(),
            InitialData::constant(m.grid(), 0.0, 0.0),
            zero.clone(),
            CostSpec::tracking(&m, 1.0, 0.0, 0.0, 0.0),
            ControlBounds::new(zero.clone(), zero).unwrap(),
            0,
        )
        .unwrap();
        let sweep = epsilon_sweep(&inst, &[0.2, 0.1, 0.05]).unwrap();
        assert!(sweep.phi_successive.iter().chain(&sweep.phi_to_direct).all(|&v| v == 0.0));
        assert!(sweep.passed);
        let audit = bounded_audit(&inst, 2).unwrap();
        assert_eq!(audit.theta_bound, 0.0);
        assert!(audit.passed);
    }

    #[test]
    fn coinciding_controls_are_skipped() {
        let inst = Instance::seeded(model(PotentialSpec::regular(LatentHeat::default()), 5, 3), 9).unwrap();
        let rep = contdep_probe(&inst, 2, &[0.0, 1e-2]).unwrap();
        assert!(rep.samples.iter().filter(|s| s.separation == 0.0).all(|s| s.ratio.is_none() && s.state_distance == 0.0));
        assert!(rep.samples.iter().filter(|s| s.separation > 0.0).all(|s| s.ratio.is_some()));
    }

    #[test]
    fn decoupled_temperature_has_constant_ratio() {
        let spec = PotentialSpec::regular(LatentHeat::Linear { ell: 0.0 });
        let inst = Instance::seeded(model(spec, 7, 5), 21).unwrap();
        let rep = contdep_probe(&inst, 3, &CONTDEP_SEPARATIONS).unwrap();
        for p in 0..3 {
            let r: Vec<f64> = rep.samples.iter().filter(|s| s.pair == p).filter_map(|s| s.ratio).collect();
            let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(hi / lo - 1.0 < 1e-2, "{r:?}");
        }
    }
}
