use anyhow::{Context, Result};
use serde::Serialize;

use phasefield_core::adjoint::solve_adjoint;
use phasefield_core::harness::{self, Fault};
use phasefield_core::optimize::{check_optimality, evaluate_cost, projected_gradient, CertificationReport, Termination};
use phasefield_core::state::{boundedness_check, energy_diagnostic, weak_form_residual, BoundednessReport, EnergyReport};
use phasefield_core::Error;

use crate::config::RunConfig;
use crate::output::RunRecord;

/// Time step named by a solver failure anywhere in the error chain.
pub fn failing_step(e: &anyhow::Error) -> Option<usize> {
    e.chain().find_map(|cause| match cause.downcast_ref::<Error>()? {
        Error::NewtonNonconvergence { step, .. } | Error::InvariantRegion { step } => Some(*step),
        _ => None,
    })
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    cost: f64,
    max_weak_residual: f64,
    min_energy_slack: f64,
    energy: EnergyReport,
    boundedness: BoundednessReport,
    guard_hits: usize,
    rejections: usize,
    max_newton_residual: f64,
    passed: bool,
}

pub fn simulate(cfg: &RunConfig, seed: Option<u64>, record: &mut RunRecord) -> Result<bool> {
    let setup = cfg.setup(seed)?;
    let inst = &setup.instance;
    let model = &inst.model;
    let traj = model.solve_state(&inst.control, &inst.init).context("state solve failed")?;
    record.series("theta.csv", &traj.theta)?;
    record.series("theta_gamma.csv", &traj.theta_gamma)?;
    record.series("phi.csv", &traj.phi)?;
    record.series("xi.csv", &traj.xi)?;
    record.series("control.csv", inst.control.values())?;

    let residual = weak_form_residual(model, &traj, &inst.control)?;
    let energy = energy_diagnostic(model, &traj, &inst.init, &inst.control)?;
    let domain = model.potential().is_singular().then(|| model.potential().domain());
    let boundedness = boundedness_check(&traj, domain);
    let min_energy_slack = energy.min_slack();
    let passed = boundedness.contained != Some(false);
    let summary = SimulateSummary {
        cost: evaluate_cost(model, &traj, &inst.cost)?,
        max_weak_residual: residual.iter().copied().fold(0.0, f64::max),
        min_energy_slack,
        energy,
        boundedness,
        guard_hits: traj.guard_hits(),
        rejections: traj.rejections(),
        max_newton_residual: traj.max_newton_residual(),
        passed,
    };
    record.json("summary.json", &summary)?;
    Ok(passed)
}

pub fn gradcheck(cfg: &RunConfig, seed: Option<u64>, fault: Option<Fault>, record: &mut RunRecord) -> Result<bool> {
    let setup = cfg.setup(seed)?;
    let opts = harness::GradCheckOptions { fault, ..cfg.grad_check_options() };
    let report = harness::grad_check(&setup.instance, &opts)?;
    record.json("summary.json", &report)?;
    Ok(report.passed)
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    iterations: usize,
    evaluations: usize,
    termination: Termination,
    initial_cost: f64,
    final_cost: f64,
    final_residual: f64,
    cost_history: Vec<f64>,
    residual_history: Vec<f64>,
    step_history: Vec<f64>,
    certification: CertificationReport,
    passed: bool,
}

pub fn optimize(cfg: &RunConfig, seed: Option<u64>, record: &mut RunRecord) -> Result<bool> {
    let setup = cfg.setup(seed)?;
    let inst = &setup.instance;
    let problem = inst.problem();
    let report = projected_gradient(&problem, &inst.control, &inst.bounds, &setup.optimize)?;
    record.manifest.cost_trace = Some(report.cost_history.clone());

    let certification = match setup.tol_sign {
        None => report.certification.clone(),
        Some(tol) => {
            let state = problem.state(&report.control)?;
            let adj = solve_adjoint(&problem.model, &state, &problem.cost)?;
            check_optimality(&problem.model, &report.control, &adj, &inst.bounds, Some(tol))?
        }
    };
    record.series("control.csv", report.control.values())?;
    let state = problem.state(&report.control)?;
    record.series("theta.csv", &state.theta)?;
    record.series("phi.csv", &state.phi)?;
    let as_f64 = |m: &Vec<Vec<bool>>| -> Vec<Vec<f64>> {
        m.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect()
    };
    record.series("active_lower.csv", &as_f64(&report.active.lower))?;
    record.series("active_upper.csv", &as_f64(&report.active.upper))?;

    let passed = report.termination == Termination::Converged;
    let summary = OptimizeSummary {
        iterations: report.iterations,
        evaluations: report.evaluations,
        termination: report.termination,
        initial_cost: report.cost_history[0],
        final_cost: report.final_cost(),
        final_residual: report.final_residual(),
        cost_history: report.cost_history.clone(),
        residual_history: report.residual_history.clone(),
        step_history: report.step_history.clone(),
        certification,
        passed,
    };
    record.json("summary.json", &summary)?;
    Ok(passed)
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    sweep: harness::EpsilonSweepReport,
    refinement: Vec<harness::RefinementRow>,
    passed: bool,
}

pub fn sweep_eps(cfg: &RunConfig, seed: Option<u64>, record: &mut RunRecord) -> Result<bool> {
    let setup = cfg.setup(seed)?;
    let h = &cfg.harness;
    let sweep = harness::epsilon_sweep(&setup.instance, &h.epsilons)?;
    let refinement = if h.refinement_steps.is_empty() {
        Vec::new()
    } else {
        harness::epsilon_refinement(&setup.instance, &h.epsilons, &h.refinement_steps)?
    };
    let passed = sweep.passed;
    record.json("summary.json", &SweepSummary { sweep, refinement, passed })?;
    Ok(passed)
}

pub fn contdep(cfg: &RunConfig, seed: Option<u64>, record: &mut RunRecord) -> Result<bool> {
    let setup = cfg.setup(seed)?;
    let report = harness::contdep_probe(&setup.instance, cfg.harness.n_pairs, &cfg.harness.separations)?;
    record.json("summary.json", &report)?;
    Ok(report.passed)
}

pub fn audit(cfg: &RunConfig, seed: Option<u64>, record: &mut RunRecord) -> Result<bool> {
    let setup = cfg.setup(seed)?;
    let report = harness::bounded_audit(&setup.instance, cfg.harness.n_random)?;
    record.json("summary.json", &report)?;
    Ok(report.passed)
}
