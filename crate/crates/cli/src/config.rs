//! Run configuration: a TOML tree with one table per block.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! dimension = "interval"      # or "rectangle"
//! lengths = [1.0]
//! node_counts = [9]
//!
//! [time]
//! horizon = 1.0
//! steps = 8
//!
//! [params]                    # all optional
//! sigma = 1.0
//! tau = 1.0
//! alpha = 1.0
//! m = 1.0                     # or one value per boundary node
//!
//! [potential]                 # optional; regular potential by default
//! variant = "logarithmic"
//! a = 2.0
//! lambda = { kind = "log_cosh" }
//! epsilon = 0.05              # Yosida regularization, optional
//! ```
//!
//! Further optional blocks: `[initial]` (`theta0`, `phi0`), `[control]`
//! (`u0`, `u_min`, `u_max`), `[cost]` (`kappa1`, `kappa2`, `theta_q`,
//! `phi_omega`), `[optimizer]`, `[solver]` and `[harness]`. Spatial fields
//! are a constant or a list of nodal values; space-time fields are a
//! constant, a list of rows, or `{ file = "path.csv" }` in the trajectory
//! CSV format. `theta_q = { from_control = ... }` manufactures the target
//! by a forward solve with the given control.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use phasefield_core::adjoint::CostSpec;
use phasefield_core::geometry::{build_grid, Dimension, SpatialGrid, TimeGrid};
use phasefield_core::harness::{GradCheckOptions, Instance, CONTDEP_SEPARATIONS};
use phasefield_core::optimize::{ControlBounds, OptimizeOptions};
use phasefield_core::potentials::{LatentHeat, PotentialSpec, Regularization};
use phasefield_core::state::{BoundaryControl, InitialData, Model, PhysicalParams, SolverOptions};

use crate::output;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesSpec {
    Constant(f64),
    Rows(Vec<Vec<f64>>),
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Series(SeriesSpec),
    FromControl { from_control: SeriesSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dimension: Dimension,
    pub lengths: Vec<f64>,
    pub node_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsBlock {
    pub sigma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub m: FieldSpec,
}

impl Default for ParamsBlock {
    fn default() -> Self {
        ParamsBlock { sigma: 1.0, tau: 1.0, alpha: 1.0, m: FieldSpec::Constant(1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Regular,
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialBlock {
    pub variant: Variant,
    pub a: Option<f64>,
    pub lambda: LatentHeat,
    pub epsilon: Option<f64>,
}

impl Default for PotentialBlock {
    fn default() -> Self {
        PotentialBlock { variant: Variant::Regular, a: None, lambda: LatentHeat::default(), epsilon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialBlock {
    pub theta0: FieldSpec,
    pub phi0: FieldSpec,
}

impl Default for InitialBlock {
    fn default() -> Self {
        InitialBlock { theta0: FieldSpec::Constant(0.0), phi0: FieldSpec::Constant(0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlBlock {
    pub u0: SeriesSpec,
    pub u_min: SeriesSpec,
    pub u_max: SeriesSpec,
}

impl Default for ControlBlock {
    fn default() -> Self {
        ControlBlock { u0: SeriesSpec::Constant(0.0), u_min: SeriesSpec::Constant(-1.0), u_max: SeriesSpec::Constant(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostBlock {
    pub kappa1: f64,
    pub kappa2: f64,
    pub theta_q: TargetSpec,
    pub phi_omega: FieldSpec,
}

impl Default for CostBlock {
    fn default() -> Self {
        CostBlock {
            kappa1: 1.0,
            kappa2: 0.0,
            theta_q: TargetSpec::Series(SeriesSpec::Constant(0.0)),
            phi_omega: FieldSpec::Constant(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerBlock {
    pub tol: f64,
    pub max_iter: usize,
    pub s0: f64,
    pub c1: f64,
    pub backtrack_ratio: f64,
    pub backtrack_budget: usize,
    /// Dead-band of the sign test; `1e-8 (1 + max |m p_G|)` when absent.
    pub tol_sign: Option<f64>,
}

impl Default for OptimizerBlock {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        OptimizerBlock {
            tol: o.tol,
            max_iter: o.max_iter,
            s0: o.s0,
            c1: o.armijo_c1,
            backtrack_ratio: o.backtrack_ratio,
            backtrack_budget: o.backtrack_budget,
            tol_sign: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub inner_sweeps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub guard_margin: f64,
    pub retry_budget: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverBlock {
            inner_sweeps: o.inner_sweeps,
            newton_tol: o.newton_tol,
            newton_max_iter: o.newton_max_iter,
            guard_margin: o.guard_margin,
            retry_budget: o.retry_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessBlock {
    pub n_directions: usize,
    pub deltas: Vec<f64>,
    pub fd_delta: f64,
    pub epsilons: Vec<f64>,
    /// Step counts of the optional ε / dt refinement table.
    pub refinement_steps: Vec<usize>,
    pub n_pairs: usize,
    pub separations: Vec<f64>,
    pub n_random: usize,
}

impl Default for HarnessBlock {
    fn default() -> Self {
        let g = GradCheckOptions::default();
        HarnessBlock {
            n_directions: g.n_directions,
            deltas: g.deltas,
            fd_delta: g.fd_delta,
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            refinement_steps: Vec::new(),
            n_pairs: 10,
            separations: CONTDEP_SEPARATIONS.to_vec(),
            n_random: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridBlock,
    pub time: TimeBlock,
    #[serde(default)]
    pub params: ParamsBlock,
    #[serde(default)]
    pub potential: PotentialBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    #[serde(default)]
    pub control: ControlBlock,
    #[serde(default)]
    pub cost: CostBlock,
    #[serde(default)]
    pub optimizer: OptimizerBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub harness: HarnessBlock,
    /// Directory that relative file references are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Everything a subcommand needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub instance: Instance,
    pub optimize: OptimizeOptions,
    pub tol_sign: Option<f64>,
}

fn keyed<T, E: std::fmt::Display>(key: &str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| anyhow!("{key}: {e}"))
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut cfg = parse_str(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_str(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
}

impl RunConfig {
    fn grid(&self) -> Result<SpatialGrid> {
        let g = &self.grid;
        if g.lengths.len() != g.dimension.axes() {
            bail!("grid.lengths: expected {} value(s), found {}", g.dimension.axes(), g.lengths.len());
        }
        if g.node_counts.len() != g.dimension.axes() {
            bail!("grid.node_counts: expected {} value(s), found {}", g.dimension.axes(), g.node_counts.len());
        }
        if let Some(n) = g.node_counts.iter().find(|&&n| n < 3) {
            bail!("grid.node_counts: {n} nodes leave no interior node (need at least 3)");
        }
        if let Some(l) = g.lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            bail!("grid.lengths: length {l} must be positive");
        }
        keyed("grid", build_grid(g.dimension, &g.lengths, &g.node_counts))
    }

    fn tgrid(&self) -> Result<TimeGrid> {
        if self.time.steps == 0 {
            bail!("time.steps: need at least one step");
        }
        keyed("time.horizon", TimeGrid::new(self.time.horizon, self.time.steps))
    }

    fn field(&self, key: &str, spec: &FieldSpec, len: usize) -> Result<Vec<f64>> {
        let v = match spec {
            FieldSpec::Constant(c) => vec![*c; len],
            FieldSpec::Values(v) if v.len() == len => v.clone(),
            FieldSpec::Values(v) => bail!("{key}: expected {len} values, found {}", v.len()),
        };
        if v.iter().any(|x| !x.is_finite()) {
            bail!("{key}: values must be finite");
        }
        Ok(v)
    }

    fn series(&self, key: &str, spec: &SeriesSpec, rows: usize, width: usize) -> Result<Vec<Vec<f64>>> {
        let v = match spec {
            SeriesSpec::Constant(c) => vec![vec![*c; width]; rows],
            SeriesSpec::Rows(r) => r.clone(),
            SeriesSpec::File { file } => {
                let path = self.base_dir.join(file);
                keyed(key, output::read_series_csv(&path))?
            }
        };
        if v.len() != rows || v.iter().any(|r| r.len() != width) {
            bail!("{key}: expected {rows} rows of {width} values");
        }
        if v.iter().flatten().any(|x| !x.is_finite()) {
            bail!("{key}: values must be finite");
        }
        Ok(v)
    }

    fn control(&self, key: &str, spec: &SeriesSpec, grid: &SpatialGrid, tgrid: &TimeGrid) -> Result<BoundaryControl> {
        keyed(key, BoundaryControl::new(self.series(key, spec, tgrid.steps(), grid.boundary_len())?))
    }

    fn potential(&self) -> Result<PotentialSpec> {
        let p = &self.potential;
        if let LatentHeat::Linear { ell } = p.lambda {
            if !ell.is_finite() {
                bail!("potential.lambda: ell must be finite");
            }
        }
        match (p.variant, p.a) {
            (Variant::Regular, None) => Ok(PotentialSpec::regular(p.lambda)),
            (Variant::Regular, Some(_)) => bail!("potential.a: only the logarithmic variant takes a coefficient"),
            (Variant::Logarithmic, None) => bail!("potential.a: the logarithmic variant needs a coefficient a > 0"),
            (Variant::Logarithmic, Some(a)) => keyed("potential.a", PotentialSpec::logarithmic(a, p.lambda)),
        }
    }

    /// Builds and checks every object, without running any solve.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let tgrid = self.tgrid()?;
        self.model(&grid, &tgrid)?;
        self.bounds(&grid, &tgrid)?;
        self.control("control.u0", &self.control.u0, &grid, &tgrid)?;
        self.field("initial.theta0", &self.initial.theta0, grid.len())?;
        self.field("initial.phi0", &self.initial.phi0, grid.len())?;
        self.field("cost.phi_omega", &self.cost.phi_omega, grid.len())?;
        match &self.cost.theta_q {
            TargetSpec::Series(s) => {
                self.series("cost.theta_q", s, tgrid.steps() + 1, grid.len())?;
            }
            TargetSpec::FromControl { from_control } => {
                self.control("cost.theta_q.from_control", from_control, &grid, &tgrid)?;
            }
        }
        for (key, k) in [("cost.kappa1", self.cost.kappa1), ("cost.kappa2", self.cost.kappa2)] {
            if !(k >= 0.0 && k.is_finite()) {
                bail!("{key}: weight {k} must be nonnegative");
            }
        }
        let o = &self.optimizer;
        if !(o.tol >= 0.0 && o.s0 > 0.0 && o.c1 > 0.0 && o.backtrack_ratio > 0.0 && o.backtrack_ratio < 1.0) {
            bail!("optimizer: need tol >= 0, s0 > 0, c1 > 0 and 0 < backtrack_ratio < 1");
        }
        if let Some(t) = o.tol_sign {
            if !(t >= 0.0) {
                bail!("optimizer.tol_sign: must be nonnegative");
            }
        }
        if self.solver.inner_sweeps == 0 {
            bail!("solver.inner_sweeps: need at least one sweep");
        }
        let h = &self.harness;
        if h.deltas.len() < 2 || h.deltas.iter().any(|d| !(*d > 0.0)) || !(h.fd_delta > 0.0) {
            bail!("harness.deltas: need at least two positive step sizes and fd_delta > 0");
        }
        if let Some(e) = h.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            bail!("harness.epsilons: {e} is not in (0, 1)");
        }
        if h.separations.iter().any(|s| !(*s >= 0.0)) {
            bail!("harness.separations: must be nonnegative");
        }
        Ok(())
    }

    fn model(&self, grid: &SpatialGrid, tgrid: &TimeGrid) -> Result<Model> {
        let p = &self.params;
        let m = self.field("params.m", &p.m, grid.boundary_len())?;
        let params = keyed("params", PhysicalParams::new(p.sigma, p.tau, p.alpha, m))?;
        let reg = self.potential.epsilon.map(Regularization::new).transpose();
        let reg = keyed("potential.epsilon", reg)?;
        let s = &self.solver;
        let options = SolverOptions {
            inner_sweeps: s.inner_sweeps,
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
            guard_margin: s.guard_margin,
            retry_budget: s.retry_budget,
        };
        keyed("model", Model::new(grid.clone(), *tgrid, params, self.potential()?, reg, options))
    }

    fn bounds(&self, grid: &SpatialGrid, tgrid: &TimeGrid) -> Result<ControlBounds> {
        let lower = self.control("control.u_min", &self.control.u_min, grid, tgrid)?;
        let upper = self.control("control.u_max", &self.control.u_max, grid, tgrid)?;
        for (n, (lo, hi)) in lower.values().iter().zip(upper.values()).enumerate() {
            if let Some(b) = (0..lo.len()).find(|&b| lo[b] > hi[b]) {
                bail!(
                    "control.u_min: u_min = {} exceeds u_max = {} at step {n}, boundary node {b}; the box needs u_min <= u_max",
                    lo[b],
                    hi[b]
                );
            }
        }
        keyed("control", ControlBounds::new(lower, upper))
    }

    /// Builds the instance; `seed` overrides the configured one.
    pub fn setup(&self, seed: Option<u64>) -> Result<Setup> {
        let grid = self.grid()?;
        let tgrid = self.tgrid()?;
        let model = self.model(&grid, &tgrid)?;
        let bounds = self.bounds(&grid, &tgrid)?;
        let init = InitialData {
            theta0: self.field("initial.theta0", &self.initial.theta0, grid.len())?,
            phi0: self.field("initial.phi0", &self.initial.phi0, grid.len())?,
        };
        let control = self.control("control.u0", &self.control.u0, &grid, &tgrid)?;
        let theta_q = match &self.cost.theta_q {
            TargetSpec::Series(s) => self.series("cost.theta_q", s, tgrid.steps() + 1, grid.len())?,
            TargetSpec::FromControl { from_control } => {
                let u = self.control("cost.theta_q.from_control", from_control, &grid, &tgrid)?;
                model
                    .solve_state(&u, &init)
                    .map_err(|e| anyhow!("cost.theta_q.from_control: forward solve failed: {e}"))?
                    .theta
            }
        };
        let phi_omega = self.field("cost.phi_omega", &self.cost.phi_omega, grid.len())?;
        let cost = keyed("cost", CostSpec::new(self.cost.kappa1, self.cost.kappa2, theta_q, phi_omega))?;
        let instance = keyed("config", Instance::new(model, init, control, cost, bounds, seed.unwrap_or(self.seed)))?;
        let o = &self.optimizer;
        let optimize = OptimizeOptions {
            max_iter: o.max_iter,
            tol: o.tol,
            s0: o.s0,
            armijo_c1: o.c1,
            backtrack_ratio: o.backtrack_ratio,
            backtrack_budget: o.backtrack_budget,
        };
        Ok(Setup { instance, optimize, tol_sign: o.tol_sign })
    }

    pub fn grad_check_options(&self) -> GradCheckOptions {
        GradCheckOptions {
            n_directions: self.harness.n_directions,
            deltas: self.harness.deltas.clone(),
            fd_delta: self.harness.fd_delta,
            ..Default::default()
        }
    }
}
