//! Uniform tensor grids on an interval or a rectangle, together with the
//! quadrature rules and the finite-difference operators used by every solver.
//!
//! Nodes are numbered row-major: node `(i, j)` of a rectangle has index
//! `i + nx * j`. Boundary nodes are listed in increasing node index, and every
//! [`BoundaryField`] follows that order.
//!
//! The operators are built so that, with `M = diag(interior_weights)`,
//! `B = diag(boundary_weights)` and the stiffness matrix `K`,
//!
//! ```text
//!     M * laplacian(f, g) = -K f + B g
//! ```
//!
//! holds exactly. This is the identity that lets the weak form and the
//! ghost-node strong form describe the same discrete equations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandedSym;

/// Nodal values on the spatial grid.
pub type Field = Vec<f64>;
/// Values on the boundary nodes, in boundary index order.
pub type BoundaryField = Vec<f64>;
/// One [`Field`] per time node.
pub type SpaceTimeField = Vec<Field>;
/// One [`BoundaryField`] per time node (or per time step for controls).
pub type BoundarySpaceTimeField = Vec<BoundaryField>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Interval,
    Rectangle,
}

impl Dimension {
    pub fn axes(self) -> usize {
        match self {
            Dimension::Interval => 1,
            Dimension::Rectangle => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    dimension: Dimension,
    lengths: Vec<f64>,
    node_counts: Vec<usize>,
    spacing: Vec<f64>,
    interior_weights: Vec<f64>,
    boundary_nodes: Vec<usize>,
    boundary_weights: Vec<f64>,
    boundary_slot: Vec<Option<usize>>,
}

impl SpatialGrid {
    pub fn interval(length: f64, nodes: usize) -> Result<Self> {
        build_grid(Dimension::Interval, &[length], &[nodes])
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        build_grid(Dimension::Rectangle, &[lx, ly], &[nx, ny])
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.interior_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior_weights.is_empty()
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary_nodes.len()
    }

    pub fn interior_weights(&self) -> &[f64] {
        &self.interior_weights
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn boundary_weights(&self) -> &[f64] {
        &self.boundary_weights
    }

    /// Position of `node` in the boundary ordering, if it is a boundary node.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    /// Measure of the domain (product of the side lengths).
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Measure of the boundary; the two endpoints of an interval count once each.
    pub fn perimeter(&self) -> f64 {
        match self.dimension {
            Dimension::Interval => 2.0,
            Dimension::Rectangle => 2.0 * (self.lengths[0] + self.lengths[1]),
        }
    }

    /// Physical coordinates of a node.
    pub fn coordinates(&self, node: usize) -> Vec<f64> {
        match self.dimension {
            Dimension::Interval => vec![node as f64 * self.spacing[0]],
            Dimension::Rectangle => {
                let nx = self.node_counts[0];
                vec![
                    (node % nx) as f64 * self.spacing[0],
                    (node / nx) as f64 * self.spacing[1],
                ]
            }
        }
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Field {
        (0..self.len()).map(|i| f(&self.coordinates(i))).collect()
    }

    /// Half bandwidth of the stiffness matrix under row-major numbering.
    pub fn bandwidth(&self) -> usize {
        match self.dimension {
            Dimension::Interval => 1,
            Dimension::Rectangle => self.node_counts[0],
        }
    }

    /// Assembles the stiffness matrix `K` (the negative of the weighted
    /// zero-flux Laplacian), a symmetric positive semidefinite banded matrix.
    pub fn stiffness(&self) -> BandedSym {
        let mut k = BandedSym::zeros(self.len(), self.bandwidth());
        match self.dimension {
            Dimension::Interval => {
                let n = self.node_counts[0];
                let inv_h = 1.0 / self.spacing[0];
                for i in 0..n - 1 {
                    add_edge(&mut k, i, i + 1, inv_h);
                }
            }
            Dimension::Rectangle => {
                let (nx, ny) = (self.node_counts[0], self.node_counts[1]);
                let (hx, hy) = (self.spacing[0], self.spacing[1]);
                let mass_x = axis_mass(nx, hx);
                let mass_y = axis_mass(ny, hy);
                for j in 0..ny {
                    for i in 0..nx - 1 {
                        add_edge(&mut k, i + nx * j, i + 1 + nx * j, mass_y[j] / hx);
                    }
                }
                for j in 0..ny - 1 {
                    for i in 0..nx {
                        add_edge(&mut k, i + nx * j, i + nx * (j + 1), mass_x[i] / hy);
                    }
                }
            }
        }
        k
    }

    pub(crate) fn check_field(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.len() {
            return Err(Error::SizeMismatch {
                what: "field",
                expected: self.len(),
                found: field.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_boundary(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.boundary_len() {
            return Err(Error::SizeMismatch {
                what: "boundary field",
                expected: self.boundary_len(),
                found: field.len(),
            });
        }
        Ok(())
    }
}

fn axis_mass(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

fn add_edge(k: &mut BandedSym, a: usize, b: usize, c: f64) {
    k.add(a, a, c);
    k.add(b, b, c);
    k.add(a, b, -c);
}

/// Builds a uniform tensor grid with trapezoidal weights.
pub fn build_grid(dimension: Dimension, lengths: &[f64], node_counts: &[usize]) -> Result<SpatialGrid> {
    let axes = dimension.axes();
    if lengths.len() != axes || node_counts.len() != axes {
        return Err(Error::InvalidGrid(format!(
            "{dimension:?} needs {axes} lengths and node counts"
        )));
    }
    if let Some(&n) = node_counts.iter().find(|&&n| n < 3) {
        return Err(Error::InvalidGrid(format!(
            "node count {n} leaves no interior node (need at least 3)"
        )));
    }
    if let Some(&l) = lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidGrid(format!("length {l} must be positive")));
    }
    let spacing: Vec<f64> = lengths
        .iter()
        .zip(node_counts)
        .map(|(&l, &n)| l / (n - 1) as f64)
        .collect();

    let (interior_weights, boundary_nodes, boundary_weights) = match dimension {
        Dimension::Interval => {
            let n = node_counts[0];
            (axis_mass(n, spacing[0]), vec![0, n - 1], vec![1.0, 1.0])
        }
        Dimension::Rectangle => {
            let (nx, ny) = (node_counts[0], node_counts[1]);
            let (hx, hy) = (spacing[0], spacing[1]);
            let (mx, my) = (axis_mass(nx, hx), axis_mass(ny, hy));
            let mut interior = Vec::with_capacity(nx * ny);
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for j in 0..ny {
                for i in 0..nx {
                    interior.push(mx[i] * my[j]);
                    let on_x = i == 0 || i == nx - 1;
                    let on_y = j == 0 || j == ny - 1;
                    if on_x || on_y {
                        // Each boundary node collects the trapezoid weight of
                        // every edge it lies on.
                        let mut w = 0.0;
                        if on_x {
                            w += my[j];
                        }
                        if on_y {
                            w += mx[i];
                        }
                        nodes.push(i + nx * j);
                        weights.push(w);
                    }
                }
            }
            (interior, nodes, weights)
        }
    };

    let mut boundary_slot = vec![None; interior_weights.len()];
    for (slot, &node) in boundary_nodes.iter().enumerate() {
        boundary_slot[node] = Some(slot);
    }

    Ok(SpatialGrid {
        dimension,
        lengths: lengths.to_vec(),
        node_counts: node_counts.to_vec(),
        spacing,
        interior_weights,
        boundary_nodes,
        boundary_weights,
        boundary_slot,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one time step is required".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Trapezoid weight of time node `k` for integrals over `[0, T]`.
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}

/// Trapezoidal quadrature over the domain.
pub fn integrate_domain(grid: &SpatialGrid, field: &[f64]) -> Result<f64> {
    grid.check_field(field)?;
    Ok(dot(grid.interior_weights(), field))
}

/// Quadrature over the boundary with the boundary weights.
pub fn integrate_boundary(grid: &SpatialGrid, field: &[f64]) -> Result<f64> {
    grid.check_boundary(field)?;
    Ok(dot(grid.boundary_weights(), field))
}

/// Restriction of a nodal field to the boundary nodes.
pub fn trace(grid: &SpatialGrid, field: &[f64]) -> Result<BoundaryField> {
    grid.check_field(field)?;
    Ok(grid.boundary_nodes().iter().map(|&b| field[b]).collect())
}

/// Extends a boundary field by zero into the domain; `trace` inverts it.
pub fn embed(grid: &SpatialGrid, boundary: &[f64]) -> Result<Field> {
    grid.check_boundary(boundary)?;
    let mut out = vec![0.0; grid.len()];
    for (&b, &v) in grid.boundary_nodes().iter().zip(boundary) {
        out[b] = v;
    }
    Ok(out)
}

/// Second-order centered Laplacian. At boundary nodes the ghost values are
/// eliminated using the prescribed outward normal derivative `neumann_flux`.
pub fn discrete_laplacian(grid: &SpatialGrid, field: &[f64], neumann_flux: &[f64]) -> Result<Field> {
    grid.check_field(field)?;
    grid.check_boundary(neumann_flux)?;
    let mut out = vec![0.0; grid.len()];
    match grid.dimension() {
        Dimension::Interval => {
            let n = grid.node_counts()[0];
            let h = grid.spacing()[0];
            let h2 = h * h;
            out[0] = 2.0 * (field[1] - field[0]) / h2 + 2.0 * neumann_flux[0] / h;
            out[n - 1] = 2.0 * (field[n - 2] - field[n - 1]) / h2 + 2.0 * neumann_flux[1] / h;
            for i in 1..n - 1 {
                out[i] = (field[i - 1] - 2.0 * field[i] + field[i + 1]) / h2;
            }
        }
        Dimension::Rectangle => {
            let (nx, ny) = (grid.node_counts()[0], grid.node_counts()[1]);
            let (hx, hy) = (grid.spacing()[0], grid.spacing()[1]);
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * j;
                    let flux = grid.boundary_slot(idx).map_or(0.0, |s| neumann_flux[s]);
                    out[idx] = axis_second_difference(field, idx, i, nx, 1, hx, flux)
                        + axis_second_difference(field, idx, j, ny, nx, hy, flux);
                }
            }
        }
    }
    Ok(out)
}

fn axis_second_difference(f: &[f64], idx: usize, pos: usize, n: usize, stride: usize, h: f64, flux: f64) -> f64 {
    let h2 = h * h;
    if pos == 0 {
        2.0 * (f[idx + stride] - f[idx]) / h2 + 2.0 * flux / h
    } else if pos == n - 1 {
        2.0 * (f[idx - stride] - f[idx]) / h2 + 2.0 * flux / h
    } else {
        (f[idx - stride] - 2.0 * f[idx] + f[idx + stride]) / h2
    }
}

/// Cumulative trapezoid `(1 * v)(t_k) = \int_0^{t_k} v`.
pub fn convolve_time(tgrid: &TimeGrid, series: &[f64]) -> Result<Vec<f64>> {
    if series.len() != tgrid.steps() + 1 {
        return Err(Error::SizeMismatch {
            what: "time series",
            expected: tgrid.steps() + 1,
            found: series.len(),
        });
    }
    let dt = tgrid.dt();
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in series.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    Ok(out)
}

/// Same as [`convolve_time`] applied nodewise to a space-time field.
pub fn convolve_time_field(tgrid: &TimeGrid, series: &[Field]) -> Vec<Field> {
    let dt = tgrid.dt();
    let width = series.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; width];
    let mut out = Vec::with_capacity(series.len());
    out.push(acc.clone());
    for w in series.windows(2) {
        for ((a, x), y) in acc.iter_mut().zip(&w[0]).zip(&w[1]) {
            *a += 0.5 * dt * (x + y);
        }
        out.push(acc.clone());
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_i w_i a_i b_i`.
pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}
