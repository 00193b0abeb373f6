//! One-dimensional finite-volume discretization and implicit time stepping.
//!
//! Models describe themselves through [`ImplicitModel`]: per-cell blocks of
//! coupled unknowns whose right-hand side `f(u)` and Jacobian `∂f/∂u` are
//! block-tridiagonal. [`advance_step`] solves the backward-Euler system
//! `u − u_old − dt·f(u) = 0` by Newton iteration and [`integrate`] drives
//! it over a temperature schedule with adaptive steps.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::TemperatureSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Planar,
    Spherical,
}

/// Cell edges of a 1D mesh plus the coordinate system they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    edges: Vec<f64>,
    geometry: Geometry,
}

impl Mesh1D {
    pub fn new(edges: Vec<f64>, geometry: Geometry) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::domain("a mesh needs at least one cell"));
        }
        if !(edges[0] >= 0.0) {
            return Err(Error::domain("first mesh edge must be non-negative"));
        }
        if geometry == Geometry::Spherical && edges[0] != 0.0 {
            return Err(Error::domain("spherical meshes must start at the center (r = 0)"));
        }
        if let Some(w) = edges.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::domain(format!(
                "mesh edges must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { edges, geometry })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn cell_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn width(&self, cell: usize) -> f64 {
        self.edges[cell + 1] - self.edges[cell]
    }

    pub fn center(&self, cell: usize) -> f64 {
        0.5 * (self.edges[cell] + self.edges[cell + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cell_count()).map(|i| self.center(i)).collect()
    }

    pub fn volume(&self, cell: usize) -> f64 {
        let (a, b) = (self.edges[cell], self.edges[cell + 1]);
        match self.geometry {
            Geometry::Planar => b - a,
            Geometry::Spherical => 4.0 / 3.0 * PI * (b * b * b - a * a * a),
        }
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.cell_count()).map(|i| self.volume(i)).collect()
    }

    /// Area of the face at `edge` (per unit cross-section for planar meshes).
    pub fn face_area(&self, edge: usize) -> f64 {
        match self.geometry {
            Geometry::Planar => 1.0,
            Geometry::Spherical => 4.0 * PI * self.edges[edge] * self.edges[edge],
        }
    }

    pub fn first_edge(&self) -> f64 {
        self.edges[0]
    }

    pub fn last_edge(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    /// Volume-weighted integral of a cell field.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        field
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.volume(i))
            .sum()
    }

    /// Returns a copy with every coordinate divided by `length`.
    pub fn rescaled(&self, length: f64) -> Self {
        Self {
            edges: self.edges.iter().map(|e| e / length).collect(),
            geometry: self.geometry,
        }
    }
}

/// One block of a graded mesh: `cells` cells spanning `length`, each cell
/// `ratio` times the width of the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshRegion {
    pub length: f64,
    pub cells: usize,
    pub ratio: f64,
}

impl MeshRegion {
    pub fn new(length: f64, cells: usize, ratio: f64) -> Self {
        Self {
            length,
            cells,
            ratio,
        }
    }

    /// Region whose cells grade geometrically from `first` to roughly
    /// `last`, choosing the cell count so consecutive widths change by at
    /// most `max_ratio`.
    pub fn graded(length: f64, first: f64, last: f64, max_ratio: f64) -> Self {
        let first = first.min(length);
        let last = last.min(length);
        if (first - last).abs() <= 1e-12 * length || max_ratio <= 1.0 {
            let cells = (length / first.min(last)).ceil().max(1.0) as usize;
            return Self::new(length, cells, 1.0);
        }
        // Choose n, then r so that first·(r^n − 1)/(r − 1) = length.
        let growing = last > first;
        let (small, big) = if growing { (first, last) } else { (last, first) };
        let steps = ((big / small).ln() / max_ratio.ln()).ceil().max(1.0);
        let mut n = steps as usize + 1;
        // enough cells to cover the length at the coarse end
        let mean_est = (big - small) / (big / small).ln();
        n = n.max((length / mean_est).ceil() as usize);
        let r = solve_ratio(length, if growing { first } else { last }, n);
        if growing {
            Self::new(length, n, r)
        } else {
            Self::new(length, n, 1.0 / r)
        }
    }

    fn widths(&self) -> Vec<f64> {
        let n = self.cells;
        let r = self.ratio;
        let first = if (r - 1.0).abs() < 1e-12 {
            self.length / n as f64
        } else {
            self.length * (r - 1.0) / (r.powi(n as i32) - 1.0)
        };
        (0..n).map(|k| first * r.powi(k as i32)).collect()
    }
}

/// Growth ratio r ≥ 1 such that `first·(1 + r + … + r^{n−1}) = length`.
fn solve_ratio(length: f64, first: f64, n: usize) -> f64 {
    let total = |r: f64| {
        if (r - 1.0).abs() < 1e-14 {
            first * n as f64
        } else {
            first * (r.powi(n as i32) - 1.0) / (r - 1.0)
        }
    };
    if total(1.0) >= length {
        return 1.0;
    }
    let (mut lo, mut hi) = (1.0, 2.0);
    while total(hi) < length {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < length {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Concatenates graded regions into one mesh starting at the origin.
pub fn build_graded_mesh(regions: &[MeshRegion], geometry: Geometry) -> Result<Mesh1D> {
    if regions.is_empty() {
        return Err(Error::domain("mesh needs at least one region"));
    }
    let mut edges = vec![0.0];
    for (k, region) in regions.iter().enumerate() {
        if !(region.length > 0.0) || region.cells == 0 || !(region.ratio > 0.0) {
            return Err(Error::domain(format!(
                "region {k}: length and ratio must be positive and cell count at least one"
            )));
        }
        let start = *edges.last().unwrap();
        let mut x = start;
        let widths = region.widths();
        for w in &widths[..widths.len() - 1] {
            x += w;
            edges.push(x);
        }
        // pin the region end exactly
        edges.push(start + region.length);
    }
    Mesh1D::new(edges, geometry)
}

/// Scalar tridiagonal system `A·x = rhs`. `sub[0]` and `sup[n−1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn zeros(n: usize) -> Self {
        Self {
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
            rhs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.diag.len();
        if self.sub.len() != n || self.sup.len() != n || self.rhs.len() != n {
            return Err(Error::domain("tridiagonal vectors have inconsistent lengths"));
        }
        Ok(())
    }

    /// Matrix-vector product `A·x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.sup[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Thomas algorithm, no pivoting.
    pub fn solve(&self) -> Result<Vec<f64>> {
        self.check()?;
        let n = self.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut pivot = self.diag[0];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Singular { row: 0 });
        }
        c[0] = self.sup[0] / pivot;
        d[0] = self.rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.sub[i] * c[i - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Singular { row: i });
            }
            c[i] = if i + 1 < n { self.sup[i] / pivot } else { 0.0 };
            d[i] = (self.rhs[i] - self.sub[i] * d[i - 1]) / pivot;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }
}

/// Free-function form of [`TridiagonalSystem::solve`].
pub fn tridiag_solve(system: &TridiagonalSystem) -> Result<Vec<f64>> {
    system.solve()
}

/// Finite-volume diffusion operator in per-volume form.
///
/// Row `i` of the result gives `(1/V_i)·Σ_f A_f·D_f·(C_nbr − C_i)/δ_f` over
/// the interior faces of cell `i`; exterior faces contribute nothing, so
/// boundary conditions are added by the caller. `face_diffusivity[j]` is the
/// diffusivity on the face between cells `j` and `j+1`.
pub fn assemble_diffusion(mesh: &Mesh1D, face_diffusivity: &[f64]) -> Result<TridiagonalSystem> {
    let n = mesh.cell_count();
    if face_diffusivity.len() + 1 != n {
        return Err(Error::domain(format!(
            "expected {} interior-face diffusivities, got {}",
            n - 1,
            face_diffusivity.len()
        )));
    }
    if let Some(d) = face_diffusivity.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::domain(format!("face diffusivity must be non-negative, got {d}")));
    }
    let mut sys = TridiagonalSystem::zeros(n);
    for (j, &d) in face_diffusivity.iter().enumerate() {
        let left = j;
        let right = j + 1;
        let conductance = mesh.face_area(right) * d / (mesh.center(right) - mesh.center(left));
        let vl = mesh.volume(left);
        let vr = mesh.volume(right);
        sys.diag[left] -= conductance / vl;
        sys.sup[left] += conductance / vl;
        sys.diag[right] -= conductance / vr;
        sys.sub[right] += conductance / vr;
    }
    Ok(sys)
}

/// Harmonic mean of two cell values, zero if either is zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Block-tridiagonal matrix with `block × block` dense blocks per cell.
///
/// `lower[i]` couples cell `i` to cell `i−1`, `upper[i]` to cell `i+1`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    cells: usize,
    block: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl BlockTridiagonal {
    pub fn zeros(cells: usize, block: usize) -> Self {
        let len = cells * block * block;
        Self {
            cells,
            block,
            lower: vec![0.0; len],
            diag: vec![0.0; len],
            upper: vec![0.0; len],
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn clear(&mut self) {
        self.lower.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        self.upper.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn at(&self, cell: usize, row: usize, col: usize) -> usize {
        (cell * self.block + row) * self.block + col
    }

    #[inline]
    pub fn add_diag(&mut self, cell: usize, row: usize, col: usize, v: f64) {
        let k = self.at(cell, row, col);
        self.diag[k] += v;
    }

    #[inline]
    pub fn add_lower(&mut self, cell: usize, row: usize, col: usize, v: f64) {
        let k = self.at(cell, row, col);
        self.lower[k] += v;
    }

    #[inline]
    pub fn add_upper(&mut self, cell: usize, row: usize, col: usize, v: f64) {
        let k = self.at(cell, row, col);
        self.upper[k] += v;
    }

    pub fn diag_entry(&self, cell: usize, row: usize, col: usize) -> f64 {
        self.diag[self.at(cell, row, col)]
    }

    /// Replaces `J` with `I − factor·J`.
    pub fn identity_minus_scaled(&mut self, factor: f64) {
        for v in self
            .lower
            .iter_mut()
            .chain(self.diag.iter_mut())
            .chain(self.upper.iter_mut())
        {
            *v *= -factor;
        }
        for cell in 0..self.cells {
            for r in 0..self.block {
                let k = self.at(cell, r, r);
                self.diag[k] += 1.0;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let b = self.block;
        let mut y = vec![0.0; self.cells * b];
        for i in 0..self.cells {
            for r in 0..b {
                let mut acc = 0.0;
                for c in 0..b {
                    acc += self.diag[self.at(i, r, c)] * x[i * b + c];
                    if i > 0 {
                        acc += self.lower[self.at(i, r, c)] * x[(i - 1) * b + c];
                    }
                    if i + 1 < self.cells {
                        acc += self.upper[self.at(i, r, c)] * x[(i + 1) * b + c];
                    }
                }
                y[i * b + r] = acc;
            }
        }
        y
    }

    fn block_matrix(data: &[f64], cell: usize, b: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(b, b, &data[cell * b * b..(cell + 1) * b * b])
    }

    /// Block Thomas elimination with partial pivoting inside each block.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = self.block;
        let n = self.cells;
        if rhs.len() != n * b {
            return Err(Error::domain("right-hand side length does not match the matrix"));
        }
        // X_i = D'_i⁻¹ U_i, z_i = D'_i⁻¹ y_i
        let mut xs: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut zs: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut d = Self::block_matrix(&self.diag, i, b);
            let mut y = DVector::from_column_slice(&rhs[i * b..(i + 1) * b]);
            if i > 0 {
                let l = Self::block_matrix(&self.lower, i, b);
                d -= &l * &xs[i - 1];
                y -= &l * &zs[i - 1];
            }
            let lu = d.lu();
            let singular = || Error::Singular { row: i * b };
            let z = lu.solve(&y).ok_or_else(singular)?;
            let x = if i + 1 < n {
                lu.solve(&Self::block_matrix(&self.upper, i, b)).ok_or_else(singular)?
            } else {
                DMatrix::zeros(b, b)
            };
            if z.iter().any(|v| !v.is_finite()) {
                return Err(singular());
            }
            xs.push(x);
            zs.push(z);
        }
        let mut out = vec![0.0; n * b];
        let mut next: Option<DVector<f64>> = None;
        for i in (0..n).rev() {
            let mut xi = zs[i].clone();
            if let Some(nx) = &next {
                xi -= &xs[i] * nx;
            }
            out[i * b..(i + 1) * b].copy_from_slice(xi.as_slice());
            next = Some(xi);
        }
        Ok(out)
    }
}

/// Adaptive step-size and Newton settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepController {
    pub dt_initial: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub growth_factor: f64,
    pub shrink_factor: f64,
    /// Residual test: `|F_i| ≤ tol·(|u_i| + scale_i)` for every component.
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
}

impl Default for StepController {
    fn default() -> Self {
        Self {
            dt_initial: 1e-2,
            dt_min: 1e-10,
            dt_max: 10.0,
            growth_factor: 1.5,
            shrink_factor: 0.5,
            newton_tolerance: 1e-8,
            newton_max_iterations: 15,
        }
    }
}

impl StepController {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_initial && self.dt_initial <= self.dt_max) {
            return Err(Error::domain("step controller needs 0 < dt_min ≤ dt_initial ≤ dt_max"));
        }
        if !(self.growth_factor > 1.0) {
            return Err(Error::domain("growth factor must exceed 1"));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::domain("shrink factor must lie in (0, 1)"));
        }
        if !(self.newton_tolerance > 0.0) || self.newton_max_iterations == 0 {
            return Err(Error::domain("Newton tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    /// Fixed-step controller, handy for convergence studies.
    pub fn fixed(dt: f64) -> Self {
        Self {
            dt_initial: dt,
            dt_min: dt * 1e-6,
            dt_max: dt,
            ..Self::default()
        }
    }
}

/// Discretized state: per-cell blocks plus decoupled auxiliary scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub time: f64,
    pub fields: Vec<f64>,
    pub aux: Vec<f64>,
}

/// A system `du/dt = f(u, t)` with block-tridiagonal Jacobian.
pub trait ImplicitModel {
    fn cells(&self) -> usize;

    /// Unknowns per cell.
    fn block(&self) -> usize;

    /// Absolute magnitude of block component `component` below which
    /// residuals and negative excursions are negligible.
    fn scale(&self, component: usize) -> f64;

    /// Advances the auxiliary scalars over `[t0, t1]`. They may depend on
    /// time and temperature only, never on the field unknowns.
    fn advance_auxiliary(&self, aux: &[f64], _t0: f64, _t1: f64, _schedule: &TemperatureSchedule) -> Vec<f64> {
        aux.to_vec()
    }

    /// Writes `f(u)` into `rate` and, when requested, `∂f/∂u` into `jacobian`
    /// (which arrives zeroed).
    fn rate(
        &self,
        time: f64,
        temperature: f64,
        u: &[f64],
        aux: &[f64],
        rate: &mut [f64],
        jacobian: Option<&mut BlockTridiagonal>,
    );
}

/// Why a step was not accepted.
#[derive(Debug, Clone, PartialEq)]
pub enum StepRejection {
    NotConverged { residual: f64 },
    Negative { index: usize, value: f64 },
    NonFinite,
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: State,
    pub newton_iterations: usize,
}

fn weighted_residual<M: ImplicitModel + ?Sized>(model: &M, residual: &[f64], u: &[f64], tol: f64) -> f64 {
    let b = model.block();
    residual
        .iter()
        .zip(u)
        .enumerate()
        .map(|(k, (r, v))| r.abs() / (tol * (v.abs() + model.scale(k % b))))
        .fold(0.0, f64::max)
}

/// One backward-Euler step of size `dt` from `state`, solved by Newton.
///
/// Newton stops once either the weighted residual or the weighted update
/// falls below the tolerance.
pub fn advance_step<M: ImplicitModel + ?Sized>(
    model: &M,
    state: &State,
    schedule: &TemperatureSchedule,
    dt: f64,
    controller: &StepController,
) -> std::result::Result<StepOutcome, StepRejection> {
    let n = model.cells() * model.block();
    let t1 = state.time + dt;
    let temperature = schedule.eval(t1);
    let aux = model.advance_auxiliary(&state.aux, state.time, t1, schedule);
    let mut u = state.fields.clone();
    let mut f = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut jac = BlockTridiagonal::zeros(model.cells(), model.block());
    let tol = controller.newton_tolerance;
    let mut iterations = 0;
    loop {
        jac.clear();
        model.rate(t1, temperature, &u, &aux, &mut f, Some(&mut jac));
        for k in 0..n {
            residual[k] = u[k] - state.fields[k] - dt * f[k];
        }
        if residual.iter().any(|r| !r.is_finite()) {
            return Err(StepRejection::NonFinite);
        }
        let norm = weighted_residual(model, &residual, &u, tol);
        if norm <= 1.0 {
            break;
        }
        if iterations == controller.newton_max_iterations {
            return Err(StepRejection::NotConverged { residual: norm });
        }
        jac.identity_minus_scaled(dt);
        let neg: Vec<f64> = residual.iter().map(|r| -r).collect();
        let delta = jac.solve(&neg).map_err(|_| StepRejection::Singular)?;
        for (uk, dk) in u.iter_mut().zip(&delta) {
            *uk += dk;
        }
        iterations += 1;
        if weighted_residual(model, &delta, &u, tol) <= 1.0 {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(StepRejection::NonFinite);
            }
            break;
        }
    }
    let b = model.block();
    if let Some((index, &value)) = u
        .iter()
        .enumerate()
        .find(|(k, v)| **v < -model.scale(k % b))
    {
        return Err(StepRejection::Negative { index, value });
    }
    Ok(StepOutcome {
        state: State {
            time: t1,
            fields: u,
            aux,
        },
        newton_iterations: iterations,
    })
}

/// What an observer sees after each accepted step.
#[derive(Debug)]
pub struct Observation<'a> {
    pub time: f64,
    pub temperature: f64,
    pub dt: f64,
    pub newton_iterations: usize,
    pub state: &'a State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationSummary {
    pub final_state: State,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Integrates from `initial.time` to `t_end` with adaptive backward Euler.
///
/// The step grows by `growth_factor` after an easy Newton solve (at most a
/// third of the iteration cap) and shrinks by `shrink_factor` on rejection.
/// `observer` is called once per accepted step, in time order.
pub fn integrate<M, O>(
    model: &M,
    schedule: &TemperatureSchedule,
    initial: State,
    t_end: f64,
    controller: &StepController,
    mut observer: O,
) -> Result<IntegrationSummary>
where
    M: ImplicitModel + ?Sized,
    O: FnMut(&Observation<'_>),
{
    controller.validate()?;
    if !(t_end > initial.time) {
        return Err(Error::domain(format!(
            "end time {t_end} must exceed start time {}",
            initial.time
        )));
    }
    if initial.fields.len() != model.cells() * model.block() {
        return Err(Error::domain("initial state does not match the model layout"));
    }
    let mut state = initial;
    let mut dt = controller.dt_initial;
    let mut accepted = 0;
    let mut rejected = 0;
    let easy = (controller.newton_max_iterations / 3).max(2);
    while state.time < t_end {
        let remaining = t_end - state.time;
        // swallow a sliver at the end rather than taking a tiny final step
        let step = if remaining <= dt * 1.01 { remaining } else { dt };
        match advance_step(model, &state, schedule, step, controller) {
            Ok(outcome) => {
                state = outcome.state;
                if step == remaining {
                    state.time = t_end;
                }
                accepted += 1;
                observer(&Observation {
                    time: state.time,
                    temperature: schedule.eval(state.time),
                    dt: step,
                    newton_iterations: outcome.newton_iterations,
                    state: &state,
                });
                if outcome.newton_iterations <= easy {
                    dt = (dt * controller.growth_factor).min(controller.dt_max);
                }
            }
            Err(reason) => {
                rejected += 1;
                dt = step * controller.shrink_factor;
                if dt < controller.dt_min {
                    return Err(Error::Integration {
                        time: state.time,
                        temperature: schedule.eval(state.time),
                        reason: format!("step fell below dt_min = {:e} ({reason:?})", controller.dt_min),
                    });
                }
            }
        }
    }
    Ok(IntegrationSummary {
        final_state: state,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}
