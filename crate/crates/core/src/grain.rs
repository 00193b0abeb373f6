//! Tritium release from a spherical ceramic grain during a heating ramp.
//!
//! Mobile tritium `C` diffuses radially and exchanges with a single trap
//! population `C_T` whose capacity `χ·N` shrinks by first-order defect
//! annihilation:
//!
//! ```text
//! ∂C_T/∂t = α_t·(χN − C_T)·C/N − α_r·C_T − k_a·C_T
//! dχ/dt   = −k_a·χ
//! ∂C/∂t   = ∇·(D∇C) − ∂C_T/∂t
//! ```
//!
//! with `∂C/∂r = 0` at the center and `C = 0` at the grain surface. Tritium
//! released from annihilated traps therefore re-enters the mobile pool.

use serde::{Deserialize, Serialize};

use crate::curve::{CurveSample, ReleaseCurve};
use crate::error::{Error, Result};
use crate::kinetics::{ArrheniusRate, TemperatureSchedule};
use crate::numerics::{
    build_graded_mesh, integrate, BlockTridiagonal, Geometry, ImplicitModel, Mesh1D, MeshRegion, State,
    StepController,
};

/// Physical inputs of the grain model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrainParams {
    /// Grain radius, m.
    pub grain_radius: f64,
    /// Mobile diffusivity, m²/s.
    pub diffusivity: ArrheniusRate,
    /// Trapping frequency, 1/s.
    pub trapping: ArrheniusRate,
    /// Detrapping frequency, 1/s.
    pub detrapping: ArrheniusRate,
    /// Defect annihilation rate, 1/s.
    pub annihilation: ArrheniusRate,
    /// Host lattice site density, atoms/m³.
    pub lattice_density: f64,
    /// Initial defect density, atoms/m³; sets `χ(0) = D_id/N`.
    pub defect_density: f64,
    pub schedule: TemperatureSchedule,
    /// Initial fraction of trap sites that are occupied, in (0, 1).
    pub initial_occupancy: f64,
    /// Uniform initial mobile concentration (atoms/m³). When absent, the
    /// mobile field starts in trapping/detrapping equilibrium.
    #[serde(default)]
    pub initial_mobile: Option<f64>,
}

impl GrainParams {
    /// Sample E reference parameters: 1.5 µm grains ramped at 5 K/min from
    /// 300 K to 900 K.
    pub fn sample_e_reference() -> Self {
        let rate = |a, e| ArrheniusRate::new(a, e).expect("static parameters are valid");
        Self {
            grain_radius: 1.5e-6,
            diffusivity: rate(6.9e-7, 1.07),
            trapping: rate(4.2e8, 1.04),
            detrapping: rate(4.1e6, 1.19),
            annihilation: rate(1.0e2, 0.9),
            lattice_density: 1.88e28,
            defect_density: 3.384e26,
            schedule: TemperatureSchedule::linear_ramp(300.0, 5.0, 7200.0).expect("static ramp is valid"),
            initial_occupancy: 0.99,
            initial_mobile: None,
        }
    }

    /// Sample E with the Bayesian-optimized kinetic parameters.
    pub fn sample_e_optimized() -> Self {
        let rate = |a, e| ArrheniusRate::new(a, e).expect("static parameters are valid");
        Self {
            diffusivity: rate(4.50e-6, 1.01),
            trapping: rate(2.21e7, 0.82),
            detrapping: rate(2.14e5, 1.08),
            annihilation: rate(8.26e1, 1.27),
            ..Self::sample_e_reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grain_radius > 0.0) {
            return Err(Error::domain("grain radius must be positive"));
        }
        if !(self.lattice_density > 0.0) {
            return Err(Error::domain("lattice density must be positive"));
        }
        if !(self.defect_density >= 0.0 && self.defect_density <= self.lattice_density) {
            return Err(Error::domain("defect density must lie in [0, N]"));
        }
        if !(self.initial_occupancy > 0.0 && self.initial_occupancy < 1.0) {
            return Err(Error::domain(format!(
                "initial occupancy must lie strictly between 0 and 1, got {}",
                self.initial_occupancy
            )));
        }
        if let Some(c) = self.initial_mobile {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::domain("initial mobile concentration must be non-negative"));
            }
        }
        Ok(())
    }

    /// Initial trap site fraction `χ(0) = D_id / N`.
    pub fn initial_trap_fraction(&self) -> f64 {
        self.defect_density / self.lattice_density
    }
}

/// Radial mesh for the grain: `cells` cells shrinking geometrically by
/// `grading` toward the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrainMeshSpec {
    pub cells: usize,
    pub grading: f64,
}

impl Default for GrainMeshSpec {
    fn default() -> Self {
        Self {
            cells: 200,
            grading: 1.02,
        }
    }
}

impl GrainMeshSpec {
    pub fn build(&self, radius: f64) -> Result<Mesh1D> {
        if !(self.grading > 0.0) {
            return Err(Error::domain("mesh grading must be positive"));
        }
        build_graded_mesh(&[MeshRegion::new(radius, self.cells, 1.0 / self.grading)], Geometry::Spherical)
    }
}

/// Step controller used for grain runs unless the caller overrides it.
pub fn default_controller() -> StepController {
    StepController {
        dt_initial: 1.0,
        dt_min: 1e-8,
        dt_max: 10.0,
        growth_factor: 1.5,
        shrink_factor: 0.5,
        newton_tolerance: 1e-8,
        newton_max_iterations: 15,
    }
}

/// Tighter steps for conservation and convergence checks.
pub fn tight_controller() -> StepController {
    StepController {
        dt_max: 2.0,
        dt_initial: 0.1,
        newton_tolerance: 1e-10,
        ..default_controller()
    }
}

/// Discrete grain state.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainState {
    /// Mobile concentration per cell, atoms/m³.
    pub mobile: Vec<f64>,
    /// Trapped concentration per cell, atoms/m³.
    pub trapped: Vec<f64>,
    /// Trap site fraction χ.
    pub trap_fraction: f64,
    pub time: f64,
}

impl GrainState {
    pub fn to_state(&self) -> State {
        let fields = self
            .mobile
            .iter()
            .zip(&self.trapped)
            .flat_map(|(c, ct)| [*c, *ct])
            .collect();
        State {
            time: self.time,
            fields,
            aux: vec![self.trap_fraction],
        }
    }

    pub fn from_state(state: &State) -> Self {
        let mobile = state.fields.iter().step_by(2).copied().collect();
        let trapped = state.fields.iter().skip(1).step_by(2).copied().collect();
        Self {
            mobile,
            trapped,
            trap_fraction: state.aux[0],
            time: state.time,
        }
    }

    /// Total tritium `∫(C + C_T) dV`, atoms.
    pub fn inventory(&self, mesh: &Mesh1D) -> f64 {
        mesh.integrate(&self.mobile) + mesh.integrate(&self.trapped)
    }
}

/// Initial state with trap occupancy `θ₀` and the mobile field in local
/// trapping/detrapping balance at the starting temperature.
pub fn init_equilibrium(params: &GrainParams, cells: usize) -> Result<GrainState> {
    params.validate()?;
    let chi = params.initial_trap_fraction();
    let n = params.lattice_density;
    let trapped = params.initial_occupancy * chi * n;
    let mobile = match params.initial_mobile {
        Some(c) => c,
        None => {
            let t0 = params.schedule.eval(params.schedule.start_time());
            let at = params.trapping.eval(t0)?;
            let ar = params.detrapping.eval(t0)?;
            let empty = chi * n - trapped;
            if !(empty > 0.0) {
                return Err(Error::domain("no empty trap sites: equilibrium mobile concentration undefined"));
            }
            ar * trapped * n / (at * empty)
        }
    };
    Ok(GrainState {
        mobile: vec![mobile; cells],
        trapped: vec![trapped; cells],
        trap_fraction: chi,
        time: params.schedule.start_time(),
    })
}

/// Time derivatives of the grain fields.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainRates {
    pub mobile: Vec<f64>,
    pub trapped: Vec<f64>,
    pub trap_fraction: f64,
}

/// The grain system as an implicit model on a fixed mesh.
pub struct GrainModel<'a> {
    params: &'a GrainParams,
    mesh: Mesh1D,
    volumes: Vec<f64>,
    /// `A_f / δ_f` for each interior face.
    face_geometry: Vec<f64>,
    /// `A_s / δ_s` for the Dirichlet surface (ghost at the surface).
    surface_geometry: f64,
    scale: f64,
}

impl<'a> GrainModel<'a> {
    pub fn new(params: &'a GrainParams, mesh: Mesh1D) -> Result<Self> {
        params.validate()?;
        if mesh.geometry() != Geometry::Spherical {
            return Err(Error::domain("grain model requires a spherical mesh"));
        }
        if ((mesh.last_edge() - params.grain_radius) / params.grain_radius).abs() > 1e-12 {
            return Err(Error::domain("mesh radius does not match the grain radius"));
        }
        let n = mesh.cell_count();
        let face_geometry = (1..n)
            .map(|e| mesh.face_area(e) / (mesh.center(e) - mesh.center(e - 1)))
            .collect();
        let surface_geometry = mesh.face_area(n) / (mesh.last_edge() - mesh.center(n - 1));
        let reference = params
            .defect_density
            .max(params.initial_mobile.unwrap_or(0.0))
            .max(1.0);
        Ok(Self {
            params,
            volumes: mesh.volumes(),
            mesh,
            face_geometry,
            surface_geometry,
            scale: 1e-10 * reference,
        })
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    /// Surface outflux `A_s·D·C_last/δ_s`, atoms/s.
    pub fn release_rate(&self, state: &GrainState, temperature: f64) -> f64 {
        let d = self.params.diffusivity.at(temperature);
        self.surface_geometry * d * state.mobile[state.mobile.len() - 1]
    }

    /// Right-hand side of the semi-discrete system.
    pub fn rates(&self, state: &GrainState, temperature: f64) -> GrainRates {
        let st = state.to_state();
        let mut f = vec![0.0; st.fields.len()];
        self.rate(state.time, temperature, &st.fields, &st.aux, &mut f, None);
        GrainRates {
            mobile: f.iter().step_by(2).copied().collect(),
            trapped: f.iter().skip(1).step_by(2).copied().collect(),
            trap_fraction: -self.params.annihilation.at(temperature) * state.trap_fraction,
        }
    }
}

impl ImplicitModel for GrainModel<'_> {
    fn cells(&self) -> usize {
        self.mesh.cell_count()
    }

    fn block(&self) -> usize {
        2
    }

    fn scale(&self, _component: usize) -> f64 {
        self.scale
    }

    /// χ decays as `exp(−∫k_a dt)`; the integral uses 3-point Gauss–Legendre
    /// quadrature over the step, exact for constant temperature.
    fn advance_auxiliary(&self, aux: &[f64], t0: f64, t1: f64, schedule: &TemperatureSchedule) -> Vec<f64> {
        let half = 0.5 * (t1 - t0);
        let mid = 0.5 * (t0 + t1);
        let g = (0.6f64).sqrt();
        let k = |t: f64| self.params.annihilation.at(schedule.eval(t));
        let integral = half * (5.0 / 9.0 * k(mid - g * half) + 8.0 / 9.0 * k(mid) + 5.0 / 9.0 * k(mid + g * half));
        vec![aux[0] * (-integral).exp()]
    }

    fn rate(
        &self,
        _time: f64,
        temperature: f64,
        u: &[f64],
        aux: &[f64],
        rate: &mut [f64],
        mut jacobian: Option<&mut BlockTridiagonal>,
    ) {
        let p = self.params;
        let n = self.mesh.cell_count();
        let d = p.diffusivity.at(temperature);
        let at = p.trapping.at(temperature);
        let ar = p.detrapping.at(temperature);
        let ka = p.annihilation.at(temperature);
        let lattice = p.lattice_density;
        let capacity = aux[0] * lattice;

        for i in 0..n {
            let c = u[2 * i];
            let ct = u[2 * i + 1];
            let empty = capacity - ct;
            let trap = at * empty * c / lattice - (ar + ka) * ct;
            let dtrap_dc = at * empty / lattice;
            let dtrap_dct = -at * c / lattice - ar - ka;

            let mut diffusion = 0.0;
            let mut ddiff_self = 0.0;
            let v = self.volumes[i];
            if i > 0 {
                let g = d * self.face_geometry[i - 1] / v;
                diffusion += g * (u[2 * (i - 1)] - c);
                ddiff_self -= g;
                if let Some(j) = jacobian.as_deref_mut() {
                    j.add_lower(i, 0, 0, g);
                }
            }
            if i + 1 < n {
                let g = d * self.face_geometry[i] / v;
                diffusion += g * (u[2 * (i + 1)] - c);
                ddiff_self -= g;
                if let Some(j) = jacobian.as_deref_mut() {
                    j.add_upper(i, 0, 0, g);
                }
            } else {
                let g = d * self.surface_geometry / v;
                diffusion -= g * c;
                ddiff_self -= g;
            }

            rate[2 * i] = diffusion - trap;
            rate[2 * i + 1] = trap;
            if let Some(j) = jacobian.as_deref_mut() {
                j.add_diag(i, 0, 0, ddiff_self - dtrap_dc);
                j.add_diag(i, 0, 1, -dtrap_dct);
                j.add_diag(i, 1, 0, dtrap_dc);
                j.add_diag(i, 1, 1, dtrap_dct);
            }
        }
    }
}

/// Free-function form of [`GrainModel::rates`] on the default mesh layout.
pub fn grain_rhs(state: &GrainState, temperature: f64, params: &GrainParams, mesh: &Mesh1D) -> Result<GrainRates> {
    let model = GrainModel::new(params, mesh.clone())?;
    Ok(model.rates(state, temperature))
}

/// One accepted step of a grain run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrainRecord {
    pub time: f64,
    pub temperature: f64,
    pub release_rate: f64,
    pub trap_fraction: f64,
    pub inventory: f64,
    pub max_trap_fill: f64,
}

/// Output of a full grain TDS simulation.
#[derive(Debug, Clone)]
pub struct GrainRun {
    /// Surface release rate (atoms/s), including the initial sample.
    pub curve: ReleaseCurve,
    pub records: Vec<GrainRecord>,
    pub initial_state: GrainState,
    pub final_state: GrainState,
    pub mesh: Mesh1D,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl GrainRun {
    pub fn initial_inventory(&self) -> f64 {
        self.initial_state.inventory(&self.mesh)
    }

    pub fn final_inventory(&self) -> f64 {
        self.final_state.inventory(&self.mesh)
    }

    /// Trapezoidal cumulative release over the whole run.
    pub fn released(&self) -> f64 {
        self.curve.integral()
    }

    /// `|initial − (remaining + released)| / initial`.
    pub fn balance_error(&self) -> f64 {
        let initial = self.initial_inventory();
        ((initial - self.final_inventory() - self.released()) / initial).abs()
    }
}

/// Runs the grain model over its full schedule.
pub fn simulate_grain_tds(params: &GrainParams, mesh_spec: &GrainMeshSpec, controller: &StepController) -> Result<GrainRun> {
    params.validate()?;
    if !(params.schedule.duration() > 0.0) {
        return Err(Error::domain("schedule has zero duration"));
    }
    let mesh = mesh_spec.build(params.grain_radius)?;
    let initial = init_equilibrium(params, mesh.cell_count())?;
    let model = GrainModel::new(params, mesh.clone())?;
    let schedule = &params.schedule;

    let record = |state: &GrainState, temperature: f64| GrainRecord {
        time: state.time,
        temperature,
        release_rate: model.release_rate(state, temperature),
        trap_fraction: state.trap_fraction,
        inventory: state.inventory(&mesh),
        max_trap_fill: state
            .trapped
            .iter()
            .map(|ct| ct / (state.trap_fraction * params.lattice_density))
            .fold(0.0, f64::max),
    };

    let mut records = vec![record(&initial, schedule.eval(initial.time))];
    let summary = integrate(&model, schedule, initial.to_state(), schedule.end_time(), controller, |obs| {
        let state = GrainState::from_state(obs.state);
        records.push(record(&state, obs.temperature));
    })?;

    let samples = records
        .iter()
        .map(|r| CurveSample {
            time: r.time,
            temperature: r.temperature,
            rate: r.release_rate,
        })
        .collect();
    Ok(GrainRun {
        curve: ReleaseCurve::raw(samples)?,
        records,
        initial_state: initial,
        final_state: GrainState::from_state(&summary.final_state),
        mesh,
        accepted_steps: summary.accepted_steps,
        rejected_steps: summary.rejected_steps,
    })
}
