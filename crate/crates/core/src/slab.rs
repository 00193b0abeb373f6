//! Deuterium release from an oxide-coated, self-damaged tungsten slab.
//!
//! The slab `[0, l_W]` has an oxide film `[0, l_ox]` at the exposed face, a
//! damaged zone `[l_ox, l_ox + l_d]` holding the irradiation traps, and a
//! bulk. Mobile deuterium diffuses everywhere and exchanges with several trap
//! families; oxygen diffuses only inside the oxide. At `x = 0` deuterium
//! leaves either as D₂ or, consuming one oxygen atom per molecule, as D₂O.
//! The back face is closed.
//!
//! The solver works on dimensionless fields:
//!
//! ```text
//! ∂Ĉ_T,i/∂t̂ = α̂_t,i·(Ĉap_i − Ĉ_T,i)·Ĉ_M − α̂_r,i·Ĉ_T,i
//! ∂Ĉ_M/∂t̂   = D̂_D·∂²Ĉ_M/∂x̂² − Σ_i (C_T,ref,i / C_M,ref)·∂Ĉ_T,i/∂t̂
//! ∂Ĉ_O/∂t̂   = ∂/∂x̂ (D̂_O(x̂)·∂Ĉ_O/∂x̂)
//! ```
//!
//! with surface sinks `2K̂_D2·Ĉ_M²` and `2K̂_D2O·Ĉ_O·Ĉ_M²` on the mobile field
//! and half the latter (in oxygen units) on the oxygen field.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curve::{CurveSample, ReleaseCurve};
use crate::error::{Error, Result};
use crate::kinetics::{ArrheniusRate, PlateauProfile, TemperatureSchedule, TrapFamily};
use crate::numerics::{
    build_graded_mesh, harmonic_mean, integrate, BlockTridiagonal, Geometry, ImplicitModel, Mesh1D, MeshRegion,
    State, StepController,
};

/// Physical inputs of the slab model. Lengths in m, concentrations in
/// atoms/m³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabParams {
    pub slab_thickness: f64,
    pub oxide_thickness: f64,
    pub damaged_depth: f64,
    /// Oxide-to-tungsten transition width.
    pub oxide_width: f64,
    /// Damaged-to-bulk transition width.
    pub damage_width: f64,
    pub deuterium_diffusivity: ArrheniusRate,
    pub oxygen_diffusivity: ArrheniusRate,
    /// Trap families; the first is the intrinsic one, the rest are confined
    /// to the damaged zone.
    pub traps: Vec<TrapFamily>,
    pub trap_scale: f64,
    /// D₂ recombination coefficient, m⁴/atom/s.
    pub recombination_d2: ArrheniusRate,
    /// D₂O release coefficient, m⁴/atom/s, multiplying the oxygen fraction
    /// `C_O / C_O,ref`.
    pub recombination_d2o: ArrheniusRate,
    pub initial_oxygen: f64,
    pub reference_length: f64,
    pub reference_time: f64,
    pub mobile_reference: f64,
    /// One reference concentration per trap family.
    pub trap_references: Vec<f64>,
    pub oxygen_reference: f64,
    pub lattice_density: f64,
    pub schedule: TemperatureSchedule,
    pub initial_trap_occupancy: f64,
    /// Uniform initial mobile concentration, in units of `C_M,ref`.
    pub initial_mobile: f64,
}

/// Trapping and detrapping prefactor used for every family, 1/s.
pub const TRAP_ATTEMPT_FREQUENCY: f64 = 1e13;

impl SlabParams {
    /// Calibrated parameter set for a given oxide thickness (m).
    pub fn calibrated(oxide_thickness: f64) -> Self {
        let rate = |a, e| ArrheniusRate::new(a, e).expect("static parameters are valid");
        let trapping_energy = 0.28;
        let family = |label: &str, density: f64, energy: f64| {
            TrapFamily::new(
                label,
                density,
                rate(TRAP_ATTEMPT_FREQUENCY, trapping_energy),
                rate(TRAP_ATTEMPT_FREQUENCY, energy),
            )
            .expect("static trap parameters are valid")
        };
        let mobile_reference = 6.3222e16;
        Self {
            slab_thickness: 0.8e-3,
            oxide_thickness,
            damaged_depth: 2.3e-6,
            oxide_width: 0.25e-9,
            damage_width: 0.05e-6,
            deuterium_diffusivity: rate(1.6e-7, trapping_energy),
            oxygen_diffusivity: rate(2.0e-17, 0.45),
            traps: vec![
                family("intr", 1.595e23, 1.08),
                family("1", 3.076e26, 1.20),
                family("2", 1.910e26, 1.38),
                family("3", 1.304e26, 1.65),
                family("4", 2.392e26, 1.85),
                family("5", 7.330e25, 2.05),
            ],
            trap_scale: 6.644848,
            recombination_d2: rate(3.8e-16, 0.34),
            recombination_d2o: rate(3.8e1, 2.10),
            initial_oxygen: 4.94e28,
            reference_length: 1e-6,
            reference_time: 1.0,
            mobile_reference,
            trap_references: vec![6.3222e17, 6.3222e20, 6.3222e20, 6.3222e20, 6.3222e20, 6.3222e20],
            oxygen_reference: 4.94e28,
            lattice_density: mobile_reference * 1e12,
            schedule: TemperatureSchedule::ramp_between(295.775, 1001.408, 4.166 * 3600.0)
                .expect("static ramp is valid"),
            initial_trap_occupancy: 1.0,
            initial_mobile: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("slab thickness", self.slab_thickness),
            ("oxide thickness", self.oxide_thickness),
            ("damaged depth", self.damaged_depth),
            ("oxide transition width", self.oxide_width),
            ("damage transition width", self.damage_width),
            ("trap scale", self.trap_scale),
            ("reference length", self.reference_length),
            ("reference time", self.reference_time),
            ("mobile reference", self.mobile_reference),
            ("oxygen reference", self.oxygen_reference),
            ("lattice density", self.lattice_density),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.oxide_thickness < self.damaged_depth && self.oxide_thickness + self.damaged_depth < self.slab_thickness) {
            return Err(Error::domain("layer thicknesses must satisfy l_ox < l_d and l_ox + l_d < l_W"));
        }
        if self.traps.is_empty() {
            return Err(Error::domain("at least one trap family is required"));
        }
        if self.trap_references.len() != self.traps.len() {
            return Err(Error::domain("one trap reference concentration per family is required"));
        }
        if self.trap_references.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::domain("trap references must be positive"));
        }
        if !(self.initial_oxygen >= 0.0) {
            return Err(Error::domain("initial oxygen must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.initial_trap_occupancy) {
            return Err(Error::domain("initial trap occupancy must lie in [0, 1]"));
        }
        if !(self.initial_mobile >= 0.0 && self.initial_mobile.is_finite()) {
            return Err(Error::domain("initial mobile concentration must be non-negative"));
        }
        Ok(())
    }

    /// Spatial shape (0..1) of a trap family.
    fn trap_shape(&self, family: usize) -> PlateauProfile {
        if family == 0 {
            PlateauProfile::rising(1.0, self.oxide_thickness, self.oxide_width)
        } else {
            PlateauProfile::new(
                1.0,
                self.oxide_thickness,
                self.oxide_thickness + self.damaged_depth,
                self.oxide_width,
                self.damage_width,
            )
        }
        .expect("validated geometry")
    }

    /// Spatial shape (0..1) of the oxide, used for the initial oxygen and the
    /// oxygen diffusivity mask.
    fn oxide_shape(&self) -> PlateauProfile {
        PlateauProfile::falling(1.0, self.oxide_thickness, self.oxide_width).expect("validated geometry")
    }
}

/// Trap site density of `family` at depth `x`, atoms/m³.
pub fn trap_capacity_profile(params: &SlabParams, family: usize, x: f64) -> Result<f64> {
    if family >= params.traps.len() {
        return Err(Error::domain(format!("no trap family {family}")));
    }
    if !(0.0..=params.slab_thickness).contains(&x) {
        return Err(Error::domain(format!("depth {x} m lies outside the slab")));
    }
    Ok(params.trap_scale * params.traps[family].site_density * params.trap_shape(family).eval(x))
}

/// Dimensionless coefficients at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionlessGroups {
    pub deuterium_diffusivity: f64,
    pub oxygen_diffusivity: f64,
    pub trapping: Vec<f64>,
    pub detrapping: Vec<f64>,
    pub recombination_d2: f64,
    pub recombination_d2o: f64,
}

/// Physical coefficients recovered from [`DimensionlessGroups`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalCoefficients {
    pub deuterium_diffusivity: f64,
    pub oxygen_diffusivity: f64,
    pub trapping: Vec<f64>,
    pub detrapping: Vec<f64>,
    pub recombination_d2: f64,
    pub recombination_d2o: f64,
}

pub fn nondimensionalize(params: &SlabParams, temperature: f64) -> Result<DimensionlessGroups> {
    let (l, t) = (params.reference_length, params.reference_time);
    let diffusion = t / (l * l);
    let surface = params.mobile_reference * t / l;
    Ok(DimensionlessGroups {
        deuterium_diffusivity: params.deuterium_diffusivity.eval(temperature)? * diffusion,
        oxygen_diffusivity: params.oxygen_diffusivity.eval(temperature)? * diffusion,
        trapping: params
            .traps
            .iter()
            .map(|f| f.trapping.eval(temperature).map(|a| t * a * params.mobile_reference / params.lattice_density))
            .collect::<Result<_>>()?,
        detrapping: params
            .traps
            .iter()
            .map(|f| f.detrapping.eval(temperature).map(|a| t * a))
            .collect::<Result<_>>()?,
        recombination_d2: params.recombination_d2.eval(temperature)? * surface,
        recombination_d2o: params.recombination_d2o.eval(temperature)? * surface,
    })
}

impl DimensionlessGroups {
    pub fn redimensionalize(&self, params: &SlabParams) -> PhysicalCoefficients {
        let (l, t) = (params.reference_length, params.reference_time);
        let diffusion = l * l / t;
        let surface = l / (params.mobile_reference * t);
        PhysicalCoefficients {
            deuterium_diffusivity: self.deuterium_diffusivity * diffusion,
            oxygen_diffusivity: self.oxygen_diffusivity * diffusion,
            trapping: self
                .trapping
                .iter()
                .map(|a| a * params.lattice_density / (params.mobile_reference * t))
                .collect(),
            detrapping: self.detrapping.iter().map(|a| a / t).collect(),
            recombination_d2: self.recombination_d2 * surface,
            recombination_d2o: self.recombination_d2o * surface,
        }
    }
}

/// Surface release fluxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFluxes {
    /// D atoms/m²/s leaving as D₂.
    pub d2_atoms: f64,
    /// D atoms/m²/s leaving as D₂O.
    pub d2o_atoms: f64,
    /// O atoms/m²/s leaving as D₂O.
    pub oxygen: f64,
}

/// Fluxes for surface concentrations `mobile` and `oxygen` (atoms/m³).
pub fn surface_fluxes(mobile: f64, oxygen: f64, temperature: f64, params: &SlabParams) -> Result<SurfaceFluxes> {
    if !(mobile >= 0.0 && oxygen >= 0.0) {
        return Err(Error::domain("surface concentrations must be non-negative"));
    }
    let m2 = mobile * mobile;
    let d2_atoms = 2.0 * params.recombination_d2.eval(temperature)? * m2;
    let d2o_atoms = 2.0 * params.recombination_d2o.eval(temperature)? * (oxygen / params.oxygen_reference) * m2;
    Ok(SurfaceFluxes {
        d2_atoms,
        d2o_atoms,
        oxygen: 0.5 * d2o_atoms,
    })
}

/// Mesh resolution controls for the slab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabMeshSpec {
    /// Cells across each transition width.
    pub cells_per_width: usize,
    /// Half-span of each uniformly refined transition band, in widths.
    pub transition_span: f64,
    /// Largest ratio between neighbouring cell widths.
    pub max_ratio: f64,
    /// Coarsest cell inside the oxide, m.
    pub max_oxide_cell: f64,
    /// Coarsest cell inside the damaged zone, m.
    pub max_damage_cell: f64,
    /// Coarsest cell in the bulk, m.
    pub max_bulk_cell: f64,
}

impl Default for SlabMeshSpec {
    fn default() -> Self {
        Self {
            cells_per_width: 6,
            transition_span: 3.0,
            max_ratio: 1.15,
            max_oxide_cell: 0.5e-9,
            max_damage_cell: 20e-9,
            max_bulk_cell: 20e-6,
        }
    }
}

/// Regions that refine from `edge` at both ends to at most `coarse` inside.
fn two_sided(length: f64, edge: f64, coarse: f64, max_ratio: f64) -> Vec<MeshRegion> {
    if length <= 8.0 * edge || coarse <= edge {
        let cells = (length / edge).ceil().max(1.0) as usize;
        return vec![MeshRegion::new(length, cells, 1.0)];
    }
    let half = 0.5 * length;
    let coarse = coarse.min(half / 4.0).max(edge);
    vec![
        MeshRegion::graded(half, edge, coarse, max_ratio),
        MeshRegion::graded(half, coarse, edge, max_ratio),
    ]
}

impl SlabMeshSpec {
    /// Physical mesh (m) resolving the surface, both transitions and the
    /// bulk.
    pub fn build(&self, params: &SlabParams) -> Result<Mesh1D> {
        params.validate()?;
        if self.cells_per_width == 0 || !(self.transition_span > 0.0) || !(self.max_ratio > 1.0) {
            return Err(Error::domain("invalid slab mesh controls"));
        }
        let h_ox = params.oxide_width / self.cells_per_width as f64;
        let h_d = params.damage_width / self.cells_per_width as f64;
        let band_ox = self.transition_span * params.oxide_width;
        let band_d = self.transition_span * params.damage_width;
        let band_cells = |band: f64, h: f64| (2.0 * band / h).round().max(1.0) as usize;

        let mut regions = Vec::new();
        let oxide_inner = params.oxide_thickness - band_ox;
        let first_band = if oxide_inner > 0.5 * h_ox {
            regions.extend(two_sided(oxide_inner, h_ox, self.max_oxide_cell, self.max_ratio));
            2.0 * band_ox
        } else {
            params.oxide_thickness + band_ox
        };
        regions.push(MeshRegion::new(first_band, band_cells(first_band / 2.0, h_ox), 1.0));

        let damage_start = params.oxide_thickness + band_ox;
        let damage_end = params.oxide_thickness + params.damaged_depth - band_d;
        if !(damage_end > damage_start) {
            return Err(Error::domain("damaged zone too thin for the transition bands"));
        }
        let damage_length = damage_end - damage_start;
        let graded_up = MeshRegion::graded(0.5 * damage_length, h_ox, self.max_damage_cell, self.max_ratio);
        let graded_down = MeshRegion::graded(0.5 * damage_length, self.max_damage_cell, h_d, self.max_ratio);
        regions.push(graded_up);
        regions.push(graded_down);
        regions.push(MeshRegion::new(2.0 * band_d, band_cells(band_d, h_d), 1.0));

        let bulk = params.slab_thickness - (params.oxide_thickness + params.damaged_depth + band_d);
        regions.push(MeshRegion::graded(bulk, h_d, self.max_bulk_cell, self.max_ratio));
        build_graded_mesh(&regions, Geometry::Planar)
    }
}

/// Step controller used for slab runs unless overridden.
pub fn default_controller() -> StepController {
    StepController {
        dt_initial: 0.1,
        dt_min: 1e-10,
        dt_max: 20.0,
        growth_factor: 1.5,
        shrink_factor: 0.5,
        newton_tolerance: 1e-8,
        newton_max_iterations: 15,
    }
}

/// Dimensionless slab state.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabState {
    pub mobile: Vec<f64>,
    /// `trapped[family][cell]`.
    pub trapped: Vec<Vec<f64>>,
    pub oxygen: Vec<f64>,
    pub time: f64,
}

impl SlabState {
    pub fn to_state(&self) -> State {
        let cells = self.mobile.len();
        let families = self.trapped.len();
        let mut fields = Vec::with_capacity(cells * (families + 2));
        for i in 0..cells {
            fields.push(self.mobile[i]);
            fields.extend(self.trapped.iter().map(|t| t[i]));
            fields.push(self.oxygen[i]);
        }
        State {
            time: self.time,
            fields,
            aux: Vec::new(),
        }
    }

    pub fn from_state(state: &State, families: usize) -> Self {
        let b = families + 2;
        let cells = state.fields.len() / b;
        let at = |i: usize, k: usize| state.fields[i * b + k];
        Self {
            mobile: (0..cells).map(|i| at(i, 0)).collect(),
            trapped: (0..families).map(|k| (0..cells).map(|i| at(i, k + 1)).collect()).collect(),
            oxygen: (0..cells).map(|i| at(i, b - 1)).collect(),
            time: state.time,
        }
    }
}

/// Initial state: traps filled to the configured occupancy, a small mobile
/// floor, and oxygen confined to the oxide.
pub fn init_slab_state(params: &SlabParams, mesh: &Mesh1D) -> Result<SlabState> {
    params.validate()?;
    let centers = mesh.centers();
    let trapped = (0..params.traps.len())
        .map(|k| {
            centers
                .iter()
                .map(|&x| {
                    trap_capacity_profile(params, k, x)
                        .map(|c| params.initial_trap_occupancy * c / params.trap_references[k])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let oxide = params.oxide_shape();
    let oxygen_level = params.initial_oxygen / params.oxygen_reference;
    Ok(SlabState {
        mobile: vec![params.initial_mobile; centers.len()],
        trapped,
        oxygen: centers.iter().map(|&x| oxygen_level * oxide.eval(x)).collect(),
        time: params.schedule.start_time(),
    })
}

/// Areal inventories, atoms/m² (oxygen in O atoms/m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub mobile: f64,
    pub trapped: Vec<f64>,
    pub oxygen: f64,
}

impl Inventory {
    pub fn deuterium(&self) -> f64 {
        self.mobile + self.trapped.iter().sum::<f64>()
    }
}

/// The dimensionless slab system on a fixed mesh.
pub struct SlabModel<'a> {
    params: &'a SlabParams,
    /// Mesh in units of the reference length.
    mesh: Mesh1D,
    volumes: Vec<f64>,
    /// `1/δ̂` for each interior face.
    face_geometry: Vec<f64>,
    /// Oxide fraction at each interior face (harmonic mean of cells).
    oxygen_mask: Vec<f64>,
    /// `capacity[family][cell]` in units of the family reference.
    capacity: Vec<Vec<f64>>,
    /// `C_T,ref,i / C_M,ref`.
    coupling: Vec<f64>,
    oxygen_ratio: f64,
    scales: Vec<f64>,
}

impl<'a> SlabModel<'a> {
    /// `mesh` is the physical mesh (m).
    pub fn new(params: &'a SlabParams, mesh: &Mesh1D) -> Result<Self> {
        params.validate()?;
        if mesh.geometry() != Geometry::Planar {
            return Err(Error::domain("slab model requires a planar mesh"));
        }
        let centers = mesh.centers();
        let scaled = mesh.rescaled(params.reference_length);
        let n = scaled.cell_count();
        let face_geometry = (1..n).map(|e| 1.0 / (scaled.center(e) - scaled.center(e - 1))).collect();
        let oxide = params.oxide_shape();
        let fraction: Vec<f64> = centers.iter().map(|&x| oxide.eval(x)).collect();
        let oxygen_mask = fraction.windows(2).map(|w| harmonic_mean(w[0], w[1])).collect();
        let capacity: Vec<Vec<f64>> = (0..params.traps.len())
            .map(|k| {
                centers
                    .iter()
                    .map(|&x| trap_capacity_profile(params, k, x).map(|c| c / params.trap_references[k]))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut scales = vec![1e-8];
        scales.extend(capacity.iter().map(|c| 1e-10 * c.iter().cloned().fold(1.0, f64::max)));
        scales.push(1e-10 * (params.initial_oxygen / params.oxygen_reference).max(1.0));
        Ok(Self {
            params,
            volumes: scaled.volumes(),
            mesh: scaled,
            face_geometry,
            oxygen_mask,
            capacity,
            coupling: params.trap_references.iter().map(|r| r / params.mobile_reference).collect(),
            oxygen_ratio: params.mobile_reference / params.oxygen_reference,
            scales,
        })
    }

    pub fn families(&self) -> usize {
        self.params.traps.len()
    }

    /// Surface fluxes for a state, physical units.
    pub fn fluxes(&self, state: &SlabState, temperature: f64) -> SurfaceFluxes {
        let p = self.params;
        surface_fluxes(
            state.mobile[0].max(0.0) * p.mobile_reference,
            state.oxygen[0].max(0.0) * p.oxygen_reference,
            temperature,
            p,
        )
        .expect("temperature from a validated schedule")
    }

    pub fn inventory(&self, state: &SlabState) -> Inventory {
        let p = self.params;
        let l = p.reference_length;
        Inventory {
            mobile: self.mesh.integrate(&state.mobile) * p.mobile_reference * l,
            trapped: state
                .trapped
                .iter()
                .zip(&p.trap_references)
                .map(|(t, r)| self.mesh.integrate(t) * r * l)
                .collect(),
            oxygen: self.mesh.integrate(&state.oxygen) * p.oxygen_reference * l,
        }
    }
}

impl ImplicitModel for SlabModel<'_> {
    fn cells(&self) -> usize {
        self.mesh.cell_count()
    }

    fn block(&self) -> usize {
        self.families() + 2
    }

    fn scale(&self, component: usize) -> f64 {
        self.scales[component]
    }

    fn rate(
        &self,
        _time: f64,
        temperature: f64,
        u: &[f64],
        _aux: &[f64],
        rate: &mut [f64],
        mut jacobian: Option<&mut BlockTridiagonal>,
    ) {
        let groups = nondimensionalize(self.params, temperature).expect("temperature from a validated schedule");
        let families = self.families();
        let b = families + 2;
        let ox = b - 1;
        let n = self.mesh.cell_count();
        let dd = groups.deuterium_diffusivity;
        let d_o = groups.oxygen_diffusivity;

        for i in 0..n {
            let base = i * b;
            let m = u[base];
            let o = u[base + ox];
            let v = self.volumes[i];
            let mut dm = 0.0;
            let mut dm_self = 0.0;
            let mut doxy = 0.0;
            let mut do_self = 0.0;

            if i > 0 {
                let g = self.face_geometry[i - 1] / v;
                let gm = dd * g;
                let go = d_o * self.oxygen_mask[i - 1] * g;
                dm += gm * (u[base - b] - m);
                doxy += go * (u[base - b + ox] - o);
                dm_self -= gm;
                do_self -= go;
                if let Some(j) = jacobian.as_deref_mut() {
                    j.add_lower(i, 0, 0, gm);
                    j.add_lower(i, ox, ox, go);
                }
            }
            if i + 1 < n {
                let g = self.face_geometry[i] / v;
                let gm = dd * g;
                let go = d_o * self.oxygen_mask[i] * g;
                dm += gm * (u[base + b] - m);
                doxy += go * (u[base + b + ox] - o);
                dm_self -= gm;
                do_self -= go;
                if let Some(j) = jacobian.as_deref_mut() {
                    j.add_upper(i, 0, 0, gm);
                    j.add_upper(i, ox, ox, go);
                }
            }

            let mut dm_do = 0.0;
            if i == 0 {
                let k2 = 2.0 * groups.recombination_d2 / v;
                let k2o = 2.0 * groups.recombination_d2o / v;
                dm -= (k2 + k2o * o) * m * m;
                dm_self -= 2.0 * (k2 + k2o * o) * m;
                dm_do -= k2o * m * m;
                let half = 0.5 * self.oxygen_ratio;
                doxy -= half * k2o * o * m * m;
                do_self -= half * k2o * m * m;
                if let Some(j) = jacobian.as_deref_mut() {
                    j.add_diag(i, ox, 0, -half * k2o * o * 2.0 * m);
                }
            }

            for k in 0..families {
                let ct = u[base + 1 + k];
                let at = groups.trapping[k];
                let ar = groups.detrapping[k];
                let empty = self.capacity[k][i] - ct;
                let r = at * empty * m - ar * ct;
                let dr_dm = at * empty;
                let dr_dt = -at * m - ar;
                let c = self.coupling[k];
                rate[base + 1 + k] = r;
                dm -= c * r;
                dm_self -= c * dr_dm;
                if let Some(j) = jacobian.as_deref_mut() {
                    j.add_diag(i, 0, 1 + k, -c * dr_dt);
                    j.add_diag(i, 1 + k, 0, dr_dm);
                    j.add_diag(i, 1 + k, 1 + k, dr_dt);
                }
            }

            rate[base] = dm;
            rate[base + ox] = doxy;
            if let Some(j) = jacobian.as_deref_mut() {
                j.add_diag(i, 0, 0, dm_self);
                j.add_diag(i, 0, ox, dm_do);
                j.add_diag(i, ox, ox, do_self);
            }
        }
    }
}

/// One accepted step of a slab run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabRecord {
    pub time: f64,
    pub temperature: f64,
    pub fluxes: SurfaceFluxes,
    pub inventory: Inventory,
    /// Largest oxygen concentration beyond `l_ox + 5·w_ox`, relative to
    /// `C_O,0`.
    pub stray_oxygen: f64,
    /// Largest `C_T,i / capacity_i` over all families and cells.
    pub max_trap_fill: f64,
}

/// A state snapshot with its physical mesh.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub label: String,
    pub state: SlabState,
}

/// Output of a slab TDS simulation.
#[derive(Debug, Clone)]
pub struct SlabRun {
    /// D₂ release, D atoms/m²/s.
    pub d2: ReleaseCurve,
    /// D₂O release, D atoms/m²/s.
    pub d2o: ReleaseCurve,
    pub records: Vec<SlabRecord>,
    pub initial_state: SlabState,
    pub final_state: SlabState,
    /// Physical mesh, m.
    pub mesh: Mesh1D,
    pub params: SlabParams,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl SlabRun {
    pub fn initial_inventory(&self) -> &Inventory {
        &self.records[0].inventory
    }

    pub fn final_inventory(&self) -> &Inventory {
        &self.records[self.records.len() - 1].inventory
    }

    /// Cumulative D atoms released per m² as D₂ and as D₂O.
    pub fn cumulative_release(&self) -> (f64, f64) {
        (self.d2.integral(), self.d2o.integral())
    }

    pub fn oxygen_released(&self) -> f64 {
        0.5 * self.d2o.integral()
    }

    pub fn deuterium_balance_error(&self) -> f64 {
        let initial = self.initial_inventory().deuterium();
        let (a, b) = self.cumulative_release();
        ((initial - self.final_inventory().deuterium() - a - b) / initial).abs()
    }

    /// Relative oxygen balance error; zero when there was no oxygen.
    pub fn oxygen_balance_error(&self) -> f64 {
        let initial = self.initial_inventory().oxygen;
        if initial == 0.0 {
            return 0.0;
        }
        ((initial - self.final_inventory().oxygen - self.oxygen_released()) / initial).abs()
    }

    /// Temperature at which each family's inventory first drops to half its
    /// initial value, if it does.
    pub fn half_emptying_temperatures(&self) -> Vec<Option<f64>> {
        let initial = &self.initial_inventory().trapped;
        (0..initial.len())
            .map(|k| {
                self.records
                    .iter()
                    .find(|r| r.inventory.trapped[k] <= 0.5 * initial[k])
                    .map(|r| r.temperature)
            })
            .collect()
    }

    pub fn write_release_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<release.csv>", e);
        writeln!(out, "time_s,temperature_K,J_D2_atoms,J_D2O_atoms").map_err(io)?;
        for r in &self.records {
            writeln!(out, "{:e},{},{:e},{:e}", r.time, r.temperature, r.fluxes.d2_atoms, r.fluxes.d2o_atoms)
                .map_err(io)?;
        }
        Ok(())
    }

    pub fn write_inventory_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<inventory.csv>", e);
        let traps: Vec<String> = self.params.traps.iter().map(|t| format!("trap_{}", t.label)).collect();
        writeln!(out, "time_s,mobile,{},oxygen", traps.join(",")).map_err(io)?;
        for r in &self.records {
            let trapped: Vec<String> = r.inventory.trapped.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{:e},{:e},{},{:e}", r.time, r.inventory.mobile, trapped.join(","), r.inventory.oxygen)
                .map_err(io)?;
        }
        Ok(())
    }

    /// Physical profiles of `state` on the run mesh.
    pub fn write_profile_csv<W: Write>(&self, state: &SlabState, mut out: W) -> Result<()> {
        let io = |e| Error::io("<profile.csv>", e);
        let p = &self.params;
        let traps: Vec<String> = p.traps.iter().map(|t| format!("C_T_{}", t.label)).collect();
        writeln!(out, "x_m,C_M,{},C_O", traps.join(",")).map_err(io)?;
        for (i, x) in self.mesh.centers().iter().enumerate() {
            let trapped: Vec<String> = state
                .trapped
                .iter()
                .zip(&p.trap_references)
                .map(|(t, r)| format!("{:e}", t[i] * r))
                .collect();
            writeln!(
                out,
                "{:e},{:e},{},{:e}",
                x,
                state.mobile[i] * p.mobile_reference,
                trapped.join(","),
                state.oxygen[i] * p.oxygen_reference
            )
            .map_err(io)?;
        }
        Ok(())
    }

    /// Writes `release.csv`, `inventory.csv` and `profile.csv` (initial and
    /// final profiles, in `profile_initial.csv` / `profile.csv`) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(path, e))
        };
        self.write_release_csv(open("release.csv")?)?;
        self.write_inventory_csv(open("inventory.csv")?)?;
        self.write_profile_csv(&self.initial_state, open("profile_initial.csv")?)?;
        self.write_profile_csv(&self.final_state, open("profile.csv")?)?;
        Ok(())
    }
}

/// Runs the slab model over its full schedule.
pub fn simulate_slab_tds(params: &SlabParams, mesh_spec: &SlabMeshSpec, controller: &StepController) -> Result<SlabRun> {
    params.validate()?;
    let mesh = mesh_spec.build(params)?;
    let model = SlabModel::new(params, &mesh)?;
    let initial = init_slab_state(params, &mesh)?;
    let families = params.traps.len();
    let schedule = &params.schedule;
    let centers = mesh.centers();
    let stray_from = centers.partition_point(|&x| x <= params.oxide_thickness + 5.0 * params.oxide_width);
    let oxygen_level = params.initial_oxygen / params.oxygen_reference;

    let record = |state: &SlabState, temperature: f64| SlabRecord {
        time: state.time,
        temperature,
        fluxes: model.fluxes(state, temperature),
        inventory: model.inventory(state),
        stray_oxygen: if oxygen_level > 0.0 {
            state.oxygen[stray_from..].iter().cloned().fold(0.0, f64::max) / oxygen_level
        } else {
            0.0
        },
        max_trap_fill: (0..families)
            .flat_map(|k| {
                let cap = &model.capacity[k];
                state.trapped[k]
                    .iter()
                    .zip(cap)
                    .filter(|(_, c)| **c > 0.0)
                    .map(|(t, c)| t / c)
            })
            .fold(0.0, f64::max),
    };

    let mut records = vec![record(&initial, schedule.eval(initial.time))];
    let summary = integrate(&model, schedule, initial.to_state(), schedule.end_time(), controller, |obs| {
        let state = SlabState::from_state(obs.state, families);
        records.push(record(&state, obs.temperature));
    })?;

    let curve = |pick: fn(&SurfaceFluxes) -> f64| {
        ReleaseCurve::raw(
            records
                .iter()
                .map(|r| CurveSample {
                    time: r.time,
                    temperature: r.temperature,
                    rate: pick(&r.fluxes),
                })
                .collect(),
        )
    };
    Ok(SlabRun {
        d2: curve(|f| f.d2_atoms)?,
        d2o: curve(|f| f.d2o_atoms)?,
        initial_state: initial,
        final_state: SlabState::from_state(&summary.final_state, families),
        records,
        mesh,
        params: params.clone(),
        accepted_steps: summary.accepted_steps,
        rejected_steps: summary.rejected_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> SlabParams {
        SlabParams::calibrated(15e-9)
    }

    #[test]
    fn reference_scaling_of_diffusivity() {
        let p = params();
        let g = nondimensionalize(&p, 600.0).unwrap();
        assert_relative_eq!(
            g.deuterium_diffusivity,
            p.deuterium_diffusivity.eval(600.0).unwrap() * 1e12,
            max_relative = 1e-12
        );
    }

    #[test]
    fn redimensionalize_round_trip() {
        let p = params();
        for t in [300.0, 650.0, 1000.0] {
            let phys = nondimensionalize(&p, t).unwrap().redimensionalize(&p);
            assert_relative_eq!(phys.deuterium_diffusivity, p.deuterium_diffusivity.eval(t).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(phys.oxygen_diffusivity, p.oxygen_diffusivity.eval(t).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(phys.recombination_d2, p.recombination_d2.eval(t).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(phys.recombination_d2o, p.recombination_d2o.eval(t).unwrap(), max_relative = 1e-14);
            for (k, f) in p.traps.iter().enumerate() {
                assert_relative_eq!(phys.trapping[k], f.trapping.eval(t).unwrap(), max_relative = 1e-14);
                assert_relative_eq!(phys.detrapping[k], f.detrapping.eval(t).unwrap(), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn occupancy_ratio_is_reference_consistent() {
        let p = params();
        let g = nondimensionalize(&p, 700.0).unwrap();
        for (k, f) in p.traps.iter().enumerate() {
            let physical = f.trapping.eval(700.0).unwrap() / f.detrapping.eval(700.0).unwrap();
            assert_relative_eq!(
                g.trapping[k] / g.detrapping[k],
                physical * p.mobile_reference / p.lattice_density,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn capacity_profiles() {
        let p = params();
        let mid = p.oxide_thickness + 0.5 * p.damaged_depth;
        assert_relative_eq!(trap_capacity_profile(&p, 1, mid).unwrap(), 6.644848 * 3.076e26, max_relative = 1e-9);
        for k in 1..6 {
            let plateau = p.trap_scale * p.traps[k].site_density;
            assert!(trap_capacity_profile(&p, k, p.slab_thickness).unwrap() < 1e-4 * plateau);
            assert!(trap_capacity_profile(&p, k, 1e-9).unwrap() < 1e-6 * plateau);
        }
        let intrinsic = p.trap_scale * 1.595e23;
        assert_relative_eq!(trap_capacity_profile(&p, 0, 1e-4).unwrap(), intrinsic, max_relative = 1e-12);
        assert!(trap_capacity_profile(&p, 0, 1e-9).unwrap() < 1e-6 * intrinsic);
        assert!(trap_capacity_profile(&p, 0, -1e-9).is_err());
        assert!(trap_capacity_profile(&p, 0, 1e-3).is_err());
        assert!(trap_capacity_profile(&p, 6, 1e-6).is_err());
    }

    #[test]
    fn surface_flux_laws() {
        let p = params();
        let zero = surface_fluxes(0.0, 4e28, 700.0, &p).unwrap();
        assert_eq!((zero.d2_atoms, zero.d2o_atoms, zero.oxygen), (0.0, 0.0, 0.0));
        let no_oxygen = surface_fluxes(1e20, 0.0, 700.0, &p).unwrap();
        let with_oxygen = surface_fluxes(1e20, 4e28, 700.0, &p).unwrap();
        assert_eq!(no_oxygen.d2o_atoms, 0.0);
        assert_eq!(no_oxygen.oxygen, 0.0);
        assert_eq!(no_oxygen.d2_atoms, with_oxygen.d2_atoms);
        let doubled = surface_fluxes(2e20, 4e28, 700.0, &p).unwrap();
        assert_relative_eq!(doubled.d2_atoms, 4.0 * with_oxygen.d2_atoms, max_relative = 1e-14);
        assert_relative_eq!(doubled.d2o_atoms, 4.0 * with_oxygen.d2o_atoms, max_relative = 1e-14);
        assert_eq!(with_oxygen.oxygen, 0.5 * with_oxygen.d2o_atoms);
        assert!(surface_fluxes(-1.0, 0.0, 700.0, &p).is_err());
    }

    #[test]
    fn mesh_resolves_transitions() {
        for l_ox in [1e-9, 5e-9, 15e-9] {
            let p = SlabParams::calibrated(l_ox);
            let mesh = SlabMeshSpec::default().build(&p).unwrap();
            assert_relative_eq!(mesh.last_edge(), p.slab_thickness, max_relative = 1e-12);
            let edges = mesh.edges();
            let width_near = |x: f64| {
                let i = edges.partition_point(|e| *e <= x).clamp(1, edges.len() - 1);
                edges[i] - edges[i - 1]
            };
            assert!(width_near(l_ox) <= p.oxide_width / 6.0 * 1.001);
            assert!(width_near(l_ox + p.damaged_depth) <= p.damage_width / 6.0 * 1.001);
            assert!(mesh.cell_count() < 2000);
        }
    }

    #[test]
    fn initial_state_layout() {
        let p = params();
        let mesh = SlabMeshSpec::default().build(&p).unwrap();
        let s = init_slab_state(&p, &mesh).unwrap();
        assert_relative_eq!(s.oxygen[0] * p.oxygen_reference, 4.94e28, max_relative = 1e-9);
        let last = mesh.cell_count() - 1;
        assert_eq!(s.oxygen[last], 0.0);
        for k in 1..6 {
            assert!(s.trapped[k][last] * p.trap_references[k] < 1e-4 * p.traps[k].site_density);
        }
        assert!(s.trapped[0][last] > 0.0);
        let back = SlabState::from_state(&s.to_state(), 6);
        assert_eq!(back, s);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = SlabParams::calibrated(1e-9);
        let spec = SlabMeshSpec {
            max_bulk_cell: 200e-6,
            max_damage_cell: 200e-9,
            max_ratio: 1.6,
            ..SlabMeshSpec::default()
        };
        let mesh = spec.build(&p).unwrap();
        let model = SlabModel::new(&p, &mesh).unwrap();
        let mut state = init_slab_state(&p, &mesh).unwrap();
        for (i, m) in state.mobile.iter_mut().enumerate() {
            *m = 1e3 * (1.0 + 0.3 * (i as f64).sin());
        }
        for t in state.trapped.iter_mut() {
            for v in t.iter_mut() {
                *v *= 0.7;
            }
        }
        let u = state.to_state().fields;
        let n = u.len();
        let temp = 650.0;
        let mut f0 = vec![0.0; n];
        let mut jac = BlockTridiagonal::zeros(model.cells(), model.block());
        model.rate(0.0, temp, &u, &[], &mut f0, Some(&mut jac));
        for k in [0usize, 3, 7, 8, 15, 40, 47] {
            let h = 1e-6 * u[k].abs().max(1e-3);
            let mut up = u.clone();
            up[k] += h;
            let mut f1 = vec![0.0; n];
            model.rate(0.0, temp, &up, &[], &mut f1, None);
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let col = jac.apply(&e);
            for row in 0..n {
                let fd = (f1[row] - f0[row]) / h;
                let tol = 1e-4 * fd.abs().max(col[row].abs()) + 1e-9 * f0[row].abs() / h + 1e-12;
                assert!((fd - col[row]).abs() <= tol, "row {row} col {k}: fd {fd} vs {}", col[row]);
            }
        }
    }
}
