//! TOML run configuration.
//!
//! A config file holds up to three sections, `[grain]`, `[slab]` and
//! `[calibration]`, each a flat table of `key = value` pairs. Keys carry the
//! unit in their suffix (`E_d_eV`, `alpha_t0_per_s`, `l_ox_nm`). Every key is
//! optional; absent keys fall back to the built-in parameter sets. Unknown
//! keys are rejected so that typos do not silently fall back to defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::calibration::{OptimizerSettings, PenaltySettings, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::grain::{GrainMeshSpec, GrainParams};
use crate::kinetics::{ArrheniusRate, TemperatureSchedule, TrapFamily};
use crate::slab::{SlabMeshSpec, SlabParams, TRAP_ATTEMPT_FREQUENCY};

/// Parsed config file with overrides applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    table: Table,
    base_dir: PathBuf,
}

impl ConfigFile {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        for (name, value) in &table {
            if !matches!(name.as_str(), "grain" | "slab" | "calibration") {
                return Err(Error::Parse(format!("unknown config section [{name}]")));
            }
            if !value.is_table() {
                return Err(Error::Parse(format!("[{name}] must be a table")));
            }
        }
        Ok(Self {
            table,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir)
    }

    /// Applies `section.key=value`. A bare `key=value` goes to
    /// `default_section`. Values use TOML syntax; anything that does not
    /// parse is taken as a string.
    pub fn set(&mut self, assignment: &str, default_section: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override `{assignment}` is not key=value")))?;
        let (section, key) = match key.trim().split_once('.') {
            Some((s, k)) => (s.trim(), k.trim()),
            None => (default_section, key.trim()),
        };
        if key.is_empty() {
            return Err(Error::Parse(format!("override `{assignment}` has an empty key")));
        }
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let mut probe = self.table.clone();
        probe
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("[{section}] is not a table")))?
            .insert(key.to_string(), value);
        *self = Self::parse(&toml::to_string(&probe).map_err(|e| Error::Parse(e.to_string()))?, self.base_dir.clone())?;
        Ok(())
    }

    fn section(&self, name: &str) -> Section<'_> {
        Section {
            name: name.to_string(),
            table: self.table.get(name).and_then(Value::as_table),
            used: BTreeSet::new(),
            base_dir: &self.base_dir,
        }
    }

    /// Grain parameters; defaults are the sample E reference set.
    pub fn grain(&self) -> Result<GrainRunConfig> {
        let mut s = self.section("grain");
        let base = if s.flag("optimized", false)? {
            GrainParams::sample_e_optimized()
        } else {
            GrainParams::sample_e_reference()
        };
        let rate = |s: &mut Section, a: &str, e: &str, r: ArrheniusRate| -> Result<ArrheniusRate> {
            ArrheniusRate::new(s.f64(a, r.prefactor())?, s.f64(e, r.activation_energy())?)
        };
        let t_start = s.f64("T_start_K", 300.0)?;
        let beta = s.f64("beta_K_per_min", 5.0)?;
        let t_end = s.f64("T_end_K", 900.0)?;
        if !(beta > 0.0 && t_end > t_start) {
            return Err(Error::domain("grain ramp needs beta_K_per_min > 0 and T_end_K > T_start_K"));
        }
        let params = GrainParams {
            grain_radius: s.f64("r_g_m", base.grain_radius)?,
            diffusivity: rate(&mut s, "D_0_m2_per_s", "E_d_eV", base.diffusivity)?,
            trapping: rate(&mut s, "alpha_t0_per_s", "epsilon_t_eV", base.trapping)?,
            detrapping: rate(&mut s, "alpha_r0_per_s", "epsilon_r_eV", base.detrapping)?,
            annihilation: rate(&mut s, "k_dpda_0_per_s", "E_dpda_eV", base.annihilation)?,
            lattice_density: s.f64("N_per_m3", base.lattice_density)?,
            defect_density: s.f64("D_id_per_m3", base.defect_density)?,
            schedule: TemperatureSchedule::linear_ramp(t_start, beta, (t_end - t_start) * 60.0 / beta)?,
            initial_occupancy: s.f64("theta_0", base.initial_occupancy)?,
            initial_mobile: s.opt_f64("C_0_per_m3")?,
        };
        let defaults = GrainMeshSpec::default();
        let mesh = GrainMeshSpec {
            cells: s.usize("cells", defaults.cells)?,
            grading: s.f64("grading", defaults.grading)?,
        };
        s.finish()?;
        params.validate()?;
        Ok(GrainRunConfig { params, mesh })
    }

    /// Slab parameters; defaults are the calibrated set with a 5 nm oxide.
    pub fn slab(&self) -> Result<SlabRunConfig> {
        let mut s = self.section("slab");
        let l_ox = s.f64("l_ox_nm", 5.0)? * 1e-9;
        let base = SlabParams::calibrated(l_ox);
        let rate = |s: &mut Section, a: &str, e: &str, r: ArrheniusRate| -> Result<ArrheniusRate> {
            ArrheniusRate::new(s.f64(a, r.prefactor())?, s.f64(e, r.activation_energy())?)
        };
        let nu = s.f64("nu_0_per_s", TRAP_ATTEMPT_FREQUENCY)?;
        let trapping_energy = s.f64("E_t_eV", base.traps[0].trapping.activation_energy())?;
        let mut traps = Vec::with_capacity(base.traps.len());
        for family in &base.traps {
            let label = &family.label;
            traps.push(TrapFamily::new(
                label.clone(),
                s.f64(&format!("N_T_{label}_per_m3"), family.site_density)?,
                ArrheniusRate::new(nu, trapping_energy)?,
                ArrheniusRate::new(nu, s.f64(&format!("E_dt_{label}_eV"), family.detrapping.activation_energy())?)?,
            )?);
        }
        let mut trap_references = Vec::with_capacity(base.traps.len());
        for (family, r) in base.traps.iter().zip(&base.trap_references) {
            trap_references.push(s.f64(&format!("C_T_ref_{}_per_m3", family.label), *r)?);
        }
        let t_start = s.f64("T_start_K", 295.775)?;
        let t_end = s.f64("T_end_K", 1001.408)?;
        let duration = s.f64("t_ramp_s", base.schedule.duration())?;
        let params = SlabParams {
            slab_thickness: s.f64("l_W_m", base.slab_thickness)?,
            oxide_thickness: l_ox,
            damaged_depth: s.f64("l_d_nm", base.damaged_depth * 1e9)? * 1e-9,
            oxide_width: s.f64("w_ox_nm", base.oxide_width * 1e9)? * 1e-9,
            damage_width: s.f64("w_d_nm", base.damage_width * 1e9)? * 1e-9,
            deuterium_diffusivity: rate(&mut s, "D_D0_m2_per_s", "E_D_eV", base.deuterium_diffusivity)?,
            oxygen_diffusivity: rate(&mut s, "D_O0_m2_per_s", "E_DO_eV", base.oxygen_diffusivity)?,
            traps,
            trap_scale: s.f64("trap_scale", base.trap_scale)?,
            recombination_d2: rate(&mut s, "K_D2_0_m4_per_s", "E_D2_eV", base.recombination_d2)?,
            recombination_d2o: rate(&mut s, "K_D2O_0_m4_per_s", "E_D2O_eV", base.recombination_d2o)?,
            initial_oxygen: s.f64("C_O0_per_m3", base.initial_oxygen)?,
            reference_length: s.f64("l_ref_m", base.reference_length)?,
            reference_time: s.f64("t_ref_s", base.reference_time)?,
            mobile_reference: s.f64("C_M_ref_per_m3", base.mobile_reference)?,
            trap_references,
            oxygen_reference: s.f64("C_O_ref_per_m3", base.oxygen_reference)?,
            lattice_density: s.f64("N_per_m3", base.lattice_density)?,
            schedule: TemperatureSchedule::ramp_between(t_start, t_end, duration)?,
            initial_trap_occupancy: s.f64("theta_0", base.initial_trap_occupancy)?,
            initial_mobile: s.f64("C_M0_hat", base.initial_mobile)?,
        };
        let d = SlabMeshSpec::default();
        let mesh = SlabMeshSpec {
            cells_per_width: s.usize("cells_per_width", d.cells_per_width)?,
            transition_span: s.f64("transition_span", d.transition_span)?,
            max_ratio: s.f64("max_ratio", d.max_ratio)?,
            max_oxide_cell: s.f64("max_oxide_cell_nm", d.max_oxide_cell * 1e9)? * 1e-9,
            max_damage_cell: s.f64("max_damage_cell_nm", d.max_damage_cell * 1e9)? * 1e-9,
            max_bulk_cell: s.f64("max_bulk_cell_um", d.max_bulk_cell * 1e6)? * 1e-6,
        };
        s.finish()?;
        params.validate()?;
        Ok(SlabRunConfig { params, mesh })
    }

    /// Calibration settings. `fixture` is resolved against the config
    /// file's directory.
    pub fn calibration(&self) -> Result<CalibrationConfig> {
        let mut s = self.section("calibration");
        let d = OptimizerSettings::default();
        let p = PenaltySettings::default();
        let fixture = s.path("fixture")?;
        let mut acquisition = d.acquisition;
        acquisition.random_candidates = s.usize("random_candidates", acquisition.random_candidates)?;
        acquisition.local_candidates = s.usize("local_candidates", acquisition.local_candidates)?;
        acquisition.refined = s.usize("refined_candidates", acquisition.refined)?;
        let optimizer = OptimizerSettings {
            iterations: s.usize("iterations", d.iterations)?,
            batch_size: s.usize("batch_size", d.batch_size)?,
            initial_design: s.usize("initial_design", d.initial_design)?,
            seed: d.seed,
            log_transform: s.flag("log_transform", d.log_transform)?,
            acquisition,
        };
        let t_lo = s.f64("penalty_T_min_K", 300.0)?;
        let t_hi = s.f64("penalty_T_max_K", 475.0)?;
        let step = s.f64("penalty_step_K", 25.0)?;
        if !(step > 0.0 && t_hi >= t_lo) {
            return Err(Error::domain("penalty probes need a positive step and T_max >= T_min"));
        }
        let count = ((t_hi - t_lo) / step + 1e-9).floor() as usize + 1;
        let penalty = PenaltySettings {
            weight: s.f64("penalty_weight", p.weight)?,
            target: s.f64("penalty_target", p.target)?,
            probes: (0..count).map(|k| t_lo + step * k as f64).collect(),
        };
        let floor = s.f64("rmspe_floor", DEFAULT_FLOOR)?;
        s.finish()?;
        Ok(CalibrationConfig {
            fixture,
            optimizer,
            penalty,
            floor,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GrainRunConfig {
    pub params: GrainParams,
    pub mesh: GrainMeshSpec,
}

#[derive(Debug, Clone)]
pub struct SlabRunConfig {
    pub params: SlabParams,
    pub mesh: SlabMeshSpec,
}

#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub fixture: Option<PathBuf>,
    pub optimizer: OptimizerSettings,
    pub penalty: PenaltySettings,
    pub floor: f64,
}

struct Section<'a> {
    name: String,
    table: Option<&'a Table>,
    used: BTreeSet<String>,
    base_dir: &'a Path,
}

impl Section<'_> {
    fn raw(&mut self, key: &str) -> Option<&Value> {
        self.used.insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn err(&self, key: &str, expected: &str) -> Error {
        Error::Parse(format!("[{}] {key}: expected {expected}", self.name))
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.raw(key).cloned() {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(v)),
            Some(Value::Integer(v)) => Ok(Some(v as f64)),
            Some(_) => Err(self.err(key, "a number")),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key).cloned() {
            None => Ok(default),
            Some(Value::Integer(v)) if v >= 0 => Ok(v as usize),
            Some(_) => Err(self.err(key, "a non-negative integer")),
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key).cloned() {
            None => Ok(default),
            Some(Value::Boolean(v)) => Ok(v),
            Some(_) => Err(self.err(key, "true or false")),
        }
    }

    fn path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        match self.raw(key).cloned() {
            None => Ok(None),
            Some(Value::String(v)) => Ok(Some(self.base_dir.join(v))),
            Some(_) => Err(self.err(key, "a path string")),
        }
    }

    fn finish(self) -> Result<()> {
        let Some(table) = self.table else { return Ok(()) };
        let unknown: Vec<&str> = table
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Parse(format!("[{}] unknown keys: {}", self.name, unknown.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_builtin_sets() {
        let c = ConfigFile::parse("", ".").unwrap();
        let g = c.grain().unwrap();
        assert_eq!(g.params.diffusivity, GrainParams::sample_e_reference().diffusivity);
        assert_eq!(g.params.schedule.eval(7200.0), 900.0);
        let s = c.slab().unwrap();
        assert_eq!(s.params.oxide_thickness, 5e-9);
        assert_eq!(s.params.traps, SlabParams::calibrated(5e-9).traps);
        let cal = c.calibration().unwrap();
        assert_eq!(cal.penalty, PenaltySettings::default());
        assert!(cal.fixture.is_none());
    }

    #[test]
    fn keys_and_overrides() {
        let mut c = ConfigFile::parse("[grain]\nE_d_eV = 1.01\nD_0_m2_per_s = 4.5e-6\n", "cfg").unwrap();
        c.set("epsilon_t_eV=0.82", "grain").unwrap();
        c.set("slab.l_ox_nm = 15", "grain").unwrap();
        c.set("calibration.fixture=exp.csv", "grain").unwrap();
        let g = c.grain().unwrap().params;
        assert_eq!(g.diffusivity, ArrheniusRate::new(4.5e-6, 1.01).unwrap());
        assert_eq!(g.trapping.activation_energy(), 0.82);
        assert!((c.slab().unwrap().params.oxide_thickness - 15e-9).abs() < 1e-20);
        assert_eq!(c.calibration().unwrap().fixture, Some(Path::new("cfg").join("exp.csv")));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ConfigFile::parse("[grains]\n", ".").is_err());
        let c = ConfigFile::parse("[grain]\nE_d = 1.0\n", ".").unwrap();
        assert!(c.grain().is_err());
        let c = ConfigFile::parse("[grain]\nE_d_eV = \"high\"\n", ".").unwrap();
        assert!(c.grain().is_err());
        let mut c = ConfigFile::default();
        assert!(c.set("no_equals", "grain").is_err());
        assert!(c.set("grain.cells = -3", "grain").is_ok());
        assert!(c.grain().is_err());
    }

    #[test]
    fn optimized_switch() {
        let c = ConfigFile::parse("[grain]\noptimized = true\n", ".").unwrap();
        assert_eq!(c.grain().unwrap().params.detrapping, GrainParams::sample_e_optimized().detrapping);
    }
}
