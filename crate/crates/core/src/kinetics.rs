//! Kinetic primitives shared by both transport models.
//!
//! Every temperature-dependent coefficient in the models (diffusivities,
//! trapping and detrapping frequencies, annihilation and surface
//! recombination coefficients) has the Arrhenius form
//! `A · exp(−E / (k_B·T))`. Temperatures are in kelvin and activation
//! energies in electron-volts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boltzmann constant in eV/K.
pub const BOLTZMANN_EV: f64 = 8.617333262e-5;

/// Arrhenius coefficient `prefactor · exp(−activation_energy / (k_B·T))`.
///
/// The prefactor carries the native units of the coefficient (m²/s for
/// diffusivities, 1/s for rate constants, m⁴/atom/s for recombination).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrheniusRate {
    prefactor: f64,
    activation_energy: f64,
}

impl ArrheniusRate {
    pub fn new(prefactor: f64, activation_energy: f64) -> Result<Self> {
        if !(prefactor.is_finite() && prefactor > 0.0) {
            return Err(Error::domain(format!(
                "Arrhenius prefactor must be positive and finite, got {prefactor}"
            )));
        }
        if !(activation_energy.is_finite() && activation_energy >= 0.0) {
            return Err(Error::domain(format!(
                "activation energy must be non-negative and finite, got {activation_energy}"
            )));
        }
        Ok(Self {
            prefactor,
            activation_energy,
        })
    }

    /// A coefficient that is identically zero. Used to switch a channel off;
    /// bypasses the positive-prefactor check on purpose.
    pub const fn disabled() -> Self {
        Self {
            prefactor: 0.0,
            activation_energy: 0.0,
        }
    }

    pub fn prefactor(&self) -> f64 {
        self.prefactor
    }

    pub fn activation_energy(&self) -> f64 {
        self.activation_energy
    }

    pub fn is_disabled(&self) -> bool {
        self.prefactor == 0.0
    }

    /// Evaluates the coefficient at `temperature` (K).
    pub fn eval(&self, temperature: f64) -> Result<f64> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(self.at(temperature))
    }

    /// Unchecked evaluation for hot loops where `temperature > 0` is
    /// already guaranteed by a validated schedule.
    #[inline]
    pub(crate) fn at(&self, temperature: f64) -> f64 {
        self.prefactor * (-self.activation_energy / (BOLTZMANN_EV * temperature)).exp()
    }

    /// Returns a copy with the prefactor multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.prefactor * factor, self.activation_energy)
    }
}

/// Free-function form of [`ArrheniusRate::eval`].
pub fn arrhenius_eval(rate: &ArrheniusRate, temperature: f64) -> Result<f64> {
    rate.eval(temperature)
}

/// Temperature at which two Arrhenius coefficients are equal.
///
/// Solves `A_a·exp(−E_a/kT) = A_b·exp(−E_b/kT)`, i.e.
/// `T = (E_b − E_a) / (k_B · ln(A_b/A_a))`. Returns `None` when the
/// curves never cross at a positive temperature.
pub fn crossover_temperature(a: &ArrheniusRate, b: &ArrheniusRate) -> Option<f64> {
    if a.is_disabled() || b.is_disabled() {
        return None;
    }
    let log_ratio = (b.prefactor / a.prefactor).ln();
    let t = (b.activation_energy - a.activation_energy) / (BOLTZMANN_EV * log_ratio);
    (t.is_finite() && t > 0.0).then_some(t)
}

/// Piecewise-linear time → temperature history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    breakpoints: Vec<(f64, f64)>,
}

impl TemperatureSchedule {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::domain("a schedule needs at least two breakpoints"));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::domain(format!(
                    "schedule times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, temp)) = breakpoints
            .iter()
            .find(|(t, temp)| !(t.is_finite() && temp.is_finite() && *temp > 0.0))
        {
            return Err(Error::domain(format!(
                "invalid breakpoint ({t}, {temp}): temperatures must be positive"
            )));
        }
        Ok(Self { breakpoints })
    }

    /// Two-breakpoint ramp starting at `start_temperature`, rising at
    /// `rate_per_min` K/min for `duration` seconds.
    pub fn linear_ramp(start_temperature: f64, rate_per_min: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::domain(format!(
                "ramp duration must be positive, got {duration}"
            )));
        }
        if !(rate_per_min >= 0.0) {
            return Err(Error::domain(format!(
                "ramp rate must be non-negative, got {rate_per_min}"
            )));
        }
        let end = start_temperature + rate_per_min * duration / 60.0;
        Self::new(vec![(0.0, start_temperature), (duration, end)])
    }

    /// Ramp between two temperatures over `duration` seconds.
    pub fn ramp_between(start_temperature: f64, end_temperature: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::domain(format!(
                "ramp duration must be positive, got {duration}"
            )));
        }
        Self::new(vec![(0.0, start_temperature), (duration, end_temperature)])
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn start_time(&self) -> f64 {
        self.breakpoints[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1].0
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Interpolated temperature at `t`, clamped outside the breakpoint span.
    pub fn eval(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        if t <= bp[0].0 {
            return bp[0].1;
        }
        let last = bp[bp.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        // first index with time > t; guaranteed in 1..len
        let hi = bp.partition_point(|&(time, _)| time <= t);
        let (t0, y0) = bp[hi - 1];
        let (t1, y1) = bp[hi];
        if t == t0 {
            return y0;
        }
        y0 + (y1 - y0) * (t - t0) / (t1 - t0)
    }

    /// Reads a `time_s,temperature_K` CSV.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "time_s" || &headers[1] != "temperature_K" {
            return Err(Error::Parse(format!(
                "schedule header must be `time_s,temperature_K`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let t = parse_f64(&record[0])?;
            let temp = parse_f64(&record[1])?;
            points.push((t, temp));
        }
        Self::new(points)
    }
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

/// Free-function form of [`TemperatureSchedule::eval`].
pub fn schedule_eval(schedule: &TemperatureSchedule, t: f64) -> f64 {
    schedule.eval(t)
}

/// Free-function form of [`TemperatureSchedule::linear_ramp`].
pub fn linear_ramp(start_temperature: f64, rate_per_min: f64, duration: f64) -> Result<TemperatureSchedule> {
    TemperatureSchedule::linear_ramp(start_temperature, rate_per_min, duration)
}

/// One trap family: plateau site density plus its exchange kinetics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapFamily {
    pub label: String,
    /// Plateau site density, atoms/m³.
    pub site_density: f64,
    pub trapping: ArrheniusRate,
    pub detrapping: ArrheniusRate,
}

impl TrapFamily {
    pub fn new(
        label: impl Into<String>,
        site_density: f64,
        trapping: ArrheniusRate,
        detrapping: ArrheniusRate,
    ) -> Result<Self> {
        if !(site_density.is_finite() && site_density >= 0.0) {
            return Err(Error::domain(format!(
                "trap site density must be non-negative, got {site_density}"
            )));
        }
        Ok(Self {
            label: label.into(),
            site_density,
            trapping,
            detrapping,
        })
    }
}

/// Smooth step `½(1 + tanh 2u)`: 0.5 at u = 0, rising from 12% to 88%
/// across u ∈ [−½, ½].
#[inline]
pub fn smooth_step(u: f64) -> f64 {
    0.5 * (1.0 + (2.0 * u).tanh())
}

/// A plateau of height `plateau_value` over `[start, end]` with smooth
/// edges of the given transition widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauProfile {
    plateau_value: f64,
    start: f64,
    end: f64,
    width_left: f64,
    width_right: f64,
}

impl PlateauProfile {
    pub fn new(plateau_value: f64, start: f64, end: f64, width_left: f64, width_right: f64) -> Result<Self> {
        if !(start < end) {
            return Err(Error::domain(format!(
                "plateau start {start} must be below end {end}"
            )));
        }
        if !(width_left > 0.0 && width_right > 0.0) {
            return Err(Error::domain("transition widths must be positive"));
        }
        if !(plateau_value.is_finite() && plateau_value >= 0.0) {
            return Err(Error::domain("plateau value must be non-negative"));
        }
        Ok(Self {
            plateau_value,
            start,
            end,
            width_left,
            width_right,
        })
    }

    /// A plateau that starts at `−∞` and falls off at `end`.
    pub fn falling(plateau_value: f64, end: f64, width: f64) -> Result<Self> {
        Self::new(plateau_value, end - 1.0, end, width, width).map(|p| Self {
            start: f64::NEG_INFINITY,
            ..p
        })
    }

    /// A plateau that rises at `start` and extends to `+∞`.
    pub fn rising(plateau_value: f64, start: f64, width: f64) -> Result<Self> {
        Self::new(plateau_value, start, start + 1.0, width, width).map(|p| Self {
            end: f64::INFINITY,
            ..p
        })
    }

    pub fn plateau_value(&self) -> f64 {
        self.plateau_value
    }

    pub fn eval(&self, x: f64) -> f64 {
        let left = smooth_step((x - self.start) / self.width_left);
        let right = smooth_step((self.end - x) / self.width_right);
        (self.plateau_value * left * right).clamp(0.0, self.plateau_value)
    }
}

/// Free-function form of [`PlateauProfile::eval`].
pub fn plateau_profile_eval(profile: &PlateauProfile, x: f64) -> f64 {
    profile.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_activation_returns_prefactor() {
        let r = ArrheniusRate::new(6.9e-7, 0.0).unwrap();
        assert_eq!(r.eval(300.0).unwrap(), 6.9e-7);
    }

    #[test]
    fn diffusivity_at_room_temperature() {
        // 50-digit evaluation of 6.9e-7 * exp(-1.07 / (8.617333262e-5 * 300))
        let r = ArrheniusRate::new(6.9e-7, 1.07).unwrap();
        let v = r.eval(300.0).unwrap();
        assert_relative_eq!(v, 7.305_336_569_076e-25, max_relative = 1e-12);
    }

    #[test]
    fn recombination_ordering_flips_between_500_and_540() {
        let d2 = ArrheniusRate::new(3.8e-16, 0.34).unwrap();
        let d2o = ArrheniusRate::new(3.8e1, 2.10).unwrap();
        assert!(d2.eval(500.0).unwrap() > d2o.eval(500.0).unwrap());
        assert!(d2o.eval(540.0).unwrap() > d2.eval(540.0).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ArrheniusRate::new(0.0, 1.0).is_err());
        assert!(ArrheniusRate::new(1.0, -0.1).is_err());
        assert!(ArrheniusRate::new(f64::NAN, 0.1).is_err());
        let r = ArrheniusRate::new(1.0, 1.0).unwrap();
        assert!(r.eval(0.0).is_err());
        assert!(r.eval(-5.0).is_err());
    }

    #[test]
    fn crossover_identical_rates_is_empty() {
        let r = ArrheniusRate::new(3.8e-16, 0.34).unwrap();
        assert_eq!(crossover_temperature(&r, &r), None);
    }

    #[test]
    fn crossover_recombination_pair() {
        let d2 = ArrheniusRate::new(3.8e-16, 0.34).unwrap();
        let d2o = ArrheniusRate::new(3.8e1, 2.10).unwrap();
        // closed form: 1.76 / (k_B * ln(1e17)) = 521.79 K
        let t = crossover_temperature(&d2, &d2o).unwrap();
        assert_relative_eq!(t, 1.76 / (BOLTZMANN_EV * 1e17f64.ln()), max_relative = 1e-14);
        assert!((t - 521.8).abs() < 0.1, "{t}");
        // reported as "about 520 K"
        assert!((t - 520.0).abs() < 5.0);
    }

    #[test]
    fn crossover_non_crossing() {
        // a dominates at every temperature
        let a = ArrheniusRate::new(10.0, 0.1).unwrap();
        let b = ArrheniusRate::new(1.0, 0.5).unwrap();
        assert_eq!(crossover_temperature(&a, &b), None);
        // same energy, different prefactor: parallel
        let c = ArrheniusRate::new(2.0, 0.5).unwrap();
        assert_eq!(crossover_temperature(&b, &c), None);
    }

    #[test]
    fn schedule_breakpoints_and_midpoints() {
        let s = TemperatureSchedule::new(vec![(0.0, 300.0), (100.0, 400.0), (300.0, 400.0), (400.0, 500.0)])
            .unwrap();
        assert_eq!(s.eval(100.0), 400.0);
        assert_eq!(s.eval(400.0), 500.0);
        assert_eq!(s.eval(50.0), 350.0);
        assert_eq!(s.eval(350.0), 450.0);
        assert_eq!(s.eval(-10.0), 300.0);
        assert_eq!(s.eval(1e9), 500.0);
    }

    #[test]
    fn ramp_arithmetic() {
        let s = linear_ramp(300.0, 5.0, 7200.0).unwrap();
        assert_eq!(s.eval(60.0), 305.0);
        assert_eq!(s.eval(7200.0), 900.0);

        let flat = linear_ramp(296.0, 0.0, 100.0).unwrap();
        assert_eq!(flat.eval(0.0), 296.0);
        assert_eq!(flat.eval(55.0), 296.0);
        assert_eq!(flat.eval(100.0), 296.0);

        assert!(linear_ramp(300.0, 5.0, 0.0).is_err());

        let t_f = 4.166 * 3600.0;
        let rate = (1001.408 - 295.775) / t_f * 60.0;
        let s2 = linear_ramp(295.775, rate, t_f).unwrap();
        assert_relative_eq!(s2.eval(t_f), 1001.408, max_relative = 1e-12);
    }

    #[test]
    fn schedule_rejects_invalid() {
        assert!(TemperatureSchedule::new(vec![(0.0, 300.0)]).is_err());
        assert!(TemperatureSchedule::new(vec![(0.0, 300.0), (0.0, 310.0)]).is_err());
        assert!(TemperatureSchedule::new(vec![(0.0, 300.0), (1.0, 0.0)]).is_err());
    }

    #[test]
    fn schedule_csv() {
        let text = "time_s,temperature_K\n0,300\n60,305\n120,320\n";
        let s = TemperatureSchedule::from_reader(text.as_bytes()).unwrap();
        assert_eq!(s.breakpoints().len(), 3);
        assert_eq!(s.eval(90.0), 312.5);

        let bad = "t,T\n0,300\n1,301\n";
        assert!(TemperatureSchedule::from_reader(bad.as_bytes()).is_err());
        let unsorted = "time_s,temperature_K\n10,300\n1,301\n";
        assert!(TemperatureSchedule::from_reader(unsorted.as_bytes()).is_err());
    }

    #[test]
    fn plateau_shape() {
        let p = PlateauProfile::new(2.0, 1.0, 10.0, 0.1, 0.2).unwrap();
        assert_relative_eq!(p.eval(5.0), 2.0, max_relative = 1e-4);
        assert_relative_eq!(p.eval(1.0), 1.0, max_relative = 1e-9);
        assert_relative_eq!(p.eval(10.0), 1.0, max_relative = 1e-9);
        assert!(p.eval(0.0) < 1e-4 * 2.0);
        assert!(p.eval(12.0) < 1e-4 * 2.0);
        // 12% -> 88% across one width
        assert_relative_eq!(p.eval(0.95) / 2.0, smooth_step(-0.5), max_relative = 1e-6);
        assert!((smooth_step(-0.5) - 0.1192).abs() < 1e-4);
        assert!((smooth_step(0.5) - 0.8808).abs() < 1e-4);

        let f = PlateauProfile::falling(1.0, 5.0, 0.5).unwrap();
        assert_eq!(f.eval(-1e6), 1.0);
        assert_relative_eq!(f.eval(5.0), 0.5, max_relative = 1e-12);
        let r = PlateauProfile::rising(1.0, 5.0, 0.5).unwrap();
        assert_eq!(r.eval(1e6), 1.0);
        assert!(r.eval(0.0) < 1e-8);
    }

    #[test]
    fn plateau_rejects_bad_geometry() {
        assert!(PlateauProfile::new(1.0, 2.0, 1.0, 0.1, 0.1).is_err());
        assert!(PlateauProfile::new(1.0, 0.0, 1.0, 0.0, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn arrhenius_positive_and_monotone(
            log_a in -20.0f64..20.0,
            e in 0.0f64..3.0,
            t1 in 50.0f64..2000.0,
            dt in 0.0f64..1000.0,
        ) {
            let r = ArrheniusRate::new(10f64.powf(log_a), e).unwrap();
            let lo = r.eval(t1).unwrap();
            let hi = r.eval(t1 + dt).unwrap();
            prop_assert!(lo > 0.0 || e / (BOLTZMANN_EV * t1) > 700.0);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn crossover_equalizes_rates(
            log_a in -20.0f64..20.0,
            log_b in -20.0f64..20.0,
            ea in 0.0f64..2.5,
            eb in 0.0f64..2.5,
        ) {
            let a = ArrheniusRate::new(10f64.powf(log_a), ea).unwrap();
            let b = ArrheniusRate::new(10f64.powf(log_b), eb).unwrap();
            if let Some(t) = crossover_temperature(&a, &b) {
                let ra = a.eval(t).unwrap();
                let rb = b.eval(t).unwrap();
                if ra > 1e-300 && rb > 1e-300 {
                    prop_assert!(((ra - rb) / ra.max(rb)).abs() <= 1e-10, "{} vs {}", ra, rb);
                }
            }
        }

        #[test]
        fn schedule_continuous(t in 0.0f64..400.0) {
            let s = TemperatureSchedule::new(vec![(0.0, 300.0), (100.0, 400.0), (250.0, 380.0), (400.0, 900.0)]).unwrap();
            let eps = 1e-9;
            prop_assert!((s.eval(t + eps) - s.eval(t)).abs() < 1e-5);
        }

        #[test]
        fn plateau_bounded(x in -1e3f64..1e3, v in 0.0f64..1e30) {
            let p = PlateauProfile::new(v, -1.0, 2.0, 0.05, 0.3).unwrap();
            let y = p.eval(x);
            prop_assert!(y >= 0.0 && y <= v);
        }
    }
}
