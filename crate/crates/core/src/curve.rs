//! Desorption-rate series and their normalization.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::parse_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    UnitPeak,
    UnitIntegral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub time: f64,
    pub temperature: f64,
    pub rate: f64,
}

/// Release rate against time and temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseCurve {
    samples: Vec<CurveSample>,
    normalization: Normalization,
}

/// Slack allowed below zero for rates coming out of a converged solve.
pub const NEGATIVE_RATE_SLACK: f64 = 1e-12;

impl ReleaseCurve {
    pub fn new(samples: Vec<CurveSample>, normalization: Normalization) -> Result<Self> {
        if let Some(w) = samples.windows(2).find(|w| !(w[1].time > w[0].time)) {
            return Err(Error::domain(format!(
                "curve times must be strictly increasing ({} then {})",
                w[0].time, w[1].time
            )));
        }
        let peak = samples.iter().map(|s| s.rate.abs()).fold(0.0, f64::max);
        if let Some(s) = samples
            .iter()
            .find(|s| !s.rate.is_finite() || s.rate < -NEGATIVE_RATE_SLACK * peak.max(1.0))
        {
            return Err(Error::domain(format!(
                "curve rate at t = {} is invalid ({})",
                s.time, s.rate
            )));
        }
        Ok(Self {
            samples,
            normalization,
        })
    }

    pub fn raw(samples: Vec<CurveSample>) -> Result<Self> {
        Self::new(samples, Normalization::Raw)
    }

    pub fn samples(&self) -> &[CurveSample] {
        &self.samples
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample with the largest rate.
    pub fn peak(&self) -> Option<CurveSample> {
        self.samples
            .iter()
            .copied()
            .fold(None, |best: Option<CurveSample>, s| match best {
                Some(b) if b.rate >= s.rate => Some(b),
                _ => Some(s),
            })
    }

    /// Trapezoidal `∫ rate dt`.
    pub fn integral(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| 0.5 * (w[0].rate + w[1].rate) * (w[1].time - w[0].time))
            .sum()
    }

    /// Running trapezoidal integral, one entry per sample (first is zero).
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.samples.len());
        for (k, s) in self.samples.iter().enumerate() {
            if k > 0 {
                let p = &self.samples[k - 1];
                acc += 0.5 * (p.rate + s.rate) * (s.time - p.time);
            }
            out.push(acc);
        }
        out
    }

    /// Linear interpolation of the rate at temperature `temperature`,
    /// assuming temperatures increase along the curve. Clamped at the ends.
    pub fn rate_at_temperature(&self, temperature: f64) -> Option<f64> {
        let s = &self.samples;
        let first = s.first()?;
        let last = s.last()?;
        if temperature <= first.temperature {
            return Some(first.rate);
        }
        if temperature >= last.temperature {
            return Some(last.rate);
        }
        let hi = s.partition_point(|p| p.temperature <= temperature);
        let (a, b) = (s[hi - 1], s[hi]);
        if b.temperature == a.temperature {
            return Some(b.rate);
        }
        Some(a.rate + (b.rate - a.rate) * (temperature - a.temperature) / (b.temperature - a.temperature))
    }

    /// Returns a copy with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| CurveSample {
                    rate: s.rate * factor,
                    ..*s
                })
                .collect(),
            normalization: self.normalization,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time_s,temperature_K,release_rate").map_err(|e| Error::io("<csv>", e))?;
        for s in &self.samples {
            writeln!(out, "{:e},{},{:e}", s.time, s.temperature, s.rate).map_err(|e| Error::io("<csv>", e))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a `time_s,temperature_K,release_rate` CSV.
    pub fn load_csv(path: impl AsRef<Path>, normalization: Normalization) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut samples = Vec::new();
        for record in rdr.records() {
            let r = record?;
            if r.len() < 3 {
                return Err(Error::Parse(format!("{}: expected three columns", path.display())));
            }
            samples.push(CurveSample {
                time: parse_f64(&r[0])?,
                temperature: parse_f64(&r[1])?,
                rate: parse_f64(&r[2])?,
            });
        }
        Self::new(samples, normalization)
    }
}

/// Rescales a curve so that its peak (or trapezoidal integral) is one.
pub fn normalize_curve(curve: &ReleaseCurve, mode: Normalization) -> Result<ReleaseCurve> {
    if curve.is_empty() {
        return Err(Error::domain("cannot normalize an empty curve"));
    }
    let divisor = match mode {
        Normalization::Raw => return Ok(ReleaseCurve { normalization: Normalization::Raw, ..curve.clone() }),
        Normalization::UnitPeak => curve.samples.iter().map(|s| s.rate).fold(f64::NEG_INFINITY, f64::max),
        Normalization::UnitIntegral => curve.integral(),
    };
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::domain(format!(
            "curve cannot be normalized: {mode:?} reference is {divisor}"
        )));
    }
    let mut out = curve.scaled(1.0 / divisor);
    out.normalization = mode;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn curve(rates: &[f64]) -> ReleaseCurve {
        ReleaseCurve::raw(
            rates
                .iter()
                .enumerate()
                .map(|(k, &r)| CurveSample {
                    time: k as f64,
                    temperature: 300.0 + 10.0 * k as f64,
                    rate: r,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unit_peak_idempotent() {
        let c = normalize_curve(&curve(&[0.0, 0.5, 1.0, 0.25]), Normalization::UnitPeak).unwrap();
        let again = normalize_curve(&c, Normalization::UnitPeak).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn normalization_scale_invariant() {
        let base = curve(&[0.1, 0.7, 2.0, 0.3]);
        for mode in [Normalization::UnitPeak, Normalization::UnitIntegral] {
            let a = normalize_curve(&base, mode).unwrap();
            for c in [0.5, 2.0, 10.0] {
                let b = normalize_curve(&base.scaled(c), mode).unwrap();
                for (x, y) in a.samples().iter().zip(b.samples()) {
                    assert_relative_eq!(x.rate, y.rate, max_relative = 1e-14);
                }
            }
        }
    }

    #[test]
    fn triangle_area_two() {
        // triangle of height 2 over base 2 has area 2
        let c = curve(&[0.0, 2.0, 0.0]);
        assert_eq!(c.integral(), 2.0);
        let n = normalize_curve(&c, Normalization::UnitIntegral).unwrap();
        assert_eq!(n.samples()[1].rate, 1.0);
        assert_eq!(n.samples()[1].time, 1.0);
        assert_eq!(n.samples()[1].temperature, 310.0);
    }

    #[test]
    fn zero_curve_rejected() {
        assert!(normalize_curve(&curve(&[0.0, 0.0]), Normalization::UnitPeak).is_err());
        assert!(normalize_curve(&curve(&[]), Normalization::UnitPeak).is_err());
    }

    #[test]
    fn rejects_unsorted_and_negative() {
        let s = |t: f64, r: f64| CurveSample {
            time: t,
            temperature: 300.0,
            rate: r,
        };
        assert!(ReleaseCurve::raw(vec![s(1.0, 1.0), s(1.0, 1.0)]).is_err());
        assert!(ReleaseCurve::raw(vec![s(0.0, 1.0), s(1.0, -0.5)]).is_err());
        assert!(ReleaseCurve::raw(vec![s(0.0, 1.0), s(1.0, -1e-15)]).is_ok());
    }

    #[test]
    fn temperature_interpolation() {
        let c = curve(&[0.0, 1.0, 3.0]);
        assert_eq!(c.rate_at_temperature(305.0), Some(0.5));
        assert_eq!(c.rate_at_temperature(100.0), Some(0.0));
        assert_eq!(c.rate_at_temperature(1000.0), Some(3.0));
        assert_eq!(c.cumulative(), vec![0.0, 0.5, 2.5]);
        assert_eq!(c.peak().unwrap().rate, 3.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let c = curve(&[0.0, 1.5e18, 3.25e17]);
        c.save_csv(&path).unwrap();
        let back = ReleaseCurve::load_csv(&path, Normalization::Raw).unwrap();
        assert_eq!(c, back);
    }
}
