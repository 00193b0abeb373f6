//! Curve comparison and Gaussian-process Bayesian optimization.
//!
//! The optimizer minimizes a black-box score over the unit cube. It starts
//! from a seeded Latin-hypercube design, then repeatedly fits a GP surrogate
//! and proposes a batch of points by maximizing Expected Improvement, using
//! the constant-liar heuristic to spread the batch.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{normalize_curve, Normalization, ReleaseCurve};
use crate::error::{Error, Result};
use crate::grain::{self, simulate_grain_tds, GrainMeshSpec, GrainParams};
use crate::kinetics::{parse_f64, ArrheniusRate};
use crate::numerics::StepController;

/// Default RMSPE denominator floor for unit-peak curves.
pub const DEFAULT_FLOOR: f64 = 0.01;

/// Score reported for parameter sets whose simulation fails.
pub const SENTINEL_SCORE: f64 = 1e6;

/// A measured, normalized release curve against temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalCurve {
    points: Vec<(f64, f64)>,
    source: String,
    normalization: Normalization,
}

impl ExperimentalCurve {
    /// Points are `(temperature K, normalized rate)`; unit-peak normalization
    /// is assumed.
    pub fn new(points: Vec<(f64, f64)>, source: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("experimental curve is empty"));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::domain("experimental temperatures must be strictly increasing"));
        }
        if points.iter().any(|p| !(p.1 >= 0.0) || !p.0.is_finite()) {
            return Err(Error::domain("experimental rates must be non-negative"));
        }
        Ok(Self {
            points,
            source: source.into(),
            normalization: Normalization::UnitPeak,
        })
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Temperature span `(first, last)`.
    pub fn span(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// Piecewise-linear interpolation, clamped outside the span.
    pub fn interp(&self, temperature: f64) -> f64 {
        let p = &self.points;
        if temperature <= p[0].0 {
            return p[0].1;
        }
        if temperature >= p[p.len() - 1].0 {
            return p[p.len() - 1].1;
        }
        let hi = p.partition_point(|q| q.0 <= temperature);
        let (a, b) = (p[hi - 1], p[hi]);
        a.1 + (b.1 - a.1) * (temperature - a.0) / (b.0 - a.0)
    }

    /// Reads a `temperature_K,normalized_rate` CSV; the source label is the
    /// file name.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(file);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "temperature_K" || &headers[1] != "normalized_rate" {
            return Err(Error::Parse(format!(
                "{}: expected header temperature_K,normalized_rate",
                path.display()
            )));
        }
        let mut points = Vec::new();
        for record in rdr.records() {
            let r = record?;
            points.push((parse_f64(&r[0])?, parse_f64(&r[1])?));
        }
        Self::new(points, path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<experimental.csv>", e);
        writeln!(out, "temperature_K,normalized_rate").map_err(io)?;
        for (t, r) in &self.points {
            writeln!(out, "{t},{r:e}").map_err(io)?;
        }
        Ok(())
    }
}

/// Free-function form of [`ExperimentalCurve::interp`].
pub fn interp_experimental(curve: &ExperimentalCurve, temperature: f64) -> f64 {
    curve.interp(temperature)
}

/// Root mean square percentage error of `simulated` against `experimental`
/// over the simulated samples inside the experimental span.
pub fn rmspe(simulated: &ReleaseCurve, experimental: &ExperimentalCurve, floor: f64) -> Result<f64> {
    if simulated.normalization() != experimental.normalization() {
        return Err(Error::domain(format!(
            "normalization mismatch: simulated {:?}, experimental {:?}",
            simulated.normalization(),
            experimental.normalization()
        )));
    }
    if !(floor > 0.0) {
        return Err(Error::domain("RMSPE floor must be positive"));
    }
    let (lo, hi) = experimental.span();
    let (sum, count) = simulated
        .samples()
        .iter()
        .filter(|s| s.temperature >= lo && s.temperature <= hi)
        .fold((0.0, 0usize), |(acc, n), s| {
            let e = experimental.interp(s.temperature);
            let rel = (s.rate - e) / e.max(floor);
            (acc + rel * rel, n + 1)
        });
    if count == 0 {
        return Err(Error::domain("simulated and experimental curves do not overlap in temperature"));
    }
    Ok(100.0 * (sum / count as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

/// Box-bounded search space mapped onto the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    dimensions: Vec<Dimension>,
}

impl ParameterSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::domain("parameter space needs at least one dimension"));
        }
        for d in &dimensions {
            if !(d.lower < d.upper) {
                return Err(Error::domain(format!("{}: lower bound must be below upper", d.name)));
            }
            if d.scale == Scale::Log10 && !(d.lower > 0.0) {
                return Err(Error::domain(format!("{}: log10 dimension needs a positive lower bound", d.name)));
            }
        }
        Ok(Self { dimensions })
    }

    /// The eight grain kinetic parameters: four log10-scaled prefactors and
    /// four activation energies.
    pub fn grain_kinetics() -> Self {
        let dim = |name: &str, lower, upper, scale| Dimension {
            name: name.to_string(),
            lower,
            upper,
            scale,
        };
        Self::new(vec![
            dim("D_0", 1e-8, 1e-4, Scale::Log10),
            dim("E_d", 0.8, 1.4, Scale::Linear),
            dim("alpha_t0", 1e7, 1e10, Scale::Log10),
            dim("epsilon_t", 0.8, 1.3, Scale::Linear),
            dim("alpha_r0", 1e5, 1e8, Scale::Log10),
            dim("epsilon_r", 0.9, 1.5, Scale::Linear),
            dim("k_dpda_0", 1e0, 1e5, Scale::Log10),
            dim("E_dpda", 0.5, 1.5, Scale::Linear),
        ])
        .expect("static bounds are valid")
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn to_physical(&self, unit: &[f64]) -> Result<Vec<f64>> {
        if unit.len() != self.len() {
            return Err(Error::domain("point dimension does not match the space"));
        }
        if unit.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::domain("point lies outside the unit cube"));
        }
        Ok(self
            .dimensions
            .iter()
            .zip(unit)
            .map(|(d, &u)| match d.scale {
                Scale::Linear => d.lower + u * (d.upper - d.lower),
                Scale::Log10 => 10f64.powf(d.lower.log10() + u * (d.upper.log10() - d.lower.log10())),
            })
            .collect())
    }

    pub fn to_unit(&self, physical: &[f64]) -> Result<Vec<f64>> {
        if physical.len() != self.len() {
            return Err(Error::domain("point dimension does not match the space"));
        }
        self.dimensions
            .iter()
            .zip(physical)
            .map(|(d, &v)| {
                let u = match d.scale {
                    Scale::Linear => (v - d.lower) / (d.upper - d.lower),
                    Scale::Log10 => {
                        if !(v > 0.0) {
                            return Err(Error::domain(format!("{}: log10 value must be positive", d.name)));
                        }
                        (v.log10() - d.lower.log10()) / (d.upper.log10() - d.lower.log10())
                    }
                };
                if !(-1e-12..=1.0 + 1e-12).contains(&u) {
                    return Err(Error::domain(format!("{} = {v} lies outside [{}, {}]", d.name, d.lower, d.upper)));
                }
                Ok(u.clamp(0.0, 1.0))
            })
            .collect()
    }
}

/// Writes the eight grain kinetic values (in [`ParameterSpace::grain_kinetics`]
/// order) into a copy of `base`.
pub fn grain_params_with(base: &GrainParams, values: &[f64]) -> Result<GrainParams> {
    if values.len() != 8 {
        return Err(Error::domain("expected eight grain kinetic values"));
    }
    Ok(GrainParams {
        diffusivity: ArrheniusRate::new(values[0], values[1])?,
        trapping: ArrheniusRate::new(values[2], values[3])?,
        detrapping: ArrheniusRate::new(values[4], values[5])?,
        annihilation: ArrheniusRate::new(values[6], values[7])?,
        ..base.clone()
    })
}

/// The eight grain kinetic values of `params`.
pub fn grain_kinetic_values(params: &GrainParams) -> Vec<f64> {
    [params.diffusivity, params.trapping, params.detrapping, params.annihilation]
        .iter()
        .flat_map(|r| [r.prefactor(), r.activation_energy()])
        .collect()
}

/// Low-temperature constraint: penalize normalized release above `target`
/// at each probe temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySettings {
    pub weight: f64,
    pub target: f64,
    pub probes: Vec<f64>,
}

impl Default for PenaltySettings {
    fn default() -> Self {
        Self {
            weight: 1.0,
            target: 0.01,
            probes: (0..8).map(|k| 300.0 + 25.0 * k as f64).collect(),
        }
    }
}

impl PenaltySettings {
    pub fn evaluate(&self, curve: &ReleaseCurve) -> f64 {
        self.weight
            * self
                .probes
                .iter()
                .filter_map(|&t| curve.rate_at_temperature(t))
                .map(|s| (s - self.target).max(0.0).powi(2))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub rmspe: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Calibration objective for the grain model against a measured curve.
#[derive(Debug, Clone)]
pub struct GrainObjective {
    pub base: GrainParams,
    pub fixture: ExperimentalCurve,
    pub space: ParameterSpace,
    pub mesh: GrainMeshSpec,
    pub controller: StepController,
    pub penalty: PenaltySettings,
    pub floor: f64,
}

impl GrainObjective {
    pub fn new(base: GrainParams, fixture: ExperimentalCurve) -> Self {
        Self {
            base,
            fixture,
            space: ParameterSpace::grain_kinetics(),
            mesh: GrainMeshSpec::default(),
            controller: grain::default_controller(),
            penalty: PenaltySettings::default(),
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn params_at(&self, unit: &[f64]) -> Result<GrainParams> {
        grain_params_with(&self.base, &self.space.to_physical(unit)?)
    }

    /// Simulated curve normalized to the fixture's convention.
    pub fn simulate(&self, params: &GrainParams) -> Result<ReleaseCurve> {
        let run = simulate_grain_tds(params, &self.mesh, &self.controller)?;
        normalize_curve(&run.curve, self.fixture.normalization())
    }

    pub fn score_params(&self, params: &GrainParams) -> Result<ScoreBreakdown> {
        let curve = self.simulate(params)?;
        let rmspe = rmspe(&curve, &self.fixture, self.floor)?;
        let penalty = self.penalty.evaluate(&curve);
        Ok(ScoreBreakdown {
            rmspe,
            penalty,
            total: rmspe + penalty,
        })
    }

    /// Score at a unit-cube point; failures map to [`SENTINEL_SCORE`].
    pub fn evaluate(&self, unit: &[f64]) -> f64 {
        self.params_at(unit)
            .and_then(|p| self.score_params(&p))
            .map(|s| s.total)
            .ok()
            .filter(|s| s.is_finite())
            .map_or(SENTINEL_SCORE, |s| s.min(SENTINEL_SCORE))
    }
}

/// Score of a unit-cube point of the grain kinetic space with default
/// objective settings.
pub fn objective(point: &[f64], fixture: &ExperimentalCurve, base: &GrainParams) -> f64 {
    GrainObjective::new(base.clone(), fixture.clone()).evaluate(point)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function, `½·erfc(−z/√2)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected Improvement below `best` (minimization).
pub fn expected_improvement(mean: f64, stddev: f64, best: f64) -> f64 {
    let gain = best - mean;
    if !(stddev > 0.0) {
        return gain.max(0.0);
    }
    let z = gain / stddev;
    (gain * normal_cdf(z) + stddev * normal_pdf(z)).max(0.0)
}

/// Posterior mean and variance at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn stddev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

const LENGTH_SCALE_BOUNDS: (f64, f64) = (0.01, 20.0);
const BASE_JITTER: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-2;
const LOCAL_SPREADS: [f64; 3] = [0.1, 0.03, 0.01];

/// Gaussian-process regression with an anisotropic squared-exponential
/// kernel `s·exp(−½ Σ ((a_j − b_j)/ℓ_j)²)` on standardized targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    length_scales: Vec<f64>,
    /// Signal variance in standardized units.
    signal: f64,
    jitter: f64,
    /// Cholesky factor of the correlation matrix plus jitter.
    chol: DMatrix<f64>,
    /// `R⁻¹·y_std`.
    weights: DVector<f64>,
    log_likelihood: f64,
}

fn correlation(a: &[f64], b: &[f64], inv_l: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(inv_l)
        .map(|((x, y), il)| {
            let d = (x - y) * il;
            d * d
        })
        .sum();
    (-0.5 * r2).exp()
}

fn forward_substitute(l: &DMatrix<f64>, rhs: &mut [f64]) {
    let n = rhs.len();
    for i in 0..n {
        let mut acc = rhs[i];
        for j in 0..i {
            acc -= l[(i, j)] * rhs[j];
        }
        rhs[i] = acc / l[(i, i)];
    }
}

impl GpModel {
    /// Fits with fixed length scales; the signal variance is set to its
    /// maximum-likelihood value.
    pub fn fit_with(x: &[Vec<f64>], y: &[f64], length_scales: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::domain("GP fit needs at least two points with matching targets"));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|p| p.len() != d) || length_scales.len() != d {
            return Err(Error::domain("inconsistent GP input dimensions"));
        }
        if x.iter().flatten().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
            return Err(Error::domain("GP inputs must lie in the unit cube"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("GP targets must be finite"));
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if var.sqrt() > 1e-12 * y_mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_scale));
        let inv_l: Vec<f64> = length_scales.iter().map(|l| 1.0 / l).collect();

        let mut base = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let r = correlation(&x[i], &x[j], &inv_l);
                base[(i, j)] = r;
                base[(j, i)] = r;
            }
        }
        let mut jitter = BASE_JITTER;
        loop {
            let mut k = base.clone();
            for i in 0..n {
                k[(i, i)] += jitter;
            }
            if let Some(ch) = k.cholesky() {
                let weights = ch.solve(&ys);
                let chol = ch.unpack();
                let quad = ys.dot(&weights);
                let signal = (quad / n as f64).max(1e-12);
                let log_det: f64 = (0..n).map(|i| 2.0 * chol[(i, i)].ln()).sum();
                let log_likelihood = -0.5 * n as f64 * signal.ln() - 0.5 * log_det;
                return Ok(Self {
                    x: x.to_vec(),
                    y: y.to_vec(),
                    y_mean,
                    y_scale,
                    length_scales: length_scales.to_vec(),
                    signal,
                    jitter,
                    chol,
                    weights,
                    log_likelihood,
                });
            }
            jitter *= 10.0;
            if jitter > MAX_JITTER {
                return Err(Error::Singular { row: 0 });
            }
        }
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Prior signal variance in the units of `y`.
    pub fn signal_variance(&self) -> f64 {
        self.signal * self.y_scale * self.y_scale
    }

    /// Profile log marginal likelihood (up to a constant).
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn predict(&self, point: &[f64]) -> Prediction {
        let inv_l: Vec<f64> = self.length_scales.iter().map(|l| 1.0 / l).collect();
        let mut r: Vec<f64> = self.x.iter().map(|xi| correlation(xi, point, &inv_l)).collect();
        let mean_std: f64 = r.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum();
        forward_substitute(&self.chol, &mut r);
        let explained: f64 = r.iter().map(|v| v * v).sum();
        let var_std = (self.signal * (1.0 - explained)).max(0.0);
        Prediction {
            mean: self.y_mean + self.y_scale * mean_std,
            variance: var_std * self.y_scale * self.y_scale,
        }
    }

    /// Same hyperparameters, one more observation.
    pub fn with_observation(&self, point: Vec<f64>, value: f64) -> Result<Self> {
        let mut x = self.x.clone();
        let mut y = self.y.clone();
        x.push(point);
        y.push(value);
        Self::fit_with(&x, &y, &self.length_scales)
    }
}

/// Fits a GP, choosing length scales by maximizing the profile likelihood:
/// a coarse isotropic scan followed by coordinate search in log space.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64]) -> Result<GpModel> {
    let d = x.first().map(|p| p.len()).ok_or_else(|| Error::domain("GP fit needs data"))?;
    let (lo, hi) = LENGTH_SCALE_BOUNDS;
    let mut best: Option<GpModel> = None;
    let consider = |candidate: Result<GpModel>, best: &mut Option<GpModel>| -> Result<bool> {
        let m = candidate?;
        let better = best.as_ref().is_none_or(|b| m.log_likelihood > b.log_likelihood + 1e-12);
        if better {
            *best = Some(m);
        }
        Ok(better)
    };
    for l in [0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2] {
        consider(GpModel::fit_with(x, y, &vec![l; d]), &mut best)?;
    }
    let mut step = 2f64.ln();
    let mut evaluations = 0;
    while step > 1.05f64.ln() && evaluations < 40 * d {
        let mut improved = false;
        for j in 0..d {
            for dir in [1.0, -1.0] {
                let current = best.as_ref().expect("scan produced a model").length_scales.clone();
                let mut trial = current.clone();
                trial[j] = (trial[j] * (dir * step).exp()).clamp(lo, hi);
                if trial[j] == current[j] {
                    continue;
                }
                evaluations += 1;
                if consider(GpModel::fit_with(x, y, &trial), &mut best)? {
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best.expect("scan produced a model"))
}

fn min_distance(point: &[f64], others: &[Vec<f64>]) -> f64 {
    others
        .iter()
        .map(|o| o.iter().zip(point).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Candidate-search effort for EI maximization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSettings {
    /// Uniform random candidates per proposal.
    pub random_candidates: usize,
    /// Gaussian perturbations around each of the three best observations.
    pub local_candidates: usize,
    /// Candidates refined by pattern search.
    pub refined: usize,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        Self {
            random_candidates: 2000,
            local_candidates: 300,
            refined: 10,
        }
    }
}

fn refine_ei(model: &GpModel, best: f64, start: Vec<f64>, start_ei: f64) -> (Vec<f64>, f64) {
    let ei = |p: &[f64]| {
        let pr = model.predict(p);
        expected_improvement(pr.mean, pr.stddev(), best)
    };
    let mut point = start;
    let mut value = start_ei;
    let mut step = 0.05;
    while step > 1e-4 {
        let mut improved = false;
        for j in 0..point.len() {
            for dir in [1.0, -1.0] {
                let mut trial = point.clone();
                trial[j] = (trial[j] + dir * step).clamp(0.0, 1.0);
                let v = ei(&trial);
                if v > value {
                    point = trial;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (point, value)
}

fn maximize_ei<R: Rng>(
    model: &GpModel,
    best: f64,
    avoid: &[Vec<f64>],
    settings: &AcquisitionSettings,
    rng: &mut R,
) -> Vec<f64> {
    let d = model.x[0].len();
    let mut candidates: Vec<Vec<f64>> = (0..settings.random_candidates)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut order: Vec<usize> = (0..model.y.len()).collect();
    order.sort_by(|&a, &b| model.y[a].total_cmp(&model.y[b]));
    for &k in order.iter().take(3) {
        for (i, _) in (0..settings.local_candidates).enumerate() {
            let spread = LOCAL_SPREADS[i % LOCAL_SPREADS.len()];
            candidates.push(
                model.x[k]
                    .iter()
                    .map(|&c| {
                        let g: f64 = rng.sample(StandardNormal);
                        (c + spread * g).clamp(0.0, 1.0)
                    })
                    .collect(),
            );
        }
    }
    let mut scored: Vec<(f64, Vec<f64>)> = candidates
        .into_iter()
        .map(|c| {
            let pr = model.predict(&c);
            (expected_improvement(pr.mean, pr.stddev(), best), c)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut chosen: Option<(Vec<f64>, f64)> = None;
    for (v, c) in scored.iter().take(settings.refined.max(1)) {
        let (p, pv) = refine_ei(model, best, c.clone(), *v);
        if min_distance(&p, avoid) >= 1e-6 && chosen.as_ref().is_none_or(|(_, cv)| pv > *cv) {
            chosen = Some((p, pv));
        }
    }
    if let Some((p, _)) = chosen {
        return p;
    }
    scored
        .into_iter()
        .map(|(_, c)| c)
        .find(|c| min_distance(c, avoid) >= 1e-6)
        .unwrap_or_else(|| (0..d).map(|_| rng.random::<f64>()).collect())
}

/// Proposes `batch_size` distinct points by EI maximization with
/// constant-liar fantasies at the current best value.
pub fn propose_batch<R: Rng>(
    model: &GpModel,
    batch_size: usize,
    settings: &AcquisitionSettings,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if batch_size == 0 {
        return Err(Error::domain("batch size must be at least one"));
    }
    let best = model.y.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut current = model.clone();
    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(batch_size);
    for k in 0..batch_size {
        let mut avoid = model.x.clone();
        avoid.extend(batch.iter().cloned());
        let p = maximize_ei(&current, best, &avoid, settings, rng);
        if k + 1 < batch_size {
            current = current.with_observation(p.clone(), best)?;
        }
        batch.push(p);
    }
    Ok(batch)
}

/// Seeded Latin-hypercube design of `n` points in `[0,1]^d`.
pub fn latin_hypercube<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            points[i][j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub iterations: usize,
    pub batch_size: usize,
    pub initial_design: usize,
    pub seed: u64,
    /// Fit the surrogate to `ln(1 + score)` instead of the raw score.
    pub log_transform: bool,
    pub acquisition: AcquisitionSettings,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            iterations: 40,
            batch_size: 5,
            initial_design: 32,
            seed: 42,
            log_transform: true,
            acquisition: AcquisitionSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// 0 for the initial design, then 1, 2, ….
    pub iteration: usize,
    /// Unit-cube coordinates.
    pub point: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub history: Vec<Evaluation>,
    pub best: usize,
}

impl OptimizationResult {
    pub fn best(&self) -> &Evaluation {
        &self.history[self.best]
    }

    /// Running minimum of the score over the history.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut acc = f64::INFINITY;
        self.history
            .iter()
            .map(|e| {
                acc = acc.min(e.score);
                acc
            })
            .collect()
    }

    /// History as CSV: iteration, one column per dimension (physical values
    /// when a space is given, unit coordinates otherwise), score.
    pub fn write_history_csv<W: Write>(&self, space: Option<&ParameterSpace>, mut out: W) -> Result<()> {
        let io = |e| Error::io("<history.csv>", e);
        let d = self.history.first().map_or(0, |e| e.point.len());
        let names: Vec<String> = match space {
            Some(s) => s.dimensions().iter().map(|d| d.name.clone()).collect(),
            None => (0..d).map(|j| format!("x{j}")).collect(),
        };
        writeln!(out, "iteration,{},score", names.join(",")).map_err(io)?;
        for e in &self.history {
            let values = match space {
                Some(s) => s.to_physical(&e.point)?,
                None => e.point.clone(),
            };
            let cols: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{},{},{:e}", e.iteration, cols.join(","), e.score).map_err(io)?;
        }
        Ok(())
    }

    /// Best point as `name = value` lines.
    pub fn write_best<W: Write>(&self, space: &ParameterSpace, mut out: W) -> Result<()> {
        let io = |e| Error::io("<best.txt>", e);
        let best = self.best();
        for (d, v) in space.dimensions().iter().zip(space.to_physical(&best.point)?) {
            writeln!(out, "{} = {:e}", d.name, v).map_err(io)?;
        }
        writeln!(out, "score = {:e}", best.score).map_err(io)?;
        Ok(())
    }
}

fn is_failure(score: f64) -> bool {
    !score.is_finite() || score >= SENTINEL_SCORE
}

/// Minimizes `objective` over `[0,1]^dimension`.
pub fn optimize<F>(objective: F, dimension: usize, settings: &OptimizerSettings) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if dimension == 0 || settings.batch_size == 0 || settings.initial_design < 2 {
        return Err(Error::domain("optimizer needs a dimension, a batch size and at least two initial points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let evaluate = |points: Vec<Vec<f64>>, iteration: usize| -> Vec<Evaluation> {
        let scores: Vec<f64> = points.par_iter().map(|p| objective(p)).collect();
        points
            .into_iter()
            .zip(scores)
            .map(|(point, score)| Evaluation {
                iteration,
                point,
                score,
            })
            .collect()
    };
    let mut history = evaluate(latin_hypercube(settings.initial_design, dimension, &mut rng), 0);

    for iteration in 1..=settings.iterations {
        let finite: Vec<f64> = history.iter().map(|e| e.score).filter(|s| !is_failure(*s)).collect();
        if finite.is_empty() {
            return Err(Error::OptimizationFailed("every evaluation failed".into()));
        }
        let transform = |s: f64| if settings.log_transform { s.max(0.0).ln_1p() } else { s };
        let worst = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x: Vec<Vec<f64>> = history.iter().map(|e| e.point.clone()).collect();
        let y: Vec<f64> = history
            .iter()
            .map(|e| transform(if is_failure(e.score) { worst } else { e.score }))
            .collect();
        let model = gp_fit(&x, &y)?;
        let batch = propose_batch(&model, settings.batch_size, &settings.acquisition, &mut rng)?;
        history.extend(evaluate(batch, iteration));
    }

    let best = history
        .iter()
        .enumerate()
        .filter(|(_, e)| !is_failure(e.score))
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::OptimizationFailed("every evaluation failed".into()))?;
    Ok(OptimizationResult { history, best })
}
