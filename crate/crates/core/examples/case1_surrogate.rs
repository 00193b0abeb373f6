//! Writes the model-derived surrogate for the case-1 measured release curve:
//! the optimized-parameter grain simulation, unit-peak normalized and sampled
//! every 10 K from 300 K to 900 K.
//!
//! Usage: `cargo run -p tdsim-core --example case1_surrogate -- <out.csv>`

use tdsim_core::calibration::ExperimentalCurve;
use tdsim_core::curve::normalize_curve;
use tdsim_core::grain::{simulate_grain_tds, tight_controller, GrainMeshSpec, GrainParams};
use tdsim_core::Normalization;

fn main() -> tdsim_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "experimental.csv".into());
    let run = simulate_grain_tds(&GrainParams::sample_e_optimized(), &GrainMeshSpec::default(), &tight_controller())?;
    let curve = normalize_curve(&run.curve, Normalization::UnitPeak)?;
    let points = (0..=60)
        .map(|k| {
            let t = 300.0 + 10.0 * k as f64;
            let r = curve.rate_at_temperature(t).unwrap_or(0.0);
            (t, (r * 1e4).round() / 1e4)
        })
        .collect();
    let fixture = ExperimentalCurve::new(points, "case1 surrogate")?;
    let file = std::fs::File::create(&out).map_err(|e| tdsim_core::Error::io(&out, e))?;
    fixture.write_csv(std::io::BufWriter::new(file))
}
