use std::f64::consts::PI;

use approx::assert_relative_eq;
use tdsim_core::curve::normalize_curve;
use tdsim_core::grain::{
    default_controller, init_equilibrium, simulate_grain_tds, tight_controller, GrainMeshSpec, GrainModel,
    GrainParams, GrainState,
};
use tdsim_core::numerics::integrate;
use tdsim_core::{ArrheniusRate, Normalization, StepController, TemperatureSchedule, BOLTZMANN_EV};

fn no_trap_params(schedule: TemperatureSchedule) -> GrainParams {
    GrainParams {
        defect_density: 0.0,
        initial_mobile: Some(1e24),
        schedule,
        ..GrainParams::sample_e_reference()
    }
}

/// Fraction released from a sphere with an absorbing surface after
/// dimensionless time `tau = ∫D dt / r²`.
fn sphere_fraction(tau: f64, terms: usize) -> f64 {
    let s: f64 = (1..=terms)
        .map(|n| {
            let n = n as f64;
            (-(n * n) * PI * PI * tau).exp() / (n * n)
        })
        .sum();
    1.0 - 6.0 / (PI * PI) * s
}

#[test]
fn sphere_release_matches_series() {
    let temperature = 700.0;
    let schedule = TemperatureSchedule::new(vec![(0.0, temperature), (1e5, temperature)]).unwrap();
    let params = no_trap_params(schedule.clone());
    let mesh = GrainMeshSpec { cells: 300, grading: 1.01 }.build(params.grain_radius).unwrap();
    let model = GrainModel::new(&params, mesh.clone()).unwrap();
    let d = params.diffusivity.eval(temperature).unwrap();
    let r2 = params.grain_radius.powi(2);
    let controller = StepController {
        dt_initial: 1e-4 * r2 / d,
        dt_max: 1e-4 * r2 / d,
        ..tight_controller()
    };

    let mut state = init_equilibrium(&params, mesh.cell_count()).unwrap();
    let initial = state.inventory(&mesh);
    for tau in [0.01, 0.03, 0.1, 0.2, 0.4] {
        let t_end = tau * r2 / d;
        let summary = integrate(&model, &schedule, state.to_state(), t_end, &controller, |_| {}).unwrap();
        state = GrainState::from_state(&summary.final_state);
        let released = 1.0 - state.inventory(&mesh) / initial;
        let exact = sphere_fraction(tau, 200);
        assert_relative_eq!(released, exact, max_relative = 0.01);
    }
}

#[test]
fn no_trap_ramp_peak_matches_transformed_series() {
    let params = no_trap_params(TemperatureSchedule::linear_ramp(300.0, 5.0, 7200.0).unwrap());
    let run = simulate_grain_tds(&params, &GrainMeshSpec::default(), &tight_controller()).unwrap();
    let sim_peak = run.curve.peak().unwrap().temperature;

    // A spatially uniform D(t) maps onto constant-D diffusion in τ = ∫D dt,
    // so the release rate is D(t)·(6/r²)·Σ exp(−n²π²τ/r²).
    let r2 = params.grain_radius.powi(2);
    let d = |t: f64| 6.9e-7 * (-1.07 / (BOLTZMANN_EV * (300.0 + t / 12.0))).exp();
    let h = 0.1;
    let mut tau = 0.0;
    let mut best = (0.0, 0.0);
    for k in 1..=72_000 {
        let t = k as f64 * h;
        tau += 0.5 * h * (d(t - h) + d(t));
        let sum: f64 = (1..=400)
            .map(|n| (-((n * n) as f64) * PI * PI * tau / r2).exp())
            .sum();
        let rate = d(t) * 6.0 / r2 * sum;
        if rate > best.1 {
            best = (300.0 + t / 12.0, rate);
        }
    }
    assert!((sim_peak - best.0).abs() < 3.0, "simulated {sim_peak} K vs series {} K", best.0);
    let peak_rate = run.curve.peak().unwrap().rate;
    let peaks = run
        .curve
        .samples()
        .windows(3)
        .filter(|w| w[1].rate > w[0].rate && w[1].rate >= w[2].rate && w[1].rate > 1e-3 * peak_rate)
        .count();
    assert_eq!(peaks, 1);
}

#[test]
fn reference_run_invariants() {
    let params = GrainParams::sample_e_reference();
    let run = simulate_grain_tds(&params, &GrainMeshSpec::default(), &default_controller()).unwrap();
    assert!(run.curve.peak().unwrap().temperature > 650.0);
    assert!(run.balance_error() < 5e-3);
    for pair in run.records.windows(2) {
        assert!(pair[1].trap_fraction <= pair[0].trap_fraction);
    }
    for r in &run.records {
        assert!(r.max_trap_fill <= 1.0 + 1e-12);
    }
    let s = &run.final_state;
    let cap = s.trap_fraction * params.lattice_density;
    assert!(s.mobile.iter().all(|c| *c >= 0.0));
    assert!(s.trapped.iter().all(|c| *c >= 0.0 && *c <= cap * (1.0 + 1e-12)));
}

#[test]
fn tight_run_conserves_to_a_tenth_percent() {
    let params = GrainParams::sample_e_reference();
    let run = simulate_grain_tds(&params, &GrainMeshSpec::default(), &tight_controller()).unwrap();
    assert!(run.balance_error() < 1e-3);
}

#[test]
fn normalized_curve_independent_of_concentration_scale() {
    let mesh = GrainMeshSpec { cells: 60, grading: 1.04 };
    let base = GrainParams::sample_e_reference();
    let reference = normalize_curve(
        &simulate_grain_tds(&base, &mesh, &default_controller()).unwrap().curve,
        Normalization::UnitPeak,
    )
    .unwrap();
    for c in [0.5, 2.0, 10.0] {
        let scaled = GrainParams {
            lattice_density: base.lattice_density * c,
            defect_density: base.defect_density * c,
            ..base.clone()
        };
        let curve = normalize_curve(
            &simulate_grain_tds(&scaled, &mesh, &default_controller()).unwrap().curve,
            Normalization::UnitPeak,
        )
        .unwrap();
        for k in 0..=60 {
            let t = 300.0 + 10.0 * k as f64;
            let a = reference.rate_at_temperature(t).unwrap();
            let b = curve.rate_at_temperature(t).unwrap();
            assert!((a - b).abs() < 1e-6, "c = {c}, T = {t}: {a} vs {b}");
        }
    }
}

#[test]
fn annihilation_matches_exponential_at_constant_temperature() {
    let temperature = 800.0;
    let params = GrainParams {
        schedule: TemperatureSchedule::new(vec![(0.0, temperature), (600.0, temperature)]).unwrap(),
        ..GrainParams::sample_e_reference()
    };
    let run = simulate_grain_tds(&params, &GrainMeshSpec { cells: 40, grading: 1.05 }, &tight_controller()).unwrap();
    let k = params.annihilation.eval(temperature).unwrap();
    let chi0 = params.initial_trap_fraction();
    for r in &run.records {
        assert_relative_eq!(r.trap_fraction / chi0, (-k * r.time).exp(), max_relative = 1e-6);
    }
}

#[test]
fn larger_annihilation_prefactor_anneals_earlier() {
    let mesh = GrainMeshSpec { cells: 60, grading: 1.04 };
    let half_temperature = |prefactor: f64| {
        let params = GrainParams {
            annihilation: ArrheniusRate::new(prefactor, 0.9).unwrap(),
            ..GrainParams::sample_e_reference()
        };
        let chi0 = params.initial_trap_fraction();
        let run = simulate_grain_tds(&params, &mesh, &default_controller()).unwrap();
        run.records
            .iter()
            .find(|r| r.trap_fraction < 0.5 * chi0)
            .map(|r| r.temperature)
            .unwrap_or(f64::INFINITY)
    };
    assert!(half_temperature(1e4) < half_temperature(1e2));
}

#[test]
fn missing_mobile_seed_without_traps_is_an_error() {
    let params = GrainParams {
        defect_density: 0.0,
        ..GrainParams::sample_e_reference()
    };
    assert!(init_equilibrium(&params, 4).is_err());
}
