use approx::assert_relative_eq;
use tdsim_core::slab::{
    default_controller, init_slab_state, simulate_slab_tds, trap_capacity_profile, SlabMeshSpec, SlabModel,
    SlabParams, SlabRun,
};
use tdsim_core::{ArrheniusRate, StepController};

fn tight() -> StepController {
    StepController {
        dt_max: 4.0,
        newton_tolerance: 1e-10,
        ..default_controller()
    }
}

fn run(params: &SlabParams, controller: &StepController) -> SlabRun {
    simulate_slab_tds(params, &SlabMeshSpec::default(), controller).unwrap()
}

#[test]
fn initial_inventory_matches_profile_quadrature() {
    let p = SlabParams::calibrated(5e-9);
    let mesh = SlabMeshSpec::default().build(&p).unwrap();
    let model = SlabModel::new(&p, &mesh).unwrap();
    let state = init_slab_state(&p, &mesh).unwrap();
    let on_mesh = model.inventory(&state);
    // trapezoidal quadrature of the capacity profiles on a fine piecewise
    // grid, independent of the simulation mesh
    let quad = |k: usize| {
        let mut total = 0.0;
        let pieces = [(0.0, 3e-6, 300_000usize), (3e-6, p.slab_thickness, 100_000)];
        for (a, b, n) in pieces {
            let h = (b - a) / n as f64;
            for j in 0..n {
                let x0 = a + j as f64 * h;
                let f0 = trap_capacity_profile(&p, k, x0).unwrap();
                let f1 = trap_capacity_profile(&p, k, (x0 + h).min(b)).unwrap();
                total += 0.5 * h * (f0 + f1);
            }
        }
        total * p.initial_trap_occupancy
    };
    for k in 0..6 {
        assert_relative_eq!(on_mesh.trapped[k], quad(k), max_relative = 1e-3);
    }
    let oxygen = 4.94e28 * p.oxide_thickness;
    assert_relative_eq!(on_mesh.oxygen, oxygen, max_relative = 1e-2);
}

#[test]
fn natural_oxide_run_conserves_and_contains_oxygen() {
    let p = SlabParams::calibrated(1e-9);
    let r = run(&p, &default_controller());
    assert!(r.deuterium_balance_error() < 5e-3, "D balance {}", r.deuterium_balance_error());
    assert!(r.oxygen_balance_error() < 5e-3, "O balance {}", r.oxygen_balance_error());
    for rec in &r.records {
        assert_eq!(rec.fluxes.oxygen, 0.5 * rec.fluxes.d2o_atoms);
        assert!(rec.stray_oxygen < 1e-6);
        assert!(rec.max_trap_fill <= 1.0 + 1e-9);
    }
    let (d2, d2o) = r.cumulative_release();
    assert!(d2 > 10.0 * d2o, "D2 {d2:e} vs D2O {d2o:e}");
    assert!(r.final_inventory().oxygen < 0.01 * r.initial_inventory().oxygen);
}

#[test]
fn tight_tolerances_conserve_to_a_tenth_percent() {
    let p = SlabParams::calibrated(15e-9);
    let r = run(&p, &tight());
    assert!(r.deuterium_balance_error() < 1e-3, "D balance {}", r.deuterium_balance_error());
    assert!(r.oxygen_balance_error() < 1e-3, "O balance {}", r.oxygen_balance_error());
}

#[test]
fn disabled_heavy_water_channel() {
    let p = SlabParams {
        recombination_d2o: ArrheniusRate::disabled(),
        ..SlabParams::calibrated(5e-9)
    };
    let r = run(&p, &default_controller());
    assert!(r.d2o.samples().iter().all(|s| s.rate == 0.0));
    let o0 = r.initial_inventory().oxygen;
    for rec in &r.records {
        assert_relative_eq!(rec.inventory.oxygen, o0, max_relative = 1e-9);
    }
}

#[test]
fn deeper_back_face_keeps_first_peak() {
    let coarse = SlabMeshSpec {
        max_ratio: 1.3,
        max_damage_cell: 50e-9,
        ..SlabMeshSpec::default()
    };
    let base = SlabParams::calibrated(5e-9);
    let deep = SlabParams {
        slab_thickness: 2.0 * base.slab_thickness,
        ..base.clone()
    };
    let a = simulate_slab_tds(&base, &coarse, &default_controller()).unwrap();
    let b = simulate_slab_tds(&deep, &coarse, &default_controller()).unwrap();
    let maxima = |r: &SlabRun| {
        let s = r.d2.samples();
        let top = r.d2.peak().unwrap().rate;
        s.windows(3)
            .filter(|w| w[1].rate > w[0].rate && w[1].rate >= w[2].rate && w[1].rate > 0.05 * top)
            .map(|w| (w[1].temperature, w[1].rate))
            .collect::<Vec<_>>()
    };
    let (ma, mb) = (maxima(&a), maxima(&b));
    assert!((ma[0].0 - mb[0].0).abs() < 5.0, "first peak {} K vs {} K", ma[0].0, mb[0].0);
    assert_relative_eq!(ma[0].1, mb[0].1, max_relative = 0.02);
    assert_relative_eq!(a.d2o.integral(), b.d2o.integral(), max_relative = 0.01);
}
