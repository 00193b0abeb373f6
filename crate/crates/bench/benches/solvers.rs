use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tdsim_core::calibration::{expected_improvement, gp_fit, latin_hypercube, GpModel};
use tdsim_core::grain::{default_controller, simulate_grain_tds, GrainMeshSpec, GrainParams};
use tdsim_core::numerics::{BlockTridiagonal, TridiagonalSystem};
use tdsim_core::provenance::{check_commit, parse_trailers, CommitMeta, GovernancePolicy};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn diffusion_block(cells: usize, block: usize) -> BlockTridiagonal {
    let mut m = BlockTridiagonal::zeros(cells, block);
    for i in 0..cells {
        for r in 0..block {
            m.add_diag(i, r, r, 4.0 + r as f64);
            if r + 1 < block {
                m.add_diag(i, r, r + 1, -0.5);
                m.add_diag(i, r + 1, r, -0.5);
            }
            if i > 0 {
                m.add_lower(i, r, r, -1.0);
            }
            if i + 1 < cells {
                m.add_upper(i, r, r, -1.0);
            }
        }
    }
    m
}

fn linear_solvers(c: &mut Criterion) {
    let mut g = c.benchmark_group("linear");
    for n in [200usize, 900] {
        let mut t = TridiagonalSystem::zeros(n);
        for i in 0..n {
            t.sub[i] = -1.0;
            t.diag[i] = 2.5;
            t.sup[i] = -1.0;
            t.rhs[i] = i as f64;
        }
        g.bench_with_input(BenchmarkId::new("thomas", n), &t, |b, t| b.iter(|| t.solve().unwrap()));
        for block in [2usize, 8] {
            let m = diffusion_block(n, block);
            let rhs = vec![1.0; n * block];
            g.bench_with_input(BenchmarkId::new(format!("block{block}"), n), &m, |b, m| {
                b.iter(|| m.solve(black_box(&rhs)).unwrap())
            });
        }
    }
    g.finish();
}

fn grain_run(c: &mut Criterion) {
    let params = GrainParams::sample_e_reference();
    let mut g = c.benchmark_group("grain");
    g.sample_size(10);
    for cells in [50usize, 200] {
        let mesh = GrainMeshSpec { cells, ..GrainMeshSpec::default() };
        g.bench_with_input(BenchmarkId::new("reference_ramp", cells), &mesh, |b, mesh| {
            b.iter(|| simulate_grain_tds(&params, mesh, &default_controller()).unwrap())
        });
    }
    g.finish();
}

fn surrogate(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("gp");
    for n in [32usize, 232] {
        let x = latin_hypercube(n, 8, &mut rng);
        let y: Vec<f64> = x.iter().map(|p| p.iter().map(|v| (v - 0.4).powi(2)).sum()).collect();
        g.bench_with_input(BenchmarkId::new("fit_fixed", n), &n, |b, _| {
            b.iter(|| GpModel::fit_with(&x, &y, &[0.5; 8]).unwrap())
        });
        let model = gp_fit(&x, &y).unwrap();
        let q = vec![0.3; 8];
        g.bench_with_input(BenchmarkId::new("predict_ei", n), &n, |b, _| {
            b.iter(|| {
                let p = model.predict(black_box(&q));
                expected_improvement(p.mean, p.stddev(), 0.1)
            })
        });
    }
    g.sample_size(10);
    let x = latin_hypercube(64, 8, &mut rng);
    let y: Vec<f64> = x.iter().map(|p| p.iter().map(|v| (v - 0.4).powi(2)).sum()).collect();
    g.bench_function("fit_hyperparameters_64", |b| b.iter(|| gp_fit(&x, &y).unwrap()));
    g.finish();
}

fn provenance(c: &mut Criterion) {
    let msg = "Add solver\n\nBody.\n\nAI-Assisted: yes\nAI-Tool: agent\nAI-Model: m\nIssue: #1\nSession-Log: logs/a.jsonl";
    let policy = GovernancePolicy::default();
    let meta = CommitMeta::new("abc", msg, vec![]).unwrap();
    c.bench_function("provenance/parse_trailers", |b| b.iter(|| parse_trailers(black_box(msg))));
    c.bench_function("provenance/check_commit", |b| b.iter(|| check_commit(black_box(&meta), &policy)));
}

criterion_group!(benches, linear_solvers, grain_run, surrogate, provenance);
criterion_main!(benches);
