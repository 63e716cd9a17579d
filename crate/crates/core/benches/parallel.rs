//! Sequential against data-parallel execution for the batch kernels.
//! Both modes produce identical output; only the wall time differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use proca_lattice::compare::{exact_tv_u1, residual_scan, TvOptions};
use proca_lattice::exec::Exec;
use proca_lattice::lattice::{Lattice, LatticeSpec};
use proca_lattice::lie::GroupSpec;
use proca_lattice::proca::{assemble_precision, FreeSampler};
use proca_lattice::ymh::{YmhModel, YmhParams};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn free_draws(c: &mut Criterion) {
    let lat = Lattice::new(LatticeSpec::torus(2, 8)).unwrap();
    let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
    let sampler = FreeSampler::new(&op).unwrap();
    let mut g = c.benchmark_group("free_sampler_2000_draws");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| sampler.scalar_many(exec, 2_000, 7)));
    }
    g.finish();
}

fn exact_tv(c: &mut Criterion) {
    let params = YmhParams::boxed(GroupSpec::u1(), LatticeSpec::block(2, 1), 1e3, 1.0, 0.1).unwrap();
    let model = YmhModel::new(params).unwrap();
    let mut g = c.benchmark_group("exact_tv_u1_24_points");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = TvOptions { points: 24, quadratic_only: false, exec };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| exact_tv_u1(&model, &opts).unwrap()));
    }
    g.finish();
}

fn residuals(c: &mut Criterion) {
    let group = GroupSpec::special_unitary(2).unwrap();
    let params = YmhParams::torus(group, 2, 3, 1e3, 1.0, 0.1);
    let mut g = c.benchmark_group("residual_scan_200_hits");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| residual_scan(&params, &[1e3], 200, 3, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, free_draws, exact_tv, residuals);
criterion_main!(benches);
