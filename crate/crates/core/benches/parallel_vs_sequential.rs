use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use obsgain::cost::{CostSpec, ZetaPolicy};
use obsgain::gramian::empirical_gramian;
use obsgain::model::Policy;
use obsgain::ode::IntegratorConfig;
use obsgain::optimizer::evaluate_gains;
use obsgain::par::Execution;
use obsgain::selftest::{bearing_spec, BEARING_X0};
use obsgain::sensitivity::{fd_gradient, AugmentedState, Segment};
use obsgain::systems::{HolonomicBearing, LinearSystem};
use obsgain::GainMatrix;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

// Lightly damped chain of coupled oscillators observed at one end.
fn chain(n: usize) -> LinearSystem {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -0.1;
        if i + 1 < n {
            a[(i, i + 1)] = 1.0;
            a[(i + 1, i)] = -1.0;
        }
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    let mut c = DMatrix::zeros(1, n);
    c[(0, 0)] = 1.0;
    LinearSystem::new(a, b, c).expect("valid chain")
}

fn bench_gramian(c: &mut Criterion) {
    let n = 16;
    let sys = chain(n);
    let policy = Policy::Gain(GainMatrix::constant(DMatrix::zeros(1, n)).unwrap());
    let x0 = vec![0.1; n];
    let cfg = IntegratorConfig::new(1e-3).unwrap();
    let mut group = c.benchmark_group("empirical_gramian");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, n), &exec, |bch, &exec| {
            bch.iter(|| empirical_gramian(&sys, &policy, &x0, 0.01, 5.0, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_fd_gradient(c: &mut Criterion) {
    let sys = HolonomicBearing;
    let spec: CostSpec = bearing_spec(ZetaPolicy::Fixed(50.0));
    let cfg = IntegratorConfig::new(1e-2).unwrap();
    let seg = Segment::new(&sys, &spec, 50.0, 0.0, 1.0, cfg).unwrap();
    let k = GainMatrix::constant(-DMatrix::identity(2, 2)).unwrap();
    let z0 = AugmentedState::initial(&BEARING_X0, &spec).unwrap();
    let mut group = c.benchmark_group("fd_gradient");
    for (name, exec) in MODES {
        group.bench_function(name, |bch| bch.iter(|| fd_gradient(&seg, &k, &z0, 1e-5, exec).unwrap()));
    }
    group.finish();
}

fn bench_gain_sweep(c: &mut Criterion) {
    let sys = HolonomicBearing;
    let spec = bearing_spec(ZetaPolicy::Fixed(50.0));
    let cfg = IntegratorConfig::new(1e-2).unwrap();
    let seg = Segment::new(&sys, &spec, 50.0, 0.0, 1.0, cfg).unwrap();
    let z0 = AugmentedState::initial(&BEARING_X0, &spec).unwrap();
    let gains: Vec<GainMatrix> = (0..32)
        .map(|i| {
            let s = -0.2 - 0.05 * i as f64;
            GainMatrix::constant(DMatrix::identity(2, 2) * s).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("gain_sweep");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, gains.len()), &exec, |bch, &exec| {
            bch.iter(|| evaluate_gains(&seg, &gains, &z0, exec))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_gramian, bench_fd_gradient, bench_gain_sweep
}
criterion_main!(benches);
