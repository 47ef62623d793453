// Sequential vs parallel execution of the main kernels. On a single core the
// two should be within noise of each other; the gap opens with more threads.

use cmra::correction::{correction_table, expected_s_table, monte_carlo_expected_s, CorrectionMode};
use cmra::moments::{empirical_third_moment, sample_observations, Normalization, SignalSet, ZeroSumTensor3};
use cmra::ring::{precompute_G, ring_contract, VertexWeightTable};
use cmra::spectral::{list_recovery, RecoveryConfig};
use cmra::tensor::ComplexTensor;
use cmra::trace::{build_expanded, count_labelings, EnumOptions};
use cmra::{rng, Exec, C64};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random_u(p: usize) -> ComplexTensor {
    let mut r = rng::stream(0, "bench", 0);
    let v = rng::gaussian_vec(&mut r, 2 * p.pow(5), 1.0);
    ComplexTensor::from_vec(&[p; 5], v.chunks(2).map(|z| C64::new(z[0], z[1])).collect()).unwrap()
}

fn ring(c: &mut Criterion) {
    let mut g = c.benchmark_group("ring_contract");
    g.sample_size(10);
    for p in [6usize, 8] {
        let sig = SignalSet::random_gaussian(p, 1, 1).unwrap();
        let wt = VertexWeightTable::new(&ZeroSumTensor3::from_signals(&sig, Normalization::SumOverK));
        let s = correction_table(p, CorrectionMode::Exact, Exec::Parallel).unwrap();
        let u = random_u(p);
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, p), &p, |b, _| b.iter(|| ring_contract(&wt, black_box(&u), &s, exec).unwrap()));
        }
        let gt = precompute_G(&wt, &s, 1 << 31, Exec::Parallel).unwrap();
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(format!("cached-{name}"), p), &p, |b, _| b.iter(|| gt.apply(black_box(&u), exec).unwrap()));
        }
    }
    g.finish();
}

fn correction(c: &mut Criterion) {
    let mut g = c.benchmark_group("correction");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::new(format!("exact-{name}"), 10), |b| b.iter(|| expected_s_table(10, exec).unwrap()));
        g.bench_function(BenchmarkId::new(format!("monte-carlo-{name}"), 8), |b| {
            b.iter(|| monte_carlo_expected_s(8, 512, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn recovery(c: &mut Criterion) {
    let mut g = c.benchmark_group("list_recovery");
    g.sample_size(10);
    let p = 8;
    let sig = SignalSet::random_gaussian(p, 1, 2).unwrap();
    let t = ZeroSumTensor3::from_signals(&sig, Normalization::SumOverK);
    let s = correction_table(p, CorrectionMode::Exact, Exec::Parallel).unwrap();
    let cfg = RecoveryConfig { trials: 32, seed: 3, ..Default::default() };
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| b.iter(|| list_recovery(&t, &s, &cfg, Some(&sig), exec).unwrap()));
    }
    g.finish();
}

fn moments_and_trace(c: &mut Criterion) {
    let mut g = c.benchmark_group("moments");
    g.sample_size(10);
    let sig = SignalSet::random_gaussian(8, 2, 4).unwrap();
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::new(name, "sample+moment 1e4"), |b| {
            b.iter(|| {
                let batch = sample_observations(&sig, 0.5, 10_000, 5, exec).unwrap();
                empirical_third_moment(&batch, exec).unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("trace_enumeration");
    g.sample_size(10);
    let net = build_expanded(1).unwrap();
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::new(name, "p6 q1"), |b| b.iter(|| count_labelings(&net, 6, &EnumOptions::default(), exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, ring, correction, recovery, moments_and_trace);
criterion_main!(benches);
