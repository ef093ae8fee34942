//! Sequential vs rayon-parallel execution of the data-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bandmf::optimizer::{banded_loss_and_grad, decoder_frobenius_sq};
use bandmf::sensitivity::sens_minsep_general;
use bandmf::workload::prefix_workload;
use bandmf::{BandedLowerTriangular, Execution, GramMatrix};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

/// Well-conditioned banded encoder with deterministic entries.
fn encoder(n: usize, bands: usize) -> BandedLowerTriangular {
    let mut c = BandedLowerTriangular::zeros(n, bands).unwrap();
    for i in 0..n {
        for j in c.row_start(i)..=i {
            let v = if i == j { 1.0 } else { 0.3 / (1 + i - j) as f64 };
            c.set(i, j, v);
        }
    }
    c
}

fn loss_and_grad(cr: &mut Criterion) {
    let mut g = cr.benchmark_group("loss_and_grad");
    g.sample_size(10);
    for &(n, bands) in &[(256usize, 32usize), (512, 64)] {
        let w = prefix_workload(n).unwrap();
        let x = encoder(n, bands).gram();
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, format!("n{n}_b{bands}")), &x, |b, x| {
                b.iter(|| banded_loss_and_grad(&w, x, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn decoder_norm(cr: &mut Criterion) {
    let mut g = cr.benchmark_group("decoder_frobenius_sq");
    g.sample_size(10);
    let n = 512;
    let w = prefix_workload(n).unwrap();
    let c = encoder(n, 32);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| decoder_frobenius_sq(&w, &c, exec).unwrap()));
    }
    g.finish();
}

fn general_sensitivity(cr: &mut Criterion) {
    let mut g = cr.benchmark_group("sens_minsep_general");
    let n = 1024;
    let x: GramMatrix = encoder(n, n / 4).gram();
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| sens_minsep_general(&x, 16, n / 16, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, loss_and_grad, decoder_norm, general_sensitivity);
criterion_main!(benches);
