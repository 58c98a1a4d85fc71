use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use eitnoise::dsp::{rfft_freqs, WelchConfig};
use eitnoise::model::Scheme;
use eitnoise::oracle::{apply_mixing, build_mixing, estimate_spectrum_set, synth_ensemble, NoiseSource};
use eitnoise::par::Exec;

const MEMBERS: usize = 64;
const N: usize = 1 << 14;
const FS: f64 = 1e8;

fn sources() -> [NoiseSource; 2] {
    [NoiseSource::Flat { band_limit: 4e7, level: 1e-10 }, NoiseSource::Laser { linewidth: 5e5 }]
}

fn bench(c: &mut Criterion) {
    let freqs = rfft_freqs(N, FS);
    let x: Vec<f64> = freqs.iter().map(|f| 2.0 / (1.0 + (f / 5e6).powi(2))).collect();
    let mix = build_mixing(freqs, &x, Scheme::Lambda);
    let ens = synth_ensemble(1, 0, MEMBERS, N, FS, &sources(), vec![0.0; 2], Exec::Sequential).unwrap();
    let welch = WelchConfig::new(1 << 10);

    let mut g = c.benchmark_group("ensemble");
    g.sample_size(10);
    for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_with_input(BenchmarkId::new("synth", label), &exec, |b, &e| {
            b.iter(|| synth_ensemble(1, 0, MEMBERS, N, FS, &sources(), vec![0.0; 2], e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("mix", label), &exec, |b, &e| b.iter(|| apply_mixing(&ens, &mix, e).unwrap()));
        g.bench_with_input(BenchmarkId::new("estimate", label), &exec, |b, &e| {
            b.iter(|| estimate_spectrum_set(&ens, &welch, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
