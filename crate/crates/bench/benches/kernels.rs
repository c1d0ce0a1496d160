use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use so3fm::fisher::{log_norm_const, QuadratureConfig};
use so3fm::losses::{total_loss, UnsupervisedLoss};
use so3fm::so3::{proper_svd, sample_uniform_rotation};
use so3fm::FisherParams;

fn random_a(rng: &mut ChaCha8Rng, max: f64) -> Matrix3<f64> {
    let s = Vector3::from_fn(|_, _| rng.random_range(-max..max));
    sample_uniform_rotation(rng).matrix() * Matrix3::from_diagonal(&s) * sample_uniform_rotation(rng).matrix().transpose()
}

fn quadrature(c: &mut Criterion) {
    let s = Vector3::new(20.0, 5.0, -1.0);
    for n in [127, 511, 8191] {
        let cfg = QuadratureConfig::new(n).unwrap();
        c.bench_function(&format!("log_norm_const/{n}"), |b| b.iter(|| log_norm_const(std::hint::black_box(&s), &cfg)));
    }
    let a = random_a(&mut ChaCha8Rng::seed_from_u64(0), 10.0);
    c.bench_function("fisher_params/511", |b| b.iter(|| FisherParams::new(std::hint::black_box(a))));
}

fn svd(c: &mut Criterion) {
    let a = random_a(&mut ChaCha8Rng::seed_from_u64(1), 10.0);
    c.bench_function("proper_svd", |b| b.iter(|| proper_svd(std::hint::black_box(&a))));
}

fn batch_loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let quad = QuadratureConfig::new(127).unwrap();
    let fisher = |rng: &mut ChaCha8Rng| FisherParams::with_config(random_a(rng, 10.0), quad).unwrap();
    let labeled: Vec<_> = (0..32).map(|_| (fisher(&mut rng), sample_uniform_rotation(&mut rng))).collect();
    let unlabeled: Vec<_> = (0..128).map(|_| (fisher(&mut rng), fisher(&mut rng))).collect();
    c.bench_function("total_loss/32+128", |b| {
        b.iter(|| total_loss(&labeled, &unlabeled, -3.0, 1.0, UnsupervisedLoss::Ce))
    });
}

criterion_group!(benches, quadrature, svd, batch_loss);
criterion_main!(benches);
