use blockloc_core::chain::{mine_block, LocationClaim};
use blockloc_core::geo::{trilaterate, Position};
use blockloc_core::identity::KeyPair;
use blockloc_core::netsim::{run_localization, Mode, SimConfig};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mining(c: &mut Criterion) {
    let key = KeyPair::from_seed([7; 32]);
    let claim = LocationClaim::new_signed(&key, Position::new(12.5, 40.25), []).unwrap();
    let mut g = c.benchmark_group("mine_block");
    for difficulty in [8u32, 12] {
        g.bench_function(format!("difficulty_{difficulty}"), |b| {
            b.iter_batched(|| claim.clone(), |cl| mine_block(cl, None, difficulty).unwrap(), BatchSize::SmallInput)
        });
    }
    g.finish();
}

fn trilateration(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target = Position::new(47.0, 52.0);
    let refs: Vec<(Position, f64)> = (0..8)
        .map(|_| {
            let p = Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            (p, p.distance_to(&target) * rng.random_range(0.9..1.1))
        })
        .collect();
    c.bench_function("trilaterate_8_refs", |b| b.iter(|| trilaterate(black_box(&refs)).unwrap()));
}

fn single_run(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_localization");
    g.sample_size(10);
    for mode in [Mode::Insecure, Mode::Secure] {
        let cfg = SimConfig { malicious_rate: 0.3, seed: 5, mode, ..SimConfig::default() };
        g.bench_function(mode.as_str(), |b| b.iter(|| run_localization(black_box(&cfg)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, mining, trilateration, single_run);
criterion_main!(benches);
