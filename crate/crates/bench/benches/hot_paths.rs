use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use conforge_core::denoiser::{DenoiserConfig, DenoiserModel};
use conforge_core::geom::kabsch_align;
use conforge_core::molgraph::{build_neighbor_list, Bond, BondType, MolecularGraph};
use conforge_core::rng::standard_normal_coords;
use conforge_core::sampler::{noise_like, reverse_step, sample_prior};
use conforge_core::schedule::SchedulePreset;

fn chain(n: usize) -> MolecularGraph {
    let bonds = (0..n - 1)
        .map(|i| Bond { i, j: i + 1, bond_type: BondType::Single })
        .collect();
    MolecularGraph::new(vec![0; n], bonds).unwrap()
}

fn bench_kabsch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = standard_normal_coords(32, &mut rng);
    let b = standard_normal_coords(32, &mut rng);
    c.bench_function("kabsch_align_32_atoms", |bench| {
        bench.iter(|| kabsch_align(std::hint::black_box(&a), std::hint::black_box(&b)).unwrap())
    });
}

fn bench_neighbor_list(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = chain(64);
    let conf = standard_normal_coords(64, &mut rng);
    c.bench_function("neighbor_list_64_atoms", |bench| {
        bench.iter(|| build_neighbor_list(&g, std::hint::black_box(&conf), 2.0).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = DenoiserModel::init(DenoiserConfig::desk(32, 2, 3, 20.0), 0).unwrap();
    let g = chain(8);
    let conf = standard_normal_coords(8, &mut rng);
    c.bench_function("denoiser_forward_8_atoms", |bench| {
        bench.iter(|| model.eps_theta(&g, std::hint::black_box(&conf), 50).unwrap())
    });
}

fn bench_reverse_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = DenoiserModel::init(DenoiserConfig::desk(32, 2, 3, 20.0), 0).unwrap();
    let g = chain(8);
    let s = SchedulePreset::Desk.build();
    let ct = sample_prior(8, &mut rng);
    let z = noise_like(8, &mut rng);
    c.bench_function("reverse_step_8_atoms", |bench| {
        bench.iter(|| {
            reverse_step(&model, &s, &g, std::hint::black_box(&ct), 50, &z, false).unwrap()
        })
    });
}

criterion_group!(benches, bench_kabsch, bench_neighbor_list, bench_forward, bench_reverse_step);
criterion_main!(benches);
