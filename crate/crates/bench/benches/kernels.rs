use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dgin_bench::grid;
use dgin_core::embedding::{Embedder, Schema, Vocab};
use dgin_core::group_module::GroupModule;
use dgin_core::group_module::IntraGroupInput;
use dgin_core::model::compute_auc;
use dgin_core::numerics::kernels::{matmul, matmul_a_bt};
use dgin_core::numerics::{softmax_rows, ParamSet};
use dgin_core::KeyField;
use rand::SeedableRng;

fn bench_matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64usize, 256] {
        let a = grid(n, 128, 1);
        let b = grid(128, 128, 2);
        g.bench_with_input(BenchmarkId::new("a_b", n), &n, |bch, _| {
            bch.iter(|| matmul(black_box(&a), black_box(&b)))
        });
        g.bench_with_input(BenchmarkId::new("a_bt", n), &n, |bch, _| {
            bch.iter(|| matmul_a_bt(black_box(&a), black_box(&b)))
        });
    }
    g.finish();
}

fn bench_softmax(c: &mut Criterion) {
    let x = grid(256, 64, 3);
    c.bench_function("softmax_rows 256x64", |b| b.iter(|| softmax_rows(black_box(&x), None)));
}

fn bench_member_attention(c: &mut Criterion) {
    let vocab = Vocab {
        users: 10,
        items: 100,
        categories: 10,
        location_cells: 10,
        surfaces: 2,
    };
    let mut params = ParamSet::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let embedder = Embedder::register(Schema::new(8, KeyField::ItemId, vocab).unwrap(), &mut params, &mut rng).unwrap();
    let gm = GroupModule::register(&embedder, 2, true, true, &mut params, &mut rng).unwrap();
    let input = IntraGroupInput {
        e_b: grid(16, 24, 4),
        member_mask: vec![true; 16],
    };
    c.bench_function("group mhsa 16 members", |b| {
        b.iter(|| gm.mhsa(&params, black_box(&input)))
    });
}

fn bench_auc(c: &mut Criterion) {
    let scores: Vec<f64> = grid(1, 10_000, 5).into_values();
    let labels: Vec<f64> = grid(1, 10_000, 6)
        .values()
        .iter()
        .map(|v| (*v > 0.3) as u8 as f64)
        .collect();
    c.bench_function("compute_auc 10k", |b| {
        b.iter(|| compute_auc(black_box(&scores), black_box(&labels)))
    });
}

criterion_group!(benches, bench_matmul, bench_softmax, bench_member_attention, bench_auc);
criterion_main!(benches);
