use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use wosync_core::codec::{decode_pair, encode_pair, Block, Cipher, FullBlock, Geometry, SplitBlock, SplitFragment, KEY_LEN};

fn seal_open(c: &mut Criterion) {
    let cipher = Cipher::seeded(&[1u8; KEY_LEN], 1);
    let mut g = c.benchmark_group("cipher");
    for b in [4096usize, 65536] {
        let plain = vec![7u8; b];
        let sealed = cipher.seal(&plain);
        g.throughput(Throughput::Bytes(b as u64));
        g.bench_with_input(BenchmarkId::new("seal", b), &plain, |bench, p| bench.iter(|| cipher.seal(p)));
        g.bench_with_input(BenchmarkId::new("open", b), &sealed, |bench, s| bench.iter(|| cipher.open(s).unwrap()));
    }
    g.finish();
}

fn pair_codec(c: &mut Criterion) {
    let geo = Geometry::new(65536).unwrap();
    let full = Block::Full(FullBlock { file_id: 3, fragment_index: 0, payload: vec![1u8; geo.data_capacity()] });
    let split = Block::Split(SplitBlock {
        fragments: (0..20).map(|i| SplitFragment { file_id: 100 + i, data: vec![i as u8; 1000] }).collect(),
    });
    let encoded = encode_pair(&geo, &full, &split).unwrap();
    let mut g = c.benchmark_group("pair");
    g.throughput(Throughput::Bytes(encoded.len() as u64));
    g.bench_function("encode", |b| {
        b.iter_batched(|| (full.clone(), split.clone()), |(l, r)| encode_pair(&geo, &l, &r).unwrap(), BatchSize::SmallInput)
    });
    g.bench_function("decode", |b| b.iter(|| decode_pair(&geo, &encoded).unwrap()));
    g.finish();
}

criterion_group!(benches, seal_open, pair_codec);
criterion_main!(benches);
