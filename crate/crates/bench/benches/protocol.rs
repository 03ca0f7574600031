use std::hint::black_box;
use std::path::PathBuf;

use commcheck::credibility::majority_vote;
use commcheck::{AppId, DigestWidth, FingerprintReply, MacKey, MacScheme, NodeId, Scenario};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fingerprint(c: &mut Criterion) {
    let mut g = c.benchmark_group("fingerprint");
    for size in [1 << 10, 1 << 16, 1 << 20] {
        let payload = vec![0x5au8; size];
        g.throughput(Throughput::Bytes(size as u64));
        g.bench_with_input(BenchmarkId::new("sha3-224", size), &payload, |b, p| {
            b.iter(|| DigestWidth::Bits224.fingerprint(black_box(p)))
        });
    }
    g.finish();
}

fn mac(c: &mut Criterion) {
    let scheme = MacScheme::default();
    let key = MacKey::generate(&mut ChaCha8Rng::seed_from_u64(1), 128).unwrap();
    let msg = DigestWidth::Bits224.fingerprint(b"app").as_bytes().to_vec();
    let tag = scheme.mac(&key, &msg).unwrap();
    c.bench_function("mac/tag", |b| b.iter(|| scheme.mac(&key, black_box(&msg)).unwrap()));
    c.bench_function("mac/verify", |b| b.iter(|| scheme.verify(&key, black_box(&msg), &tag).unwrap()));
}

fn vote(c: &mut Criterion) {
    let app = AppId::new("fw", "1");
    let clean = DigestWidth::Bits224.fingerprint(b"clean");
    let bad = DigestWidth::Bits224.fingerprint(b"bad");
    let mut g = c.benchmark_group("majority_vote");
    for n in [5u32, 10, 50] {
        let replies: Vec<FingerprintReply> = (0..n)
            .map(|i| FingerprintReply {
                responder: NodeId(i),
                app_id: app.clone(),
                digest: if i % 3 == 0 { bad.clone() } else { clean.clone() },
                key_length_bits: 128,
            })
            .collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &replies, |b, r| b.iter(|| majority_vote(black_box(r)).unwrap()));
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", "community.toml"].iter().collect();
    let mut s = Scenario::load(path).unwrap();
    s.forgery = None;
    s.epochs = 10;
    let mut g = c.benchmark_group("simulation");
    g.sample_size(10);
    g.bench_function("community-10-epochs", |b| b.iter(|| commcheck::run(black_box(&s)).unwrap()));
    g.finish();
}

criterion_group!(benches, fingerprint, mac, vote, simulation);
criterion_main!(benches);
