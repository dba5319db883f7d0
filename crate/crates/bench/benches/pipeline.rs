use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use nwtopk::experiment::{build_switches, fill_local_table};
use nwtopk::flowtable::{FieldOrder, MultiVectorTable, Probe, TableConfig};
use nwtopk::precision::LocalTopK;
use nwtopk::protocol::consolidate_into;
use nwtopk::transport::{Network, NetworkConfig};
use nwtopk::workload::gen_zipf;

fn precision_ingest(c: &mut Criterion) {
    let trace = gen_zipf(1.0, 200_000, 20_000, 1).unwrap();
    let mut group = c.benchmark_group("precision");
    group.throughput(Throughput::Elements(trace.len() as u64));
    group.bench_function("ingest_zipf1_s4096", |b| {
        b.iter_batched(
            || LocalTopK::new(TableConfig::new(2, 4096, 1).unwrap(), 2),
            |mut local| {
                for &id in &trace.packets {
                    local.process_packet(id);
                }
                local
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn consolidation(c: &mut Criterion) {
    let mut sws = build_switches(4, 2, 4096, 3).unwrap();
    for (i, sw) in sws.iter_mut().enumerate() {
        fill_local_table(sw, 1, i as u64);
    }
    let entries: Vec<_> = sws
        .iter()
        .flat_map(|sw| sw.local().table().entries())
        .collect();
    let config = sws[0].config().clone();
    let mut group = c.benchmark_group("consolidation");
    group.throughput(Throughput::Elements(entries.len() as u64));
    group.bench_function("four_full_tables", |b| {
        b.iter_batched(
            || MultiVectorTable::new(config.clone(), FieldOrder::CountFirst),
            |mut table| {
                for &e in &entries {
                    consolidate_into(&mut table, e, &mut Probe::off());
                }
                table
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn cycle(c: &mut Criterion) {
    let mut sws = build_switches(10, 2, 1024, 4).unwrap();
    for (i, sw) in sws.iter_mut().enumerate() {
        fill_local_table(sw, 1, 100 + i as u64);
    }
    let mut group = c.benchmark_group("cycle");
    group.sample_size(20);
    group.bench_function("n10_s1024_lossless", |b| {
        b.iter_batched(
            || Network::new(NetworkConfig::default(), sws.clone()).unwrap(),
            |mut network| network.run_cycle().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("n10_s1024_drop0.2", |b| {
        let lossy = NetworkConfig {
            drop_probability: 0.2,
            ..NetworkConfig::default()
        };
        b.iter_batched(
            || Network::new(lossy.clone(), sws.clone()).unwrap(),
            |mut network| network.run_cycle().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, precision_ingest, consolidation, cycle);
criterion_main!(benches);
