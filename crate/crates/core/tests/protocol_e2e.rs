mod common;

use std::collections::HashMap;

use nwtopk::cluster::{partition, run_clustered};
use nwtopk::experiment::{
    build_switches, run_experiment, ExperimentConfig, Interleave, TraceSource,
};
use nwtopk::flowtable::FlowId;
use nwtopk::invariants;
use nwtopk::transport::{DeliveryOrder, Network, NetworkConfig};
use nwtopk::workload::{exact_counts, gen_zipf, split_stream, write_trace, SplitPlan};

use common::TwoSwitchExample;

fn lossless(seed: u64) -> NetworkConfig {
    NetworkConfig {
        seed,
        ..NetworkConfig::default()
    }
}

#[test]
fn two_switch_example_query_values() {
    let ex = TwoSwitchExample::new();
    let mut network = Network::new(lossless(1), ex.switches()).unwrap();
    let stats = network.run_cycle().unwrap();
    // three snapshot entries each way, then three sum entries each way
    assert_eq!(stats.messages(false), 12);
    invariants::check_cycle(network.switches()).unwrap();
    for sw in network.switches() {
        assert_eq!(sw.query_flow(ex.f1), Some(2300));
        assert_eq!(sw.query_flow(ex.f2), Some(500));
        assert_eq!(sw.query_flow(ex.f3), Some(100));
        assert_eq!(sw.query_flow(ex.f4), Some(600));
        assert_eq!(sw.query_flow(ex.f5), Some(150));
        assert_eq!(sw.query_flow(FlowId(0xdead_beef)), None);
    }
}

#[test]
fn query_counts_are_exact_without_contention() {
    let trace = gen_zipf(1.0, 30_000, 60, 5).unwrap();
    let plan = SplitPlan {
        k: 10,
        switches: 4,
        affinity: 0.5,
        seed: 5,
    };
    let parts = split_stream(&trace, &plan).unwrap();
    let mut network = Network::new(lossless(2), build_switches(4, 2, 1024, 9).unwrap()).unwrap();
    for (sw, part) in network.switches_mut().iter_mut().zip(&parts) {
        part.iter().for_each(|&id| sw.ingest(id));
    }
    network.run_cycle().unwrap();
    let truth: HashMap<FlowId, u64> = exact_counts(&trace.packets);
    for sw in network.switches() {
        for (&id, &count) in &truth {
            assert_eq!(sw.query_flow(id), Some(count), "flow {id}");
        }
    }
}

#[test]
fn randomized_networks_keep_every_invariant() {
    for seed in 0..30u64 {
        let n = 2 + (seed as usize % 7);
        let trace = gen_zipf(0.9, 8_000, 3_000, seed).unwrap();
        let out = nwtopk::experiment::randomized_trial(&trace, n, 2, 64, 0.25, 3, seed).unwrap();
        assert_eq!(out.switches.len(), n);
        assert!(out.audited > 0);
    }
}

#[test]
fn single_cluster_matches_flat() {
    for seed in 0..5u64 {
        let trace = gen_zipf(0.8, 40_000, 8_000, seed).unwrap();
        let plan = SplitPlan {
            k: 64,
            switches: 6,
            affinity: 1.0,
            seed,
        };
        let parts = split_stream(&trace, &plan).unwrap();
        let mut sws = build_switches(6, 2, 256, seed).unwrap();
        for (sw, part) in sws.iter_mut().zip(&parts) {
            part.iter().for_each(|&id| sw.ingest(id));
        }
        let mut flat = Network::new(lossless(seed), sws.clone()).unwrap();
        let flat_stats = flat.run_cycle().unwrap();
        let (clustered, stats) =
            run_clustered(sws, &partition(6, 1, seed).unwrap(), &lossless(seed)).unwrap();
        assert!(stats.inter.is_none() && stats.dissemination.is_empty());
        assert_eq!(stats.messages(false), flat_stats.messages(false));
        for (a, b) in flat.switches().iter().zip(&clustered) {
            assert_eq!(a.query(), b.query());
        }
    }
}

#[test]
fn clustered_recall_trails_flat_on_average() {
    let base = ExperimentConfig {
        switches: 20,
        slots: 256,
        k: 128,
        source: TraceSource::Zipf {
            exponent: 0.8,
            packets: 200_000,
            flows: 40_000,
        },
        seeds: (1..=10).collect(),
        ..ExperimentConfig::default()
    };
    let flat = run_experiment(&base).unwrap();
    let clustered = run_experiment(&ExperimentConfig {
        clusters: 4,
        ..base
    })
    .unwrap();
    println!(
        "flat {:.4} clustered {:.4}",
        flat.mean_recall(),
        clustered.mean_recall()
    );
    assert!(clustered.mean_recall() <= flat.mean_recall());
    assert!(clustered.mean_messages() < flat.mean_messages());
}

fn csv_of(cfg: &ExperimentConfig) -> String {
    let mut out = Vec::new();
    run_experiment(cfg).unwrap().write_csv(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn reports_are_deterministic() {
    let cfg = ExperimentConfig {
        switches: 4,
        clusters: 2,
        slots: 128,
        k: 32,
        source: TraceSource::Zipf {
            exponent: 1.0,
            packets: 30_000,
            flows: 5_000,
        },
        drop_probability: 0.2,
        seeds: vec![7, 8, 9],
        cycles: 2,
        delivery_order: DeliveryOrder::Random,
        interleave: Interleave::Random,
        ..ExperimentConfig::default()
    };
    let first = csv_of(&cfg);
    assert_eq!(
        first,
        csv_of(&ExperimentConfig {
            parallel: false,
            ..cfg
        })
    );
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(
        lines[0],
        "seed,n,clusters,d,s,k,zipf,packets,flows,affinity,drop,recall,messages,memory_bytes,recirculations"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("AVG,4,2,2,128,32,1,30000,5000,"));
}

#[test]
fn trace_file_source_matches_generated() {
    let trace = gen_zipf(1.0, 20_000, 2_000, 11).unwrap();
    let dir = std::env::temp_dir().join(format!("nwtopk-e2e-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("t.ntrc");
    write_trace(&trace, &path).unwrap();
    let cfg = ExperimentConfig {
        switches: 3,
        slots: 128,
        k: 16,
        source: TraceSource::File(path.clone()),
        seeds: vec![1, 2],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert!(report
        .rows
        .iter()
        .all(|r| r.packets == 20_000 && r.recall > 0.5));

    let missing = ExperimentConfig {
        source: TraceSource::File(path),
        ..cfg
    };
    let err = run_experiment(&missing).unwrap_err().to_string();
    assert!(err.contains("t.ntrc"), "{err}");
}

#[test]
fn single_switch_experiment_reports_local_recall() {
    let cfg = ExperimentConfig {
        switches: 1,
        slots: 1024,
        source: TraceSource::Zipf {
            exponent: 1.0,
            packets: 100_000,
            flows: 10_000,
        },
        seeds: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    for r in &report.rows {
        assert_eq!(r.messages, 0);
        assert!(r.recall >= 0.9, "seed {} recall {}", r.seed, r.recall);
    }
}
