//! Experiment runner: trace, split, local tables, NODE cycles, metrics.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cluster::{partition, run_clustered};
use crate::error::{ConfigError, Error, Result};
use crate::flowtable::{memory_bytes, Count, FlowEntry, FlowId, TableConfig};
use crate::invariants;
use crate::protocol::{SwitchId, SwitchState};
use crate::transport::{DeliveryOrder, Network, NetworkConfig, RoundStats};
use crate::workload::{gen_zipf, read_trace, split_stream, topk_from_counts, SplitPlan, Trace};

#[derive(Clone, Debug, PartialEq)]
pub enum TraceSource {
    Zipf {
        exponent: f64,
        packets: usize,
        flows: u32,
    },
    File(PathBuf),
}

/// Order in which switches take turns ingesting their packets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Interleave {
    #[default]
    RoundRobin,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub switches: usize,
    /// 1 runs flat NODE.
    pub clusters: usize,
    pub vectors: usize,
    pub slots: usize,
    pub k: usize,
    pub source: TraceSource,
    pub affinity: f64,
    pub drop_probability: f64,
    pub seeds: Vec<u64>,
    /// NODE cycles per run; the trace is ingested in this many equal epochs
    /// with one cycle after each.
    pub cycles: usize,
    pub delivery_order: DeliveryOrder,
    pub interleave: Interleave,
    /// Count dropped transmissions in the message metric.
    pub count_dropped: bool,
    /// Run seeds on separate threads.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            switches: 10,
            clusters: 1,
            vectors: 2,
            slots: 1024,
            k: 128,
            source: TraceSource::Zipf {
                exponent: 1.0,
                packets: 1_000_000,
                flows: 100_000,
            },
            affinity: 1.0,
            drop_probability: 0.0,
            seeds: vec![1, 2, 3, 4, 5],
            cycles: 1,
            delivery_order: DeliveryOrder::FifoPerPair,
            interleave: Interleave::RoundRobin,
            count_dropped: false,
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.switches == 0 {
            return Err(ConfigError::NoSwitches);
        }
        let max = SwitchId::MAX as usize + 1;
        if self.switches > max {
            return Err(ConfigError::TooManySwitches {
                got: self.switches,
                max,
            });
        }
        if self.clusters == 0 || self.clusters > self.switches {
            return Err(ConfigError::Clusters {
                clusters: self.clusters,
                switches: self.switches,
            });
        }
        let table = TableConfig::new(self.vectors, self.slots, 0)?;
        if self.k == 0 || self.k > table.cells() {
            return Err(ConfigError::KExceedsCapacity {
                k: self.k,
                cells: table.cells(),
            });
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(ConfigError::DropProbability(self.drop_probability));
        }
        if !(0.0..=1.0).contains(&self.affinity) {
            return Err(ConfigError::Invalid(format!(
                "affinity must lie in [0, 1], got {}",
                self.affinity
            )));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        if self.cycles == 0 {
            return Err(ConfigError::Invalid("cycles must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fraction of the true top-k ids present among `reported`.
///
/// The denominator is `k`, or the number of truth entries when the trace has
/// fewer than `k` flows.
pub fn recall_at_k(reported: &[FlowEntry], truth: &[FlowEntry], k: usize) -> f64 {
    let truth = &truth[..truth.len().min(k)];
    if truth.is_empty() {
        return 1.0;
    }
    let present: std::collections::HashSet<FlowId> = reported.iter().map(|e| e.id).collect();
    let hits = truth.iter().filter(|e| present.contains(&e.id)).count();
    hits as f64 / truth.len() as f64
}

/// Per-switch memory: four full tables (local, snapshot, global, query) of
/// 4-byte ids and 4-byte counters, plus a counter-only sum table that
/// borrows the snapshot's ids.
pub fn node_memory_bytes(vectors: usize, slots: usize) -> usize {
    let shape = TableConfig::with_seeds(slots, vec![0; vectors])
        .unwrap_or_else(|e| panic!("invalid table shape: {e}"));
    4 * memory_bytes(&shape, 4, 4) + memory_bytes(&shape, 0, 4)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub packets: usize,
    pub flows: u32,
    /// Recall after the final cycle.
    pub recall: f64,
    pub recall_per_cycle: Vec<f64>,
    /// Protocol messages of the final cycle.
    pub messages: u64,
    pub memory_bytes: usize,
    /// Recirculations across all switches' local tables.
    pub recirculations: u64,
    pub aggregation: RoundStats,
    pub consolidation: RoundStats,
    pub dropped: u64,
    /// Final query table contents (identical on every switch).
    pub query: Vec<FlowEntry>,
    pub truth: Vec<FlowEntry>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<SeedResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl ExperimentReport {
    pub fn mean_recall(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.recall))
    }

    pub fn mean_messages(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.messages as f64))
    }

    pub fn mean_recirculations(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.recirculations as f64))
    }

    /// One row per seed, then an `AVG` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let cfg = &self.config;
        let mut w = csv::Writer::from_writer(out);
        let zipf = match &cfg.source {
            TraceSource::Zipf { exponent, .. } => format!("{exponent}"),
            TraceSource::File(_) => "trace".to_string(),
        };
        let row = |seed: String,
                   packets: usize,
                   flows: u32,
                   recall: String,
                   messages: String,
                   recirc: String| CsvRow {
            seed,
            n: cfg.switches,
            clusters: cfg.clusters,
            d: cfg.vectors,
            s: cfg.slots,
            k: cfg.k,
            zipf: zipf.clone(),
            packets,
            flows,
            affinity: cfg.affinity,
            drop: cfg.drop_probability,
            recall,
            messages,
            memory_bytes: node_memory_bytes(cfg.vectors, cfg.slots),
            recirculations: recirc,
        };
        for r in &self.rows {
            w.serialize(row(
                r.seed.to_string(),
                r.packets,
                r.flows,
                format!("{:.6}", r.recall),
                r.messages.to_string(),
                r.recirculations.to_string(),
            ))?;
        }
        let first = self.rows.first();
        w.serialize(row(
            "AVG".into(),
            first.map_or(0, |r| r.packets),
            first.map_or(0, |r| r.flows),
            format!("{:.6}", self.mean_recall()),
            format!("{:.1}", self.mean_messages()),
            format!("{:.1}", self.mean_recirculations()),
        ))?;
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct CsvRow {
    seed: String,
    n: usize,
    clusters: usize,
    d: usize,
    s: usize,
    k: usize,
    zipf: String,
    packets: usize,
    flows: u32,
    affinity: f64,
    drop: f64,
    recall: String,
    messages: String,
    memory_bytes: usize,
    recirculations: String,
}

fn derive(seed: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.gen()
}

/// Runs every seed of `config` and checks the protocol invariants after
/// each cycle.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let shared = match &config.source {
        TraceSource::File(path) => Some(read_trace(path)?),
        TraceSource::Zipf { .. } => None,
    };
    let run = |seed: u64| -> Result<SeedResult> {
        match &shared {
            Some(trace) => run_seed(config, seed, trace),
            None => {
                let TraceSource::Zipf {
                    exponent,
                    packets,
                    flows,
                } = config.source
                else {
                    unreachable!()
                };
                let trace = gen_zipf(exponent, packets, flows, derive(seed, 1))?;
                run_seed(config, seed, &trace)
            }
        }
    };
    let rows = if config.parallel && config.seeds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = config
                .seeds
                .iter()
                .map(|&seed| scope.spawn(move || run(seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        config
            .seeds
            .iter()
            .map(|&s| run(s))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(ExperimentReport {
        config: config.clone(),
        rows,
    })
}

/// Builds `n` switches sharing one table configuration.
pub fn build_switches(
    n: usize,
    vectors: usize,
    slots: usize,
    seed: u64,
) -> Result<Vec<SwitchState>, ConfigError> {
    let table = TableConfig::new(vectors, slots, derive(seed, 2))?;
    Ok((0..n)
        .map(|i| SwitchState::new(i as SwitchId, table.clone(), derive(seed, 1000 + i as u64)))
        .collect())
}

/// Fills every slot of `sw`'s local table with distinct random flows, vector
/// 0 first. Ids are drawn above `id_floor` so different switches can be kept
/// disjoint.
pub fn fill_local_table(sw: &mut SwitchState, id_floor: u32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = sw.local_mut().table_mut();
    let cells = table.config().cells();
    let vectors = table.config().vectors();
    for vector in 0..vectors {
        let target = cells * (vector + 1) / vectors;
        while table.occupancy() < target {
            let id = FlowId(rng.gen_range(id_floor.max(1)..=u32::MAX));
            let index = table.hash_index(vector, id);
            if table.get(vector, index).is_empty() && table.lookup(id).is_none() {
                table.insert_at(vector, FlowEntry::new(id, rng.gen_range(1..=1_000_000)));
            }
        }
    }
}

/// The global arrival order: which switch ingests the next packet.
fn arrival_order(parts: &[Vec<FlowId>], interleave: Interleave, seed: u64) -> Vec<u16> {
    let total: usize = parts.iter().map(Vec::len).sum();
    let mut order = Vec::with_capacity(total);
    match interleave {
        Interleave::RoundRobin => {
            let longest = parts.iter().map(Vec::len).max().unwrap_or(0);
            for i in 0..longest {
                for (sw, part) in parts.iter().enumerate() {
                    if i < part.len() {
                        order.push(sw as u16);
                    }
                }
            }
        }
        Interleave::Random => {
            let mut left: Vec<usize> = parts.iter().map(Vec::len).collect();
            let mut live: Vec<usize> = (0..parts.len()).filter(|&s| left[s] > 0).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while !live.is_empty() {
                let pick = rng.gen_range(0..live.len());
                let sw = live[pick];
                order.push(sw as u16);
                left[sw] -= 1;
                if left[sw] == 0 {
                    live.swap_remove(pick);
                }
            }
        }
    }
    order
}

/// One seed of an experiment over an already generated or loaded trace.
pub fn run_seed(config: &ExperimentConfig, seed: u64, trace: &Trace) -> Result<SeedResult> {
    let n = config.switches;
    let plan = SplitPlan {
        k: config.k.min(trace.num_flows as usize),
        switches: n,
        affinity: config.affinity,
        seed: derive(seed, 3),
    };
    let parts = split_stream(trace, &plan)?;
    let order = arrival_order(&parts, config.interleave, derive(seed, 4));
    let mut switches = build_switches(n, config.vectors, config.slots, seed)?;
    let clusters = partition(n, config.clusters, derive(seed, 5))?;

    let mut cursors = vec![0usize; n];
    let mut seen: HashMap<FlowId, Count> = HashMap::new();
    let mut result = SeedResult {
        seed,
        packets: trace.len(),
        flows: trace.num_flows,
        recall: 0.0,
        recall_per_cycle: Vec::with_capacity(config.cycles),
        messages: 0,
        memory_bytes: node_memory_bytes(config.vectors, config.slots),
        recirculations: 0,
        aggregation: RoundStats::default(),
        consolidation: RoundStats::default(),
        dropped: 0,
        query: Vec::new(),
        truth: Vec::new(),
    };

    for cycle in 0..config.cycles {
        let lo = order.len() * cycle / config.cycles;
        let hi = order.len() * (cycle + 1) / config.cycles;
        for &sw in &order[lo..hi] {
            let sw = sw as usize;
            let id = parts[sw][cursors[sw]];
            cursors[sw] += 1;
            switches[sw].ingest(id);
            *seen.entry(id).or_insert(0) += 1;
        }

        let net = NetworkConfig {
            drop_probability: config.drop_probability,
            delivery_order: config.delivery_order,
            seed: derive(seed, 100 + cycle as u64),
            record_events: false,
            audit_deliveries: false,
        };
        if config.clusters == 1 {
            let mut network = Network::new(net, std::mem::take(&mut switches))?;
            let stats = network.run_cycle()?;
            invariants::check_cycle(network.switches())?;
            switches = network.into_switches();
            result.messages = stats.messages(config.count_dropped);
            result.aggregation = stats.aggregation;
            result.consolidation = stats.consolidation;
            result.dropped = stats.dropped();
        } else {
            let (done, stats) = run_clustered(std::mem::take(&mut switches), &clusters, &net)?;
            switches = done;
            result.messages = stats.messages(config.count_dropped);
            result.dropped = stats.dropped();
            let (mut agg, mut cons) = (RoundStats::default(), RoundStats::default());
            for s in stats
                .intra
                .iter()
                .chain(&stats.inter)
                .chain(&stats.dissemination)
            {
                for (into, from) in [(&mut agg, s.aggregation), (&mut cons, s.consolidation)] {
                    into.enqueued += from.enqueued;
                    into.delivered += from.delivered;
                    into.dropped += from.dropped;
                }
            }
            result.aggregation = agg;
            result.consolidation = cons;
        }

        let truth = topk_from_counts(&seen, config.k);
        let query = switches[0].query().entries();
        let recall = recall_at_k(&query, &truth, config.k);
        result.recall_per_cycle.push(recall);
        result.recall = recall;
        result.query = query;
        result.truth = truth;
    }
    result.recirculations = switches.iter().map(|s| s.local().recirculations()).sum();
    Ok(result)
}

/// Outcome of one randomized flat-network trial.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub switches: Vec<SwitchState>,
    pub messages: u64,
    pub dropped: u64,
    /// Deliveries confirmed exactly once by the audit, summed over cycles.
    pub audited: u64,
}

/// Runs `cycles` flat cycles over `trace` split across `n` switches, with
/// random delivery order, the given loss rate and a full delivery audit.
/// Every invariant is checked after every cycle.
pub fn randomized_trial(
    trace: &Trace,
    n: usize,
    vectors: usize,
    slots: usize,
    drop_probability: f64,
    cycles: usize,
    seed: u64,
) -> Result<TrialOutcome> {
    let plan = SplitPlan {
        k: 16.min(trace.num_flows as usize),
        switches: n,
        affinity: 1.0,
        seed: derive(seed, 3),
    };
    let parts = split_stream(trace, &plan)?;
    let switches = build_switches(n, vectors, slots, seed)?;
    let mut network = Network::new(
        NetworkConfig {
            drop_probability,
            delivery_order: DeliveryOrder::Random,
            seed: derive(seed, 6),
            record_events: false,
            audit_deliveries: true,
        },
        switches,
    )?;
    let mut outcome = TrialOutcome {
        switches: Vec::new(),
        messages: 0,
        dropped: 0,
        audited: 0,
    };
    for cycle in 0..cycles {
        for (sw, part) in network.switches_mut().iter_mut().zip(&parts) {
            let lo = part.len() * cycle / cycles;
            let hi = part.len() * (cycle + 1) / cycles;
            for &id in &part[lo..hi] {
                sw.ingest(id);
            }
        }
        let stats = network.run_cycle()?;
        invariants::check_cycle(network.switches())?;
        match network.audit_exactly_once() {
            Some(Ok(n)) => outcome.audited += n,
            Some(Err(msg)) => {
                return Err(Error::Invariant {
                    summary: format!("exactly-once delivery: {msg}"),
                    dump: String::new(),
                })
            }
            None => unreachable!("audit enabled"),
        }
        outcome.messages += stats.messages(false);
        outcome.dropped += stats.dropped();
    }
    outcome.switches = network.into_switches();
    Ok(outcome)
}

#[derive(Clone, Debug, Default)]
pub struct VerifySummary {
    pub trials: usize,
    pub messages: u64,
    pub dropped: u64,
}

/// Randomized invariant suite over a small network fed from `trace`.
pub fn verify_trace(trace: &Trace, trials: usize, seed: u64) -> Result<VerifySummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = VerifySummary::default();
    for _ in 0..trials {
        let n = rng.gen_range(2..=8);
        let drop = if rng.gen_bool(0.5) { 0.0 } else { 0.2 };
        let out = randomized_trial(trace, n, 2, 256, drop, 2, rng.gen())?;
        summary.trials += 1;
        summary.messages += out.messages;
        summary.dropped += out.dropped;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_budget() {
        assert_eq!(node_memory_bytes(2, 4096), 294_912);
        assert_eq!(node_memory_bytes(2, 4096), 288 * 1024);
        assert_eq!(node_memory_bytes(2, 512), 36_864);
        assert_eq!(node_memory_bytes(1, 1), 36);
    }

    #[test]
    fn recall_edges() {
        let truth: Vec<FlowEntry> = (1..=4u32).map(|i| FlowEntry::new(i, 10)).collect();
        let all: Vec<FlowEntry> = (1..=9u32).map(|i| FlowEntry::new(i, 1)).collect();
        assert_eq!(recall_at_k(&all, &truth, 4), 1.0);
        let none: Vec<FlowEntry> = (20..=29u32).map(|i| FlowEntry::new(i, 1)).collect();
        assert_eq!(recall_at_k(&none, &truth, 4), 0.0);
        assert_eq!(recall_at_k(&all[..2], &truth, 4), 0.5);
        // fewer flows than k
        assert_eq!(recall_at_k(&all, &truth, 10), 1.0);
    }

    #[test]
    fn config_validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        let bad_k = ExperimentConfig {
            k: 3000,
            slots: 1024,
            ..ok.clone()
        };
        assert!(matches!(
            bad_k.validate(),
            Err(ConfigError::KExceedsCapacity { .. })
        ));
        let bad_c = ExperimentConfig {
            clusters: 11,
            ..ok.clone()
        };
        assert!(bad_c.validate().is_err());
        let bad_s = ExperimentConfig {
            slots: 1000,
            ..ok.clone()
        };
        assert!(bad_s.validate().is_err());
        let bad_drop = ExperimentConfig {
            drop_probability: 1.0,
            ..ok
        };
        assert!(bad_drop.validate().is_err());
    }

    #[test]
    fn fill_occupies_every_cell() {
        let mut sw = build_switches(1, 2, 64, 3).unwrap().remove(0);
        fill_local_table(&mut sw, 1000, 4);
        let t = sw.local().table();
        assert_eq!(t.occupancy(), 128);
        assert!(t.misplaced_slot().is_none());
        assert!(t.entries().iter().all(|e| e.id.0 >= 1000));
    }

    #[test]
    fn arrival_orders_cover_every_packet() {
        let parts = vec![vec![FlowId(1); 3], vec![], vec![FlowId(2); 5]];
        let rr = arrival_order(&parts, Interleave::RoundRobin, 0);
        assert_eq!(rr, vec![0, 2, 0, 2, 0, 2, 2, 2]);
        let random = arrival_order(&parts, Interleave::Random, 9);
        assert_eq!(random.iter().filter(|&&s| s == 0).count(), 3);
        assert_eq!(random.iter().filter(|&&s| s == 2).count(), 5);
    }
}
