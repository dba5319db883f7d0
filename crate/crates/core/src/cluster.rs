//! Two-level runs: NODE inside each cluster, then among one representative
//! per cluster, then each representative pushes the result to its members.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, Error};
use crate::flowtable::MultiVectorTable;
use crate::invariants;
use crate::protocol::SwitchState;
use crate::transport::{CycleStats, Network, NetworkConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterPlan {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterPlan {
    pub fn clusters(&self) -> usize {
        self.members.len()
    }

    pub fn switches(&self) -> usize {
        self.assignment.len()
    }

    pub fn cluster_of(&self, switch: usize) -> usize {
        self.assignment[switch]
    }

    /// Members of `cluster` in ascending switch order.
    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    /// The lowest switch id in `cluster`.
    pub fn representative(&self, cluster: usize) -> usize {
        self.members[cluster][0]
    }

    pub fn representatives(&self) -> Vec<usize> {
        (0..self.clusters())
            .map(|c| self.representative(c))
            .collect()
    }

    /// `switch_id,cluster_id,is_representative`, one row per switch.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "switch_id,cluster_id,is_representative")?;
        for (sw, &c) in self.assignment.iter().enumerate() {
            let rep = u8::from(self.representative(c) == sw);
            writeln!(out, "{sw},{c},{rep}")?;
        }
        Ok(())
    }
}

/// Splits switches `0..n` into `c` clusters whose sizes differ by at most
/// one. Membership is a seeded shuffle.
pub fn partition(n: usize, c: usize, seed: u64) -> Result<ClusterPlan, ConfigError> {
    if c == 0 || c > n {
        return Err(ConfigError::Clusters {
            clusters: c,
            switches: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / c, n % c);
    let mut members = Vec::with_capacity(c);
    let mut rest = order.as_slice();
    for cluster in 0..c {
        let size = base + usize::from(cluster < extra);
        let (head, tail) = rest.split_at(size);
        let mut m = head.to_vec();
        m.sort_unstable();
        members.push(m);
        rest = tail;
    }
    let mut assignment = vec![0; n];
    for (cluster, m) in members.iter().enumerate() {
        for &sw in m {
            assignment[sw] = cluster;
        }
    }
    Ok(ClusterPlan {
        assignment,
        members,
    })
}

#[derive(Clone, Debug, Default)]
pub struct ClusterStats {
    pub intra: Vec<CycleStats>,
    pub inter: Option<CycleStats>,
    pub dissemination: Vec<CycleStats>,
}

impl ClusterStats {
    pub fn messages(&self, include_dropped: bool) -> u64 {
        self.intra
            .iter()
            .chain(self.inter.iter())
            .chain(self.dissemination.iter())
            .map(|s| s.messages(include_dropped))
            .sum()
    }

    pub fn dropped(&self) -> u64 {
        self.intra
            .iter()
            .chain(self.inter.iter())
            .chain(self.dissemination.iter())
            .map(CycleStats::dropped)
            .sum()
    }
}

fn sub_config(base: &NetworkConfig, salt: u64) -> NetworkConfig {
    NetworkConfig {
        seed: base
            .seed
            .wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        ..base.clone()
    }
}

/// Runs one clustered cycle over `switches`, whose positions are the
/// switch indices used by `plan`.
///
/// With a single cluster the intra-cluster result is already global and the
/// other two phases are skipped. Invariants are checked after each phase.
pub fn run_clustered(
    switches: Vec<SwitchState>,
    plan: &ClusterPlan,
    net: &NetworkConfig,
) -> Result<(Vec<SwitchState>, ClusterStats), Error> {
    if switches.len() != plan.switches() {
        return Err(ConfigError::Invalid(format!(
            "plan covers {} switches, got {}",
            plan.switches(),
            switches.len()
        ))
        .into());
    }
    let mut slots: Vec<Option<SwitchState>> = switches.into_iter().map(Some).collect();
    let mut stats = ClusterStats::default();

    let take = |slots: &mut Vec<Option<SwitchState>>, ids: &[usize]| -> Vec<SwitchState> {
        ids.iter()
            .map(|&i| slots[i].take().expect("switch used twice"))
            .collect()
    };
    let put = |slots: &mut Vec<Option<SwitchState>>, ids: &[usize], states: Vec<SwitchState>| {
        for (&i, sw) in ids.iter().zip(states) {
            slots[i] = Some(sw);
        }
    };

    for cluster in 0..plan.clusters() {
        let ids = plan.members(cluster);
        let mut sub = Network::new(sub_config(net, cluster as u64 + 1), take(&mut slots, ids))?;
        stats.intra.push(sub.run_cycle()?);
        invariants::check_cycle(sub.switches())?;
        put(&mut slots, ids, sub.into_switches());
    }

    if plan.clusters() > 1 {
        let reps = plan.representatives();
        let states = take(&mut slots, &reps);
        let locals: Vec<MultiVectorTable> = states.iter().map(|s| s.g_topk().clone()).collect();
        let mut top = Network::new(sub_config(net, 0), states)?;
        stats.inter = Some(top.run_cycle_with(|i, sw| sw.begin_cycle_from(&locals[i]))?);
        invariants::check_cycle(top.switches())?;
        put(&mut slots, &reps, top.into_switches());

        for cluster in 0..plan.clusters() {
            let ids = plan.members(cluster);
            if ids.len() < 2 {
                continue;
            }
            let salt = (plan.clusters() + cluster) as u64 + 1;
            let mut sub = Network::new(sub_config(net, salt), take(&mut slots, ids))?;
            // members are ascending, so the representative is at position 0
            stats.dissemination.push(sub.disseminate(0)?);
            put(&mut slots, ids, sub.into_switches());
        }
    }

    let switches: Vec<SwitchState> = slots
        .into_iter()
        .map(|s| s.expect("every switch returned"))
        .collect();
    invariants::check_identical_queries(&switches)?;
    Ok((switches, stats))
}

/// Lossless message count of one clustered cycle when every snapshot, sum
/// and global table holds `cells` entries.
pub fn clustered_full_table_messages(plan: &ClusterPlan, cells: u64) -> u64 {
    let sizes: Vec<u64> = (0..plan.clusters())
        .map(|c| plan.members(c).len() as u64)
        .collect();
    let intra: u64 = sizes
        .iter()
        .map(|m| m * m.saturating_sub(1) * 2 * cells)
        .sum();
    if plan.clusters() == 1 {
        return intra;
    }
    let c = plan.clusters() as u64;
    let inter = c * (c - 1) * 2 * cells;
    let push: u64 = sizes.iter().map(|m| (m - 1) * cells).sum();
    intra + inter + push
}

/// Lossless message count of one flat cycle over `n` full tables.
pub fn flat_full_table_messages(n: u64, cells: u64) -> u64 {
    n * n.saturating_sub(1) * 2 * cells
}
