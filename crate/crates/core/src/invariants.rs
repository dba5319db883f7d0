//! Full-scan checks of the guarantees a completed cycle must satisfy.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::Error;
use crate::flowtable::{FlowEntry, FlowId, MultiVectorTable, Slot};
use crate::protocol::SwitchState;

/// A failed check, with enough table contents to debug it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub summary: String,
    pub dump: String,
}

impl Violation {
    fn new(summary: String) -> Self {
        Violation {
            summary,
            dump: String::new(),
        }
    }

    fn with_table(mut self, label: &str, table: &MultiVectorTable) -> Self {
        let _ = write!(self.dump, "{label}: {table}");
        self
    }
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::Invariant {
            summary: v.summary,
            dump: v.dump,
        }
    }
}

pub type CheckResult = Result<(), Violation>;

/// Every non-empty entry sits at its own hash index, and empty slots hold
/// zero counts.
pub fn check_hash_placement(label: &str, table: &MultiVectorTable) -> CheckResult {
    match table.misplaced_slot() {
        None => Ok(()),
        Some(slot) => Err(Violation::new(format!(
            "{label}: entry {} at {slot:?} is not at its hash index",
            table.get_slot(slot)
        ))
        .with_table(label, table)),
    }
}

pub fn check_all_placements(switches: &[SwitchState]) -> CheckResult {
    for sw in switches {
        let id = sw.id();
        check_hash_placement(&format!("switch {id} l-topk"), sw.local().table())?;
        check_hash_placement(&format!("switch {id} snapshot"), sw.snapshot())?;
        check_hash_placement(&format!("switch {id} g-topk"), sw.g_topk())?;
        check_hash_placement(&format!("switch {id} query"), sw.query())?;
    }
    Ok(())
}

/// Sum shares snapshot ids, and a flow's sum count equals the total of that
/// flow's snapshot counts across all `switches`.
pub fn check_sum_agreement(switches: &[SwitchState]) -> CheckResult {
    let mut network_total: HashMap<FlowId, u128> = HashMap::new();
    for sw in switches {
        for e in sw.snapshot().entries() {
            *network_total.entry(e.id).or_default() += e.count as u128;
        }
    }
    for sw in switches {
        let cfg = sw.config();
        for vector in 0..cfg.vectors() {
            for index in 0..cfg.slots() {
                let snap = sw.snapshot().get(vector, index);
                let sum = sw.sum().get(vector, index);
                if snap.id != sum.id {
                    return Err(Violation::new(format!(
                        "switch {}: sum id {} differs from snapshot id {} at [{vector}][{index}]",
                        sw.id(),
                        sum.id,
                        snap.id
                    ))
                    .with_table("sum", sw.sum())
                    .with_table("snapshot", sw.snapshot()));
                }
                if sum.is_empty() {
                    continue;
                }
                let want = network_total[&sum.id];
                if sum.count as u128 != want {
                    return Err(Violation::new(format!(
                        "switch {}: sum count for {} is {}, network-wide snapshot total is {want}",
                        sw.id(),
                        sum.id,
                        sum.count
                    ))
                    .with_table("sum", sw.sum()));
                }
            }
        }
    }
    Ok(())
}

/// Each entry is strictly smaller, by `(count, id)`, than the entry at its
/// hash index in every earlier vector.
pub fn check_vector_ordering(table: &MultiVectorTable) -> CheckResult {
    for (slot, e) in table.occupied() {
        for earlier in 0..slot.vector {
            let j = table.hash_index(earlier, e.id);
            let above = table.get(earlier, j);
            if above.is_empty() || e.rank_key() >= above.rank_key() {
                return Err(Violation::new(format!(
                    "entry {e} at {slot:?} is not below {above} at [{earlier}][{j}]"
                ))
                .with_table("g-topk", table));
            }
        }
    }
    Ok(())
}

pub fn check_no_duplicate_pairs(table: &MultiVectorTable) -> CheckResult {
    let mut seen: HashMap<FlowEntry, Slot> = HashMap::new();
    for (slot, e) in table.occupied() {
        if let Some(first) = seen.insert(e, slot) {
            return Err(
                Violation::new(format!("pair {e} appears at {first:?} and {slot:?}"))
                    .with_table("g-topk", table),
            );
        }
    }
    Ok(())
}

pub fn check_no_duplicate_ids(label: &str, table: &MultiVectorTable) -> CheckResult {
    let mut seen = HashSet::new();
    for e in table.entries() {
        if !seen.insert(e.id) {
            return Err(
                Violation::new(format!("{label}: flow {} occupies two slots", e.id))
                    .with_table(label, table),
            );
        }
    }
    Ok(())
}

/// All switches hold entry-for-entry identical global and query tables.
pub fn check_identical_tables(switches: &[SwitchState]) -> CheckResult {
    let Some(first) = switches.first() else {
        return Ok(());
    };
    for sw in &switches[1..] {
        if sw.g_topk() != first.g_topk() {
            return Err(Violation::new(format!(
                "g-topk of switch {} differs from switch {}",
                sw.id(),
                first.id()
            ))
            .with_table(&format!("switch {}", first.id()), first.g_topk())
            .with_table(&format!("switch {}", sw.id()), sw.g_topk()));
        }
    }
    check_identical_queries(switches)
}

pub fn check_identical_queries(switches: &[SwitchState]) -> CheckResult {
    let Some(first) = switches.first() else {
        return Ok(());
    };
    for sw in &switches[1..] {
        if sw.query() != first.query() {
            return Err(Violation::new(format!(
                "query table of switch {} differs from switch {}",
                sw.id(),
                first.id()
            ))
            .with_table(&format!("switch {}", first.id()), first.query())
            .with_table(&format!("switch {}", sw.id()), sw.query()));
        }
    }
    Ok(())
}

/// Everything that must hold once every switch in `switches` has completed
/// the same cycle with each other.
pub fn check_cycle(switches: &[SwitchState]) -> CheckResult {
    check_all_placements(switches)?;
    check_sum_agreement(switches)?;
    for sw in switches {
        check_no_duplicate_ids(&format!("switch {} snapshot", sw.id()), sw.snapshot())?;
        check_vector_ordering(sw.g_topk())?;
        check_no_duplicate_pairs(sw.g_topk())?;
        if sw.query().entries() != sw.g_topk().entries() {
            return Err(Violation::new(format!(
                "switch {}: query is not a copy of g-topk",
                sw.id()
            )));
        }
    }
    check_identical_tables(switches)
}
