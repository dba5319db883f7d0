//! Local top-k maintenance (Precision).
//!
//! A packet probes its slot in each vector in pipeline order. A matching id
//! is incremented in place. Otherwise the packet remembers the smallest
//! counter it saw and, with probability `1 / (min + 1)`, recirculates to take
//! over that slot with `min + 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::flowtable::{Count, FieldOrder, FlowId, MultiVectorTable, Probe, Slot, TableConfig};

/// What a single packet did to the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketOutcome {
    Incremented {
        slot: Slot,
        count: Count,
    },
    /// The packet recirculated and claimed the minimum slot.
    Replaced {
        slot: Slot,
        count: Count,
    },
    /// No match and the admission coin came up tails.
    Skipped {
        min_count: Count,
    },
}

#[derive(Clone, Debug)]
pub struct LocalTopK {
    table: MultiVectorTable,
    rng: ChaCha8Rng,
    packets: u64,
    recirculations: u64,
}

impl LocalTopK {
    pub fn new(config: TableConfig, seed: u64) -> Self {
        LocalTopK {
            table: MultiVectorTable::new(config, FieldOrder::IdFirst),
            rng: ChaCha8Rng::seed_from_u64(seed),
            packets: 0,
            recirculations: 0,
        }
    }

    pub fn table(&self) -> &MultiVectorTable {
        &self.table
    }

    /// Direct access for seeding a table with known contents.
    pub fn table_mut(&mut self) -> &mut MultiVectorTable {
        &mut self.table
    }

    pub fn packets(&self) -> u64 {
        self.packets
    }

    pub fn recirculations(&self) -> u64 {
        self.recirculations
    }

    pub fn process_packet(&mut self, id: FlowId) -> PacketOutcome {
        self.process_packet_with(id, &mut Probe::off())
    }

    pub fn process_packet_with(&mut self, id: FlowId, probe: &mut Probe<'_>) -> PacketOutcome {
        debug_assert!(!id.is_empty(), "flow id 0 is reserved");
        self.packets += 1;

        let mut min: Option<(Slot, Count)> = None;
        for vector in 0..self.table.config().vectors() {
            let index = self.table.hash_index(vector, id);
            let stored = self.table.read_id(vector, index, probe);
            let count = self.table.read_count(vector, index, probe);
            if stored == id {
                let count = count + 1;
                self.table.write_count(vector, index, count, probe);
                return PacketOutcome::Incremented {
                    slot: Slot { vector, index },
                    count,
                };
            }
            // strict: the earliest vector wins ties
            if min.is_none_or(|(_, m)| count < m) {
                min = Some((Slot { vector, index }, count));
            }
        }

        let (slot, min_count) = min.expect("tables have at least one vector");
        if self.rng.gen_range(0..=min_count) != 0 {
            return PacketOutcome::Skipped { min_count };
        }
        probe.recirculate();
        self.recirculations += 1;
        let count = min_count + 1;
        self.table.write_id(slot.vector, slot.index, id, probe);
        self.table
            .write_count(slot.vector, slot.index, count, probe);
        PacketOutcome::Replaced { slot, count }
    }

    /// The stored count for `id`, if any probed slot holds it.
    pub fn local_estimate(&self, id: FlowId) -> Option<Count> {
        self.table.lookup(id).map(|(_, c)| c)
    }
}
