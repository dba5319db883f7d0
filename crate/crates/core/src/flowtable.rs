//! Fixed-shape multi-vector hash tables.
//!
//! Every table on a switch has the same shape: `d` vectors ("stages") of `s`
//! slots, where vector `i` is addressed through its own seeded hash. A flow
//! therefore lands on the same `(vector, index)` position in every table of
//! every switch, which is what lets tables be copied, compared and merged slot
//! by slot.
//!
//! Tables can optionally record the order in which a packet touches ID and
//! counter fields ([`AccessLog`]), so tests can prove that an operation walks
//! the pipeline feed-forward.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;

/// A 32-bit flow identifier. `0` is reserved for empty slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u32);

impl FlowId {
    /// The sentinel stored in unoccupied slots.
    pub const EMPTY: FlowId = FlowId(0);

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

impl From<u32> for FlowId {
    fn from(v: u32) -> Self {
        FlowId(v)
    }
}

/// Packet count units.
pub type Count = u64;

/// An `(id, count)` pair: what tables store and what protocol messages carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FlowEntry {
    pub id: FlowId,
    pub count: Count,
}

impl FlowEntry {
    pub const EMPTY: FlowEntry = FlowEntry {
        id: FlowId::EMPTY,
        count: 0,
    };

    pub fn new(id: impl Into<FlowId>, count: Count) -> Self {
        FlowEntry {
            id: id.into(),
            count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.id.is_empty()
    }

    /// Orders entries by count, then by id. Two entries of the same flow
    /// compare equal exactly when their counts agree.
    pub fn rank_key(&self) -> (Count, FlowId) {
        (self.count, self.id)
    }
}

impl fmt::Display for FlowEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.id, self.count)
    }
}

/// A `(vector, index)` position inside a table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub vector: usize,
    pub index: usize,
}

/// Shape and hash seeds shared by every table in one simulation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableConfig {
    vectors: usize,
    slots: usize,
    seeds: Vec<u32>,
}

impl TableConfig {
    /// Builds a config whose per-vector hash seeds are derived from `seed`.
    pub fn new(vectors: usize, slots: usize, seed: u64) -> Result<Self, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds = (0..vectors).map(|_| rng.gen::<u32>()).collect();
        Self::with_seeds(slots, seeds)
    }

    pub fn with_seeds(slots: usize, seeds: Vec<u32>) -> Result<Self, ConfigError> {
        if seeds.is_empty() {
            return Err(ConfigError::NoVectors);
        }
        if slots == 0 || !slots.is_power_of_two() {
            return Err(ConfigError::SlotsNotPowerOfTwo(slots));
        }
        Ok(TableConfig {
            vectors: seeds.len(),
            slots,
            seeds,
        })
    }

    /// Number of vectors (`d`).
    pub fn vectors(&self) -> usize {
        self.vectors
    }

    /// Slots per vector (`s`).
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn seeds(&self) -> &[u32] {
        &self.seeds
    }

    /// Total number of cells, `d * s`.
    pub fn cells(&self) -> usize {
        self.vectors * self.slots
    }

    /// Index of `id` inside vector `vector`.
    ///
    /// Panics if `vector >= d`.
    #[inline]
    pub fn hash_index(&self, vector: usize, id: FlowId) -> usize {
        (seeded_hash(self.seeds[vector], id.0) as usize) & (self.slots - 1)
    }
}

#[inline]
fn fmix32(mut h: u32) -> u32 {
    h ^= h >> 16;
    h = h.wrapping_mul(0x85eb_ca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2_ae35);
    h ^= h >> 16;
    h
}

/// Murmur3 finalizer over the id pre-multiplied by the golden ratio and keyed
/// by the vector seed.
#[inline]
pub fn seeded_hash(seed: u32, id: u32) -> u32 {
    fmix32(id.wrapping_mul(0x9e37_79b1) ^ seed)
}

/// Bytes needed by a table of this shape when each cell stores an id of
/// `id_bytes` and a counter of `count_bytes`.
pub fn memory_bytes(config: &TableConfig, id_bytes: usize, count_bytes: usize) -> usize {
    config.vectors * config.slots * (id_bytes + count_bytes)
}

/// Which field a packet reaches first when it walks one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldOrder {
    IdFirst,
    CountFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Id,
    Count,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Access {
    pub vector: usize,
    pub field: Field,
    pub mode: AccessMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogEvent {
    Access(Access),
    /// The packet was sent back to the start of the pipeline.
    Recirculate,
}

/// Ordered record of the field accesses one packet made while crossing a
/// table, used to check feed-forward legality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessLog {
    order: FieldOrder,
    events: Vec<LogEvent>,
}

/// A recorded access that could not happen on a feed-forward pipeline.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LegalityViolation {
    #[error("access #{position} goes back from vector {from} to vector {to}")]
    StageRegression {
        position: usize,
        from: usize,
        to: usize,
    },
    #[error("access #{position} touches {field:?} in vector {vector} after the later field was already reached")]
    FieldOrder {
        position: usize,
        vector: usize,
        field: Field,
    },
}

impl AccessLog {
    pub fn new(order: FieldOrder) -> Self {
        AccessLog {
            order,
            events: Vec::new(),
        }
    }

    pub fn order(&self) -> FieldOrder {
        self.order
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn record(&mut self, vector: usize, field: Field, mode: AccessMode) {
        self.events.push(LogEvent::Access(Access {
            vector,
            field,
            mode,
        }));
    }

    pub fn recirculate(&mut self) {
        self.events.push(LogEvent::Recirculate);
    }

    pub fn recirculations(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, LogEvent::Recirculate))
            .count()
    }

    pub fn accesses(&self) -> impl Iterator<Item = &Access> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Access(a) => Some(a),
            LogEvent::Recirculate => None,
        })
    }

    /// Checks that every pass (the accesses between recirculations) walks
    /// vectors in non-decreasing order and, inside one vector, never touches
    /// the earlier field after the later one.
    pub fn check(&self) -> Result<(), LegalityViolation> {
        let (first, second) = match self.order {
            FieldOrder::IdFirst => (Field::Id, Field::Count),
            FieldOrder::CountFirst => (Field::Count, Field::Id),
        };
        let mut current: Option<usize> = None;
        let mut reached_second = false;
        for (position, event) in self.events.iter().enumerate() {
            let access = match event {
                LogEvent::Recirculate => {
                    current = None;
                    reached_second = false;
                    continue;
                }
                LogEvent::Access(a) => a,
            };
            match current {
                Some(v) if access.vector < v => {
                    return Err(LegalityViolation::StageRegression {
                        position,
                        from: v,
                        to: access.vector,
                    });
                }
                Some(v) if access.vector == v => {}
                _ => {
                    current = Some(access.vector);
                    reached_second = false;
                }
            }
            if access.field == second {
                reached_second = true;
            } else if access.field == first && reached_second {
                return Err(LegalityViolation::FieldOrder {
                    position,
                    vector: access.vector,
                    field: access.field,
                });
            }
        }
        Ok(())
    }
}

/// Optional access recorder threaded through table accessors.
pub struct Probe<'a> {
    log: Option<&'a mut AccessLog>,
}

impl<'a> Probe<'a> {
    pub fn off() -> Self {
        Probe { log: None }
    }

    pub fn on(log: &'a mut AccessLog) -> Self {
        Probe { log: Some(log) }
    }

    pub fn from_option(log: Option<&'a mut AccessLog>) -> Self {
        Probe { log }
    }

    #[inline]
    fn note(&mut self, vector: usize, field: Field, mode: AccessMode) {
        if let Some(log) = self.log.as_deref_mut() {
            log.record(vector, field, mode);
        }
    }

    #[inline]
    pub fn recirculate(&mut self) {
        if let Some(log) = self.log.as_deref_mut() {
            log.recirculate();
        }
    }
}

/// `d` vectors of `s` [`FlowEntry`] slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiVectorTable {
    config: TableConfig,
    cells: Vec<FlowEntry>,
    field_order: FieldOrder,
}

impl MultiVectorTable {
    pub fn new(config: TableConfig, field_order: FieldOrder) -> Self {
        let cells = vec![FlowEntry::EMPTY; config.cells()];
        MultiVectorTable {
            config,
            cells,
            field_order,
        }
    }

    pub fn config(&self) -> &TableConfig {
        &self.config
    }

    pub fn field_order(&self) -> FieldOrder {
        self.field_order
    }

    #[inline]
    fn offset(&self, vector: usize, index: usize) -> usize {
        assert!(vector < self.config.vectors && index < self.config.slots);
        vector * self.config.slots + index
    }

    /// Unrecorded read of one slot.
    #[inline]
    pub fn get(&self, vector: usize, index: usize) -> FlowEntry {
        self.cells[self.offset(vector, index)]
    }

    pub fn get_slot(&self, slot: Slot) -> FlowEntry {
        self.get(slot.vector, slot.index)
    }

    #[inline]
    pub fn hash_index(&self, vector: usize, id: FlowId) -> usize {
        self.config.hash_index(vector, id)
    }

    #[inline]
    pub fn read_id(&self, vector: usize, index: usize, probe: &mut Probe<'_>) -> FlowId {
        probe.note(vector, Field::Id, AccessMode::Read);
        self.cells[self.offset(vector, index)].id
    }

    #[inline]
    pub fn read_count(&self, vector: usize, index: usize, probe: &mut Probe<'_>) -> Count {
        probe.note(vector, Field::Count, AccessMode::Read);
        self.cells[self.offset(vector, index)].count
    }

    #[inline]
    pub fn write_id(&mut self, vector: usize, index: usize, id: FlowId, probe: &mut Probe<'_>) {
        probe.note(vector, Field::Id, AccessMode::Write);
        let off = self.offset(vector, index);
        self.cells[off].id = id;
    }

    #[inline]
    pub fn write_count(
        &mut self,
        vector: usize,
        index: usize,
        count: Count,
        probe: &mut Probe<'_>,
    ) {
        probe.note(vector, Field::Count, AccessMode::Write);
        let off = self.offset(vector, index);
        self.cells[off].count = count;
    }

    /// Writes `entry` at its hash position in `vector`, overwriting whatever
    /// was there. Used to seed tables directly in tests and experiments.
    pub fn insert_at(&mut self, vector: usize, entry: FlowEntry) -> Slot {
        assert!(!entry.is_empty(), "cannot place the empty sentinel");
        let index = self.hash_index(vector, entry.id);
        let off = self.offset(vector, index);
        self.cells[off] = entry;
        Slot { vector, index }
    }

    /// A detached copy of this table's contents.
    pub fn snapshot_copy(&self) -> Self {
        self.clone()
    }

    /// Copy of the contents laid out with a different field order.
    pub fn copy_as(&self, field_order: FieldOrder) -> Self {
        MultiVectorTable {
            config: self.config.clone(),
            cells: self.cells.clone(),
            field_order,
        }
    }

    /// Overwrites this table's contents with `other`'s (same shape).
    pub fn copy_from(&mut self, other: &MultiVectorTable) {
        assert_eq!(self.config, other.config, "table shapes differ");
        self.cells.copy_from_slice(&other.cells);
    }

    pub fn reset(&mut self) {
        self.cells.fill(FlowEntry::EMPTY);
    }

    /// Non-empty entries, vector-major then by index.
    pub fn entries(&self) -> Vec<FlowEntry> {
        self.cells
            .iter()
            .copied()
            .filter(|e| !e.is_empty())
            .collect()
    }

    /// Non-empty entries with their positions, in [`Self::entries`] order.
    pub fn occupied(&self) -> impl Iterator<Item = (Slot, FlowEntry)> + '_ {
        let s = self.config.slots;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_empty())
            .map(move |(off, e)| {
                (
                    Slot {
                        vector: off / s,
                        index: off % s,
                    },
                    *e,
                )
            })
    }

    pub fn occupancy(&self) -> usize {
        self.cells.iter().filter(|e| !e.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(FlowEntry::is_empty)
    }

    /// Probes `id`'s slot in every vector and returns the first match.
    pub fn lookup(&self, id: FlowId) -> Option<(Slot, Count)> {
        (0..self.config.vectors).find_map(|vector| {
            let index = self.hash_index(vector, id);
            let e = self.get(vector, index);
            (e.id == id && !id.is_empty()).then_some((Slot { vector, index }, e.count))
        })
    }

    /// Sum of every counter in the table.
    pub fn total_count(&self) -> u128 {
        self.cells.iter().map(|e| e.count as u128).sum()
    }

    /// Returns the first slot holding an entry that is not at its own hash
    /// index, or an empty slot with a non-zero count.
    pub fn misplaced_slot(&self) -> Option<Slot> {
        self.occupied()
            .find(|(slot, e)| self.hash_index(slot.vector, e.id) != slot.index)
            .map(|(slot, _)| slot)
            .or_else(|| {
                let s = self.config.slots;
                self.cells
                    .iter()
                    .position(|e| e.is_empty() && e.count != 0)
                    .map(|off| Slot {
                        vector: off / s,
                        index: off % s,
                    })
            })
    }
}

impl fmt::Display for MultiVectorTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "table d={} s={} order={:?} occupied={}",
            self.config.vectors,
            self.config.slots,
            self.field_order,
            self.occupancy()
        )?;
        for (slot, e) in self.occupied() {
            writeln!(f, "  [{}][{}] {}", slot.vector, slot.index, e)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(d: usize, s: usize) -> TableConfig {
        TableConfig::new(d, s, 7).unwrap()
    }

    /// Straight-line murmur3 finalizer, written independently of
    /// `seeded_hash` for the golden value below.
    fn reference_hash(seed: u32, id: u32) -> u32 {
        let x = (id as u64 * 0x9e37_79b1u64) as u32 ^ seed;
        let x = x ^ (x >> 16);
        let x = ((x as u64 * 0x85eb_ca6bu64) & 0xffff_ffff) as u32;
        let x = x ^ (x >> 13);
        let x = ((x as u64 * 0xc2b2_ae35u64) & 0xffff_ffff) as u32;
        x ^ (x >> 16)
    }

    #[test]
    fn hash_index_golden() {
        let cfg = TableConfig::with_seeds(4096, vec![0x1234_5678, 0x9abc_def0]).unwrap();
        let id = FlowId(0x0000_0001);
        assert_eq!(reference_hash(0x1234_5678, 1) & 4095, 3679);
        assert_eq!(cfg.hash_index(0, id), 3679);
        assert_eq!(reference_hash(0x9abc_def0, 1) & 4095, 2481);
        assert_eq!(cfg.hash_index(1, id), 2481);
    }

    #[test]
    fn hash_index_single_slot() {
        let cfg = config(3, 1);
        for id in 1..100 {
            for v in 0..3 {
                assert_eq!(cfg.hash_index(v, FlowId(id)), 0);
            }
        }
    }

    #[test]
    #[should_panic]
    fn hash_index_out_of_range_vector() {
        config(2, 16).hash_index(2, FlowId(5));
    }

    #[test]
    fn config_rejects_bad_shapes() {
        assert_eq!(TableConfig::new(0, 16, 1), Err(ConfigError::NoVectors));
        assert_eq!(
            TableConfig::new(2, 12, 1),
            Err(ConfigError::SlotsNotPowerOfTwo(12))
        );
        assert_eq!(
            TableConfig::new(2, 0, 1),
            Err(ConfigError::SlotsNotPowerOfTwo(0))
        );
    }

    #[test]
    fn same_seed_same_config() {
        assert_eq!(config(2, 64), config(2, 64));
        assert_ne!(
            config(2, 64).seeds(),
            TableConfig::new(2, 64, 8).unwrap().seeds()
        );
    }

    #[test]
    fn snapshot_copy_is_detached() {
        let mut t = MultiVectorTable::new(config(2, 16), FieldOrder::IdFirst);
        assert!(t.snapshot_copy().is_empty());

        let slot = t.insert_at(0, FlowEntry::new(1u32, 2000));
        let copy = t.snapshot_copy();
        assert_eq!(copy.get_slot(slot), FlowEntry::new(1u32, 2000));
        assert_eq!(copy.entries(), vec![FlowEntry::new(1u32, 2000)]);

        t.write_count(slot.vector, slot.index, 2001, &mut Probe::off());
        assert_eq!(copy.get_slot(slot).count, 2000);
    }

    #[test]
    fn entries_are_vector_major() {
        let mut t = MultiVectorTable::new(config(2, 16), FieldOrder::IdFirst);
        assert!(t.entries().is_empty());
        t.insert_at(1, FlowEntry::new(10u32, 1));
        t.insert_at(0, FlowEntry::new(20u32, 2));
        let e = t.entries();
        assert_eq!(e, vec![FlowEntry::new(20u32, 2), FlowEntry::new(10u32, 1)]);
    }

    #[test]
    fn full_table_has_d_times_s_entries() {
        let cfg = config(2, 4096);
        let mut t = MultiVectorTable::new(cfg.clone(), FieldOrder::IdFirst);
        let mut id = 1u32;
        while t.occupancy() < cfg.cells() {
            let e = FlowEntry::new(id, 1);
            for v in 0..2 {
                let j = cfg.hash_index(v, e.id);
                if t.get(v, j).is_empty() {
                    t.insert_at(v, e);
                    break;
                }
            }
            id += 1;
        }
        assert_eq!(t.entries().len(), 8192);
        assert!(t.misplaced_slot().is_none());
    }

    #[test]
    fn memory_accounting() {
        assert_eq!(memory_bytes(&config(2, 4096), 4, 4), 65_536);
        assert_eq!(memory_bytes(&config(2, 4096), 0, 4), 32_768);
        assert_eq!(memory_bytes(&config(1, 1), 4, 4), 8);
        assert_eq!(memory_bytes(&config(1, 1), 3, 5), 8);
    }

    #[test]
    fn lookup_finds_placed_entries() {
        let mut t = MultiVectorTable::new(config(2, 64), FieldOrder::IdFirst);
        let slot = t.insert_at(1, FlowEntry::new(33u32, 9));
        assert_eq!(t.lookup(FlowId(33)), Some((slot, 9)));
        assert_eq!(t.lookup(FlowId(34)), None);
    }

    #[test]
    fn misplaced_entry_is_detected() {
        let mut t = MultiVectorTable::new(config(1, 64), FieldOrder::IdFirst);
        let id = FlowId(77);
        let wrong = (t.hash_index(0, id) + 1) % 64;
        t.write_id(0, wrong, id, &mut Probe::off());
        t.write_count(0, wrong, 3, &mut Probe::off());
        assert_eq!(
            t.misplaced_slot(),
            Some(Slot {
                vector: 0,
                index: wrong
            })
        );
    }

    #[test]
    fn legal_id_first_pass() {
        let mut log = AccessLog::new(FieldOrder::IdFirst);
        log.record(0, Field::Id, AccessMode::Read);
        log.record(0, Field::Count, AccessMode::Read);
        log.record(0, Field::Count, AccessMode::Write);
        log.record(1, Field::Id, AccessMode::Read);
        log.record(1, Field::Count, AccessMode::Read);
        assert_eq!(log.check(), Ok(()));
    }

    #[test]
    fn count_before_id_rejected_for_id_first() {
        let mut log = AccessLog::new(FieldOrder::IdFirst);
        log.record(0, Field::Count, AccessMode::Read);
        log.record(0, Field::Id, AccessMode::Write);
        assert!(matches!(
            log.check(),
            Err(LegalityViolation::FieldOrder { vector: 0, .. })
        ));
    }

    #[test]
    fn earlier_vector_without_recirculation_rejected() {
        let mut log = AccessLog::new(FieldOrder::IdFirst);
        log.record(1, Field::Count, AccessMode::Read);
        log.record(0, Field::Id, AccessMode::Write);
        assert_eq!(
            log.check(),
            Err(LegalityViolation::StageRegression {
                position: 1,
                from: 1,
                to: 0
            })
        );

        let mut log = AccessLog::new(FieldOrder::IdFirst);
        log.record(1, Field::Count, AccessMode::Read);
        log.recirculate();
        log.record(0, Field::Id, AccessMode::Write);
        assert_eq!(log.check(), Ok(()));
        assert_eq!(log.recirculations(), 1);
    }

    /// HashPipe needs the id first to detect a match and the counter first to
    /// decide a swap. No single field order admits both.
    #[test]
    fn hashpipe_pattern_is_illegal_under_either_order() {
        let pattern = [
            (Field::Id, AccessMode::Read),
            (Field::Count, AccessMode::Read),
            (Field::Id, AccessMode::Write),
            (Field::Count, AccessMode::Write),
        ];
        for order in [FieldOrder::IdFirst, FieldOrder::CountFirst] {
            let mut log = AccessLog::new(order);
            for (field, mode) in pattern {
                log.record(0, field, mode);
            }
            assert!(log.check().is_err(), "{order:?} accepted HashPipe");
        }
    }

    #[test]
    fn count_first_pass() {
        let mut log = AccessLog::new(FieldOrder::CountFirst);
        log.record(0, Field::Count, AccessMode::Read);
        log.record(0, Field::Count, AccessMode::Write);
        log.record(0, Field::Id, AccessMode::Read);
        log.record(0, Field::Id, AccessMode::Write);
        log.record(1, Field::Count, AccessMode::Read);
        assert_eq!(log.check(), Ok(()));
        log.record(1, Field::Id, AccessMode::Read);
        log.record(1, Field::Count, AccessMode::Write);
        assert!(log.check().is_err());
    }

    proptest! {
        #[test]
        fn hash_index_in_range_and_deterministic(seed: u32, id in 1u32.., log_s in 0u32..14) {
            let s = 1usize << log_s;
            let cfg = TableConfig::with_seeds(s, vec![seed]).unwrap();
            let j = cfg.hash_index(0, FlowId(id));
            prop_assert!(j < s);
            prop_assert_eq!(j, cfg.clone().hash_index(0, FlowId(id)));
            prop_assert_eq!(j as u32, reference_hash(seed, id) & (s as u32 - 1));
        }

        #[test]
        fn memory_is_linear(d in 1usize..8, log_s in 0u32..16, idb in 0usize..9, cb in 0usize..9) {
            let cfg = TableConfig::new(d, 1 << log_s, 1).unwrap();
            prop_assert_eq!(memory_bytes(&cfg, idb, cb), d * (1 << log_s) * (idb + cb));
        }
    }
}
