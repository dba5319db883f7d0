//! The per-switch state machine that turns local top-k tables into one
//! network-wide top-k table.
//!
//! Each cycle has two information-sharing rounds:
//!
//! * **Aggregation.** Every switch freezes its local table into `snapshot`
//!   and sends each entry to every peer. A receiver adds a remote count into
//!   `sum` only when the id is already in its own snapshot, so `sum` ends up
//!   holding the network-wide count of every locally heavy flow.
//! * **Consolidation.** Every switch sends its `sum` entries to every peer and
//!   feeds its own through the same path. Entries compete on `(count, id)` in
//!   `g_topk`, whose counters sit before its ids in the pipeline: a larger
//!   pair takes the slot and the evicted pair walks on to the next vector.
//!
//! When consolidation completes, `g_topk` is frozen into `query`. Neither
//! round recirculates.

use std::fmt;

use crate::error::PhaseError;
use crate::flowtable::{
    AccessLog, Count, FieldOrder, FlowEntry, FlowId, MultiVectorTable, Probe, Slot, TableConfig,
};
use crate::precision::LocalTopK;

pub type SwitchId = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RoundPhase {
    Idle,
    Aggregation,
    Consolidation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Round {
    Aggregation = 0,
    Consolidation = 1,
}

impl Round {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Round::Aggregation => "AGG",
            Round::Consolidation => "CONS",
        }
    }
}

/// Which static table a switch transmits from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StaticSource {
    Snapshot,
    Sum,
    /// A finished global table being pushed to cluster members.
    Query,
}

impl StaticSource {
    pub fn round(self) -> Round {
        match self {
            StaticSource::Snapshot => Round::Aggregation,
            StaticSource::Sum | StaticSource::Query => Round::Consolidation,
        }
    }
}

/// One table entry in flight between two switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProtocolMessage {
    pub round: Round,
    pub sender: SwitchId,
    pub entry: FlowEntry,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("message needs {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("unknown round tag {0}")]
    RoundTag(u8),
    #[error("message carries the empty flow id")]
    EmptyId,
}

impl ProtocolMessage {
    pub const WIRE_LEN: usize = 1 + 2 + 4 + 8;

    /// `round:u8 | sender:u16 | id:u32 | count:u64`, little-endian.
    pub fn encode(&self) -> [u8; Self::WIRE_LEN] {
        let mut buf = [0u8; Self::WIRE_LEN];
        buf[0] = self.round as u8;
        buf[1..3].copy_from_slice(&self.sender.to_le_bytes());
        buf[3..7].copy_from_slice(&self.entry.id.0.to_le_bytes());
        buf[7..15].copy_from_slice(&self.entry.count.to_le_bytes());
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() != Self::WIRE_LEN {
            return Err(WireError::Length {
                expected: Self::WIRE_LEN,
                got: buf.len(),
            });
        }
        let round = match buf[0] {
            0 => Round::Aggregation,
            1 => Round::Consolidation,
            t => return Err(WireError::RoundTag(t)),
        };
        let sender = u16::from_le_bytes([buf[1], buf[2]]);
        let id = FlowId(u32::from_le_bytes(buf[3..7].try_into().unwrap()));
        if id.is_empty() {
            return Err(WireError::EmptyId);
        }
        let count = u64::from_le_bytes(buf[7..15].try_into().unwrap());
        Ok(ProtocolMessage {
            round,
            sender,
            entry: FlowEntry { id, count },
        })
    }
}

impl fmt::Display for ProtocolMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} from {}: {}",
            self.round.label(),
            self.sender,
            self.entry
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("{got:?} message delivered during the {expected:?} round")]
    WrongRound { expected: Round, got: Round },
    #[error("switch {0} received its own message")]
    OwnMessage(SwitchId),
    #[error("message carries the empty flow id")]
    EmptyId,
}

/// How a consolidation packet left `g_topk`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsolidationOutcome {
    /// The carried pair landed in an empty slot.
    Settled { vector: usize },
    /// Met an identical `(id, count)` pair and stopped.
    Duplicate { vector: usize },
    /// Still carrying a pair after the last vector; the pair is dropped.
    Filtered { carried: FlowEntry },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SwitchCounters {
    pub aggregation_received: u64,
    pub aggregation_matched: u64,
    pub consolidation_received: u64,
    pub consolidation_self_fed: u64,
    pub duplicates: u64,
    pub filtered: u64,
}

#[derive(Clone, Debug)]
pub struct SwitchState {
    switch_id: SwitchId,
    l_topk: LocalTopK,
    snapshot: MultiVectorTable,
    sum: MultiVectorTable,
    g_topk: MultiVectorTable,
    query: MultiVectorTable,
    phase: RoundPhase,
    record_access: bool,
    last_access: Option<AccessLog>,
    counters: SwitchCounters,
}

impl SwitchState {
    pub fn new(switch_id: SwitchId, config: TableConfig, precision_seed: u64) -> Self {
        SwitchState {
            switch_id,
            l_topk: LocalTopK::new(config.clone(), precision_seed),
            snapshot: MultiVectorTable::new(config.clone(), FieldOrder::IdFirst),
            sum: MultiVectorTable::new(config.clone(), FieldOrder::IdFirst),
            g_topk: MultiVectorTable::new(config.clone(), FieldOrder::CountFirst),
            query: MultiVectorTable::new(config, FieldOrder::IdFirst),
            phase: RoundPhase::Idle,
            record_access: false,
            last_access: None,
            counters: SwitchCounters::default(),
        }
    }

    pub fn id(&self) -> SwitchId {
        self.switch_id
    }

    pub fn phase(&self) -> RoundPhase {
        self.phase
    }

    pub fn config(&self) -> &TableConfig {
        self.snapshot.config()
    }

    pub fn local(&self) -> &LocalTopK {
        &self.l_topk
    }

    pub fn local_mut(&mut self) -> &mut LocalTopK {
        &mut self.l_topk
    }

    pub fn snapshot(&self) -> &MultiVectorTable {
        &self.snapshot
    }

    pub fn sum(&self) -> &MultiVectorTable {
        &self.sum
    }

    pub fn g_topk(&self) -> &MultiVectorTable {
        &self.g_topk
    }

    pub fn query(&self) -> &MultiVectorTable {
        &self.query
    }

    pub fn counters(&self) -> &SwitchCounters {
        &self.counters
    }

    /// Record the field accesses of each handled message; the most recent
    /// log is available from [`Self::last_access_log`].
    pub fn set_access_recording(&mut self, on: bool) {
        self.record_access = on;
        if !on {
            self.last_access = None;
        }
    }

    pub fn last_access_log(&self) -> Option<&AccessLog> {
        self.last_access.as_ref()
    }

    /// Feeds one data packet to the local top-k table. Allowed in any phase.
    pub fn ingest(&mut self, id: FlowId) {
        self.l_topk.process_packet(id);
    }

    fn expect_phase(&self, expected: RoundPhase) -> Result<(), PhaseError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(PhaseError {
                switch: self.switch_id,
                expected,
                found: self.phase,
            })
        }
    }

    fn start_log(&mut self, order: FieldOrder) -> Option<AccessLog> {
        self.record_access.then(|| AccessLog::new(order))
    }

    /// Freezes the local table and opens the aggregation round.
    pub fn begin_cycle(&mut self) -> Result<(), PhaseError> {
        self.expect_phase(RoundPhase::Idle)?;
        self.snapshot.copy_from(self.l_topk.table());
        self.open_aggregation();
        Ok(())
    }

    /// Like [`Self::begin_cycle`], but the snapshot is taken from `local`
    /// instead of the switch's own local table. A cluster representative
    /// uses its cluster's global table this way.
    pub fn begin_cycle_from(&mut self, local: &MultiVectorTable) -> Result<(), PhaseError> {
        self.expect_phase(RoundPhase::Idle)?;
        self.snapshot.copy_from(local);
        self.open_aggregation();
        Ok(())
    }

    fn open_aggregation(&mut self) {
        self.sum.copy_from(&self.snapshot);
        self.g_topk.reset();
        self.phase = RoundPhase::Aggregation;
    }

    pub fn emit_aggregation_messages(&self) -> Result<Vec<ProtocolMessage>, PhaseError> {
        self.expect_phase(RoundPhase::Aggregation)?;
        Ok(self.messages_from(StaticSource::Snapshot))
    }

    pub fn emit_consolidation_messages(&self) -> Result<Vec<ProtocolMessage>, PhaseError> {
        self.expect_phase(RoundPhase::Consolidation)?;
        Ok(self.messages_from(StaticSource::Sum))
    }

    fn messages_from(&self, source: StaticSource) -> Vec<ProtocolMessage> {
        let round = source.round();
        self.static_table(source)
            .entries()
            .into_iter()
            .map(|entry| ProtocolMessage {
                round,
                sender: self.switch_id,
                entry,
            })
            .collect()
    }

    pub fn static_table(&self, source: StaticSource) -> &MultiVectorTable {
        match source {
            StaticSource::Snapshot => &self.snapshot,
            StaticSource::Sum => &self.sum,
            StaticSource::Query => &self.query,
        }
    }

    /// Rebuilds the message for one slot of a static table. Retransmissions
    /// read the table again rather than keeping a copy of what was sent.
    pub fn static_message(&self, source: StaticSource, slot: Slot) -> ProtocolMessage {
        ProtocolMessage {
            round: source.round(),
            sender: self.switch_id,
            entry: self.static_table(source).get_slot(slot),
        }
    }

    fn check_message(&self, msg: &ProtocolMessage, round: Round) -> Result<(), ProtocolError> {
        if msg.round != round {
            return Err(ProtocolError::WrongRound {
                expected: round,
                got: msg.round,
            });
        }
        if msg.sender == self.switch_id {
            return Err(ProtocolError::OwnMessage(self.switch_id));
        }
        if msg.entry.id.is_empty() {
            return Err(ProtocolError::EmptyId);
        }
        Ok(())
    }

    /// Adds a remote count into `sum` if the id is in this switch's snapshot.
    /// Returns whether it matched.
    pub fn handle_aggregation_packet(
        &mut self,
        msg: &ProtocolMessage,
    ) -> Result<bool, ProtocolError> {
        self.expect_phase(RoundPhase::Aggregation)?;
        self.check_message(msg, Round::Aggregation)?;
        self.counters.aggregation_received += 1;

        let mut log = self.start_log(FieldOrder::IdFirst);
        let mut probe = Probe::from_option(log.as_mut());
        let id = msg.entry.id;
        let mut matched = false;
        for vector in 0..self.snapshot.config().vectors() {
            let index = self.snapshot.hash_index(vector, id);
            // sum shares the snapshot's id column
            if self.snapshot.read_id(vector, index, &mut probe) == id {
                let count = self.sum.read_count(vector, index, &mut probe);
                self.sum
                    .write_count(vector, index, count + msg.entry.count, &mut probe);
                matched = true;
                break;
            }
        }
        if matched {
            self.counters.aggregation_matched += 1;
        }
        if log.is_some() {
            self.last_access = log;
        }
        Ok(matched)
    }

    /// Closes the aggregation round, freezes `sum`, and feeds this switch's
    /// own `sum` entries into `g_topk` ahead of any remote ones.
    pub fn end_aggregation(&mut self) -> Result<(), PhaseError> {
        self.expect_phase(RoundPhase::Aggregation)?;
        self.phase = RoundPhase::Consolidation;
        for entry in self.sum.entries() {
            self.counters.consolidation_self_fed += 1;
            self.consolidate(entry);
        }
        Ok(())
    }

    pub fn handle_consolidation_packet(
        &mut self,
        msg: &ProtocolMessage,
    ) -> Result<ConsolidationOutcome, ProtocolError> {
        self.expect_phase(RoundPhase::Consolidation)?;
        self.check_message(msg, Round::Consolidation)?;
        self.counters.consolidation_received += 1;
        Ok(self.consolidate(msg.entry))
    }

    fn consolidate(&mut self, entry: FlowEntry) -> ConsolidationOutcome {
        let mut log = self.start_log(FieldOrder::CountFirst);
        let mut probe = Probe::from_option(log.as_mut());
        let outcome = consolidate_into(&mut self.g_topk, entry, &mut probe);
        match outcome {
            ConsolidationOutcome::Duplicate { .. } => self.counters.duplicates += 1,
            ConsolidationOutcome::Filtered { .. } => self.counters.filtered += 1,
            ConsolidationOutcome::Settled { .. } => {}
        }
        if log.is_some() {
            self.last_access = log;
        }
        outcome
    }

    /// Freezes `g_topk` into `query` and returns to idle.
    pub fn end_consolidation(&mut self) -> Result<(), PhaseError> {
        self.expect_phase(RoundPhase::Consolidation)?;
        self.query.copy_from(&self.g_topk);
        self.phase = RoundPhase::Idle;
        Ok(())
    }

    /// Prepares to receive a finished global table from a cluster
    /// representative: `g_topk` is cleared and the switch enters the
    /// consolidation phase without feeding anything of its own.
    pub fn begin_dissemination(&mut self) -> Result<(), PhaseError> {
        self.expect_phase(RoundPhase::Idle)?;
        self.g_topk.reset();
        self.phase = RoundPhase::Consolidation;
        Ok(())
    }

    /// Looks `id` up in the last completed global table.
    pub fn query_flow(&self, id: FlowId) -> Option<Count> {
        self.query.lookup(id).map(|(_, c)| c)
    }
}

/// Walks one `(id, count)` packet through a count-first table.
///
/// In each vector the counter is read (and possibly overwritten) before the
/// id is touched. A strictly larger count takes the slot and the packet
/// continues with the evicted pair; an equal count falls back to comparing
/// ids, where a larger id swaps and an equal id stops the packet.
pub fn consolidate_into(
    table: &mut MultiVectorTable,
    entry: FlowEntry,
    probe: &mut Probe<'_>,
) -> ConsolidationOutcome {
    let (mut pid, mut pcount) = (entry.id, entry.count);
    for vector in 0..table.config().vectors() {
        let index = table.hash_index(vector, pid);
        let scount = table.read_count(vector, index, probe);
        if pcount > scount {
            table.write_count(vector, index, pcount, probe);
            let sid = table.read_id(vector, index, probe);
            table.write_id(vector, index, pid, probe);
            if sid.is_empty() {
                return ConsolidationOutcome::Settled { vector };
            }
            (pid, pcount) = (sid, scount);
        } else if pcount == scount {
            let sid = table.read_id(vector, index, probe);
            if pid == sid {
                return ConsolidationOutcome::Duplicate { vector };
            }
            if pid > sid {
                table.write_id(vector, index, pid, probe);
                if sid.is_empty() {
                    return ConsolidationOutcome::Settled { vector };
                }
                pid = sid;
            }
        }
    }
    ConsolidationOutcome::Filtered {
        carried: FlowEntry {
            id: pid,
            count: pcount,
        },
    }
}
