//! Simulated exactly-once broadcast between switches.
//!
//! Every sender-receiver pair gets a channel that streams entries straight
//! out of the sender's static table (snapshot, sum or query). A dropped
//! message is queued again on its channel and re-read from that table when
//! its turn comes. Each receiver knows how many messages to expect from each
//! sender, so it can tell when a round has finished; the network moves the
//! switch to its next phase at that moment.
//!
//! The event loop is single-threaded and deterministic for a given seed.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, PhaseError};
use crate::flowtable::{FlowEntry, Slot};
use crate::protocol::{Round, RoundPhase, StaticSource, SwitchId, SwitchState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DeliveryOrder {
    /// Round-robin over sender-receiver channels; each channel is FIFO.
    #[default]
    FifoPerPair,
    /// Next message taken from a uniformly chosen non-empty channel.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub drop_probability: f64,
    pub delivery_order: DeliveryOrder,
    pub seed: u64,
    /// Keep a per-event log (see [`TraceEvent`]).
    pub record_events: bool,
    /// Count deliveries per (receiver, sender, round, slot) so exactly-once
    /// delivery can be checked afterwards. Memory is `2 * n^2 * d * s` bytes.
    pub audit_deliveries: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            drop_probability: 0.0,
            delivery_order: DeliveryOrder::FifoPerPair,
            seed: 0,
            record_events: false,
            audit_deliveries: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(ConfigError::DropProbability(self.drop_probability));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Enqueue,
    Drop,
    Deliver,
}

impl EventKind {
    fn label(self) -> &'static str {
        match self {
            EventKind::Enqueue => "ENQ",
            EventKind::Drop => "DROP",
            EventKind::Deliver => "DELIVER",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: u64,
    pub kind: EventKind,
    pub round: Round,
    pub sender: SwitchId,
    pub receiver: SwitchId,
    pub entry: FlowEntry,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.time,
            self.kind.label(),
            self.round.label(),
            self.sender,
            self.receiver,
            self.entry.id.0,
            self.entry.count
        )
    }
}

/// Result of one scheduler step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Delivered(TraceEvent),
    Dropped(TraceEvent),
    /// Nothing in flight.
    Idle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundStats {
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CycleStats {
    pub aggregation: RoundStats,
    pub consolidation: RoundStats,
    pub steps: u64,
    /// Per receiver, the step at which each round completed.
    pub completed_at: Vec<[Option<u64>; 2]>,
}

impl CycleStats {
    /// Protocol messages carried. Drops are only counted on request.
    pub fn messages(&self, include_dropped: bool) -> u64 {
        let mut m = self.aggregation.delivered + self.consolidation.delivered;
        if include_dropped {
            m += self.aggregation.dropped + self.consolidation.dropped;
        }
        m
    }

    pub fn dropped(&self) -> u64 {
        self.aggregation.dropped + self.consolidation.dropped
    }

    pub fn last_completion(&self, round: Round) -> Option<u64> {
        self.completed_at
            .iter()
            .filter_map(|c| c[round.index()])
            .max()
    }
}

/// Expected and delivered message counts per (receiver, sender, round).
#[derive(Clone, Debug)]
pub struct RoundTracker {
    n: usize,
    expected: Vec<Option<u64>>,
    delivered: Vec<u64>,
    participants: Vec<usize>,
    announced: Vec<usize>,
    expected_total: Vec<u64>,
    delivered_total: Vec<u64>,
}

impl RoundTracker {
    fn new(n: usize) -> Self {
        RoundTracker {
            n,
            expected: vec![None; 2 * n * n],
            delivered: vec![0; 2 * n * n],
            participants: vec![0; 2 * n],
            announced: vec![0; 2 * n],
            expected_total: vec![0; 2 * n],
            delivered_total: vec![0; 2 * n],
        }
    }

    fn reset(&mut self) {
        self.expected.fill(None);
        self.delivered.fill(0);
        self.participants.fill(0);
        self.announced.fill(0);
        self.expected_total.fill(0);
        self.delivered_total.fill(0);
    }

    fn pair(&self, receiver: usize, sender: usize, round: Round) -> usize {
        (round.index() * self.n + receiver) * self.n + sender
    }

    fn lane(&self, receiver: usize, round: Round) -> usize {
        round.index() * self.n + receiver
    }

    fn set_participants(&mut self, receiver: usize, round: Round, senders: usize) {
        let lane = self.lane(receiver, round);
        self.participants[lane] = senders;
    }

    fn expect(&mut self, receiver: usize, sender: usize, round: Round, count: u64) {
        let p = self.pair(receiver, sender, round);
        assert!(
            self.expected[p].is_none(),
            "sender {sender} broadcast twice"
        );
        self.expected[p] = Some(count);
        let lane = self.lane(receiver, round);
        self.announced[lane] += 1;
        self.expected_total[lane] += count;
    }

    fn deliver(&mut self, receiver: usize, sender: usize, round: Round) {
        let p = self.pair(receiver, sender, round);
        self.delivered[p] += 1;
        assert!(
            Some(self.delivered[p]) <= self.expected[p],
            "over-delivery to {receiver} from {sender}"
        );
        let lane = self.lane(receiver, round);
        self.delivered_total[lane] += 1;
    }

    pub fn expected(&self, receiver: usize, sender: usize, round: Round) -> Option<u64> {
        self.expected[self.pair(receiver, sender, round)]
    }

    pub fn delivered(&self, receiver: usize, sender: usize, round: Round) -> u64 {
        self.delivered[self.pair(receiver, sender, round)]
    }

    /// All participating senders have announced and every announced message
    /// has arrived.
    pub fn complete(&self, receiver: usize, round: Round) -> bool {
        let lane = self.lane(receiver, round);
        self.announced[lane] == self.participants[lane]
            && self.delivered_total[lane] == self.expected_total[lane]
    }
}

#[derive(Debug)]
struct Channel {
    sender: usize,
    receiver: usize,
    source: StaticSource,
    slots: Arc<[Slot]>,
    next: usize,
    retransmit: VecDeque<Slot>,
}

impl Channel {
    fn take(&mut self) -> Option<Slot> {
        if self.next < self.slots.len() {
            self.next += 1;
            Some(self.slots[self.next - 1])
        } else {
            self.retransmit.pop_front()
        }
    }

    fn is_drained(&self) -> bool {
        self.next >= self.slots.len() && self.retransmit.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Cycle,
    Dissemination,
}

pub struct Network {
    config: NetworkConfig,
    switches: Vec<SwitchState>,
    rng: ChaCha8Rng,
    time: u64,
    mode: Mode,
    channels: Vec<Channel>,
    ready: Vec<usize>,
    parked: Vec<Vec<usize>>,
    cursor: usize,
    tracker: RoundTracker,
    stats: [RoundStats; 2],
    completed_at: Vec<[Option<u64>; 2]>,
    audit: Option<Vec<u8>>,
    events: Vec<TraceEvent>,
}

impl Network {
    pub fn new(config: NetworkConfig, switches: Vec<SwitchState>) -> Result<Self, ConfigError> {
        config.validate()?;
        if switches.is_empty() {
            return Err(ConfigError::NoSwitches);
        }
        let n = switches.len();
        if switches.iter().any(|s| s.config() != switches[0].config()) {
            return Err(ConfigError::Invalid(
                "all switches must share one table configuration".into(),
            ));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Network {
            config,
            switches,
            rng,
            time: 0,
            mode: Mode::Cycle,
            channels: Vec::new(),
            ready: Vec::new(),
            parked: vec![Vec::new(); n],
            cursor: 0,
            tracker: RoundTracker::new(n),
            stats: [RoundStats::default(); 2],
            completed_at: vec![[None; 2]; n],
            audit: None,
            events: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.switches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.switches.is_empty()
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn switches(&self) -> &[SwitchState] {
        &self.switches
    }

    pub fn switches_mut(&mut self) -> &mut [SwitchState] {
        &mut self.switches
    }

    pub fn into_switches(self) -> Vec<SwitchState> {
        self.switches
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn tracker(&self) -> &RoundTracker {
        &self.tracker
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Writes the event log, one `time,event,round,sender,receiver,id,count`
    /// line per event.
    pub fn write_events<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(out, "{e}")?;
        }
        Ok(())
    }

    pub fn in_flight(&self) -> u64 {
        self.channels
            .iter()
            .map(|c| (c.slots.len() - c.next + c.retransmit.len()) as u64)
            .sum()
    }

    pub fn round_complete(&self, receiver: usize, round: Round) -> bool {
        self.tracker.complete(receiver, round)
    }

    fn reset_round_state(&mut self, mode: Mode) {
        self.mode = mode;
        self.channels.clear();
        self.ready.clear();
        self.parked.iter_mut().for_each(Vec::clear);
        self.cursor = 0;
        self.tracker.reset();
        self.stats = [RoundStats::default(); 2];
        self.completed_at.iter_mut().for_each(|c| *c = [None; 2]);
        self.time = 0;
        self.events.clear();
        self.audit = if self.config.audit_deliveries {
            let n = self.switches.len();
            Some(vec![0; 2 * n * n * self.switches[0].config().cells()])
        } else {
            None
        };
    }

    fn record(
        &mut self,
        kind: EventKind,
        round: Round,
        sender: usize,
        receiver: usize,
        entry: FlowEntry,
    ) -> TraceEvent {
        let event = TraceEvent {
            time: self.time,
            kind,
            round,
            sender: self.switches[sender].id(),
            receiver: self.switches[receiver].id(),
            entry,
        };
        if self.config.record_events {
            self.events.push(event);
        }
        event
    }

    /// Opens a cycle: every switch begins (via `begin`), broadcasts its
    /// snapshot, and any round that is already complete is closed.
    pub fn start_cycle_with(
        &mut self,
        mut begin: impl FnMut(usize, &mut SwitchState) -> Result<(), PhaseError>,
    ) -> Result<(), PhaseError> {
        self.reset_round_state(Mode::Cycle);
        let n = self.switches.len();
        for (i, sw) in self.switches.iter_mut().enumerate() {
            begin(i, sw)?;
        }
        for r in 0..n {
            self.tracker.set_participants(r, Round::Aggregation, n - 1);
            self.tracker
                .set_participants(r, Round::Consolidation, n - 1);
        }
        for s in 0..n {
            self.broadcast(s, StaticSource::Snapshot);
        }
        self.settle((0..n).collect());
        Ok(())
    }

    pub fn start_cycle(&mut self) -> Result<(), PhaseError> {
        self.start_cycle_with(|_, sw| sw.begin_cycle())
    }

    /// One full cycle: both rounds on every switch.
    pub fn run_cycle(&mut self) -> Result<CycleStats, PhaseError> {
        self.run_cycle_with(|_, sw| sw.begin_cycle())
    }

    pub fn run_cycle_with(
        &mut self,
        begin: impl FnMut(usize, &mut SwitchState) -> Result<(), PhaseError>,
    ) -> Result<CycleStats, PhaseError> {
        self.start_cycle_with(begin)?;
        self.drain();
        Ok(self.finish())
    }

    /// Pushes the query table of switch `source` to every other switch,
    /// which rebuilds it through its consolidation path and installs it as
    /// its own query table.
    pub fn disseminate(&mut self, source: usize) -> Result<CycleStats, PhaseError> {
        self.reset_round_state(Mode::Dissemination);
        let n = self.switches.len();
        for r in (0..n).filter(|&r| r != source) {
            self.switches[r].begin_dissemination()?;
            self.tracker.set_participants(r, Round::Consolidation, 1);
        }
        self.broadcast(source, StaticSource::Query);
        self.settle((0..n).filter(|&r| r != source).collect());
        self.drain();
        Ok(self.finish())
    }

    fn drain(&mut self) {
        while self.step() != Step::Idle {}
    }

    fn finish(&mut self) -> CycleStats {
        debug_assert!(self.ready.is_empty() && self.parked.iter().all(Vec::is_empty));
        for sw in &self.switches {
            assert_eq!(
                sw.phase(),
                RoundPhase::Idle,
                "switch {} did not finish the cycle",
                sw.id()
            );
        }
        CycleStats {
            aggregation: self.stats[0],
            consolidation: self.stats[1],
            steps: self.time,
            completed_at: self.completed_at.clone(),
        }
    }

    /// Enqueues every non-empty entry of `sender`'s `source` table once for
    /// each other switch. Returns the number of messages enqueued.
    pub fn broadcast(&mut self, sender: usize, source: StaticSource) -> u64 {
        let round = source.round();
        let slots: Arc<[Slot]> = self.switches[sender]
            .static_table(source)
            .occupied()
            .map(|(slot, _)| slot)
            .collect();
        let n = self.switches.len();
        let mut enqueued = 0;
        for receiver in (0..n).filter(|&r| r != sender) {
            self.tracker
                .expect(receiver, sender, round, slots.len() as u64);
            enqueued += slots.len() as u64;
            if self.config.record_events {
                for &slot in slots.iter() {
                    let entry = self.switches[sender].static_table(source).get_slot(slot);
                    self.record(EventKind::Enqueue, round, sender, receiver, entry);
                }
            }
            if slots.is_empty() {
                continue;
            }
            let id = self.channels.len();
            self.channels.push(Channel {
                sender,
                receiver,
                source,
                slots: Arc::clone(&slots),
                next: 0,
                retransmit: VecDeque::new(),
            });
            let eligible = round == Round::Aggregation
                || self.switches[receiver].phase() == RoundPhase::Consolidation;
            if eligible {
                self.ready.push(id);
            } else {
                self.parked[receiver].push(id);
            }
        }
        self.stats[round.index()].enqueued += enqueued;
        enqueued
    }

    /// Moves any switch whose current round just completed into its next
    /// phase, following the knock-on effects of the broadcasts that causes.
    fn settle(&mut self, mut work: Vec<usize>) {
        while let Some(r) = work.pop() {
            match self.switches[r].phase() {
                RoundPhase::Aggregation if self.tracker.complete(r, Round::Aggregation) => {
                    self.switches[r]
                        .end_aggregation()
                        .expect("phase checked above");
                    self.completed_at[r][0] = Some(self.time);
                    let parked = std::mem::take(&mut self.parked[r]);
                    self.ready.extend(parked);
                    if self.mode == Mode::Cycle {
                        self.broadcast(r, StaticSource::Sum);
                        work.extend((0..self.switches.len()).filter(|&o| o != r));
                    }
                    work.push(r);
                }
                RoundPhase::Consolidation if self.tracker.complete(r, Round::Consolidation) => {
                    self.switches[r]
                        .end_consolidation()
                        .expect("phase checked above");
                    self.completed_at[r][1] = Some(self.time);
                }
                _ => {}
            }
        }
    }

    /// Delivers or drops one in-flight message.
    pub fn step(&mut self) -> Step {
        if self.ready.is_empty() {
            return Step::Idle;
        }
        let pos = match self.config.delivery_order {
            DeliveryOrder::Random => self.rng.gen_range(0..self.ready.len()),
            DeliveryOrder::FifoPerPair => self.cursor % self.ready.len(),
        };
        let ch = self.ready[pos];
        let (sender, receiver, source) = {
            let c = &self.channels[ch];
            (c.sender, c.receiver, c.source)
        };
        let slot = self.channels[ch]
            .take()
            .expect("ready channels are non-empty");
        self.time += 1;
        let msg = self.switches[sender].static_message(source, slot);
        let round = msg.round;

        let p = self.config.drop_probability;
        let step = if p > 0.0 && self.rng.gen_bool(p) {
            self.channels[ch].retransmit.push_back(slot);
            self.stats[round.index()].dropped += 1;
            let ev = self.record(EventKind::Drop, round, sender, receiver, msg.entry);
            self.record(EventKind::Enqueue, round, sender, receiver, msg.entry);
            Step::Dropped(ev)
        } else {
            let target = &mut self.switches[receiver];
            match round {
                Round::Aggregation => {
                    target
                        .handle_aggregation_packet(&msg)
                        .expect("aggregation message delivered out of phase");
                }
                Round::Consolidation => {
                    target
                        .handle_consolidation_packet(&msg)
                        .expect("consolidation message delivered out of phase");
                }
            }
            self.tracker.deliver(receiver, sender, round);
            self.stats[round.index()].delivered += 1;
            if let Some(audit) = self.audit.as_mut() {
                let n = self.switches.len();
                let cells = self.switches[0].config().cells();
                let slots = self.switches[0].config().slots();
                let idx = ((round.index() * n + receiver) * n + sender) * cells
                    + slot.vector * slots
                    + slot.index;
                audit[idx] = audit[idx].saturating_add(1);
            }
            Step::Delivered(self.record(EventKind::Deliver, round, sender, receiver, msg.entry))
        };

        if self.channels[ch].is_drained() {
            self.ready.swap_remove(pos);
            self.cursor = pos;
        } else {
            self.cursor = pos + 1;
        }
        if matches!(step, Step::Delivered(_)) {
            self.settle(vec![receiver]);
        }
        step
    }

    /// Checks the delivery audit of the last cycle or dissemination: each
    /// occupied slot of each sender's static table reached each receiver
    /// exactly once per round, and nothing else was delivered.
    ///
    /// Returns `None` when auditing was not enabled.
    pub fn audit_exactly_once(&self) -> Option<Result<u64, String>> {
        let audit = self.audit.as_ref()?;
        let n = self.switches.len();
        let cfg = self.switches[0].config();
        let (cells, slots) = (cfg.cells(), cfg.slots());
        let mut checked = 0u64;
        for round in [Round::Aggregation, Round::Consolidation] {
            for receiver in 0..n {
                for sender in 0..n {
                    let expected = self.tracker.expected(receiver, sender, round);
                    let source = match (round, self.mode) {
                        (Round::Aggregation, _) => StaticSource::Snapshot,
                        (Round::Consolidation, Mode::Cycle) => StaticSource::Sum,
                        (Round::Consolidation, Mode::Dissemination) => StaticSource::Query,
                    };
                    let table = self.switches[sender].static_table(source);
                    let base = ((round.index() * n + receiver) * n + sender) * cells;
                    for off in 0..cells {
                        let got = audit[base + off];
                        let slot = Slot {
                            vector: off / slots,
                            index: off % slots,
                        };
                        let want = u8::from(expected.is_some() && !table.get_slot(slot).is_empty());
                        if got != want {
                            return Some(Err(format!(
                                "{} slot {:?} from {} to {}: delivered {} times, expected {}",
                                round.label(),
                                slot,
                                self.switches[sender].id(),
                                self.switches[receiver].id(),
                                got,
                                want
                            )));
                        }
                        checked += u64::from(want);
                    }
                }
            }
        }
        Some(Ok(checked))
    }
}

/// Messages a lossless flat cycle carries when every switch's snapshot and
/// sum hold `snapshot[i]` and `sum[i]` entries.
pub fn flat_cycle_messages(snapshot: &[usize], sum: &[usize]) -> u64 {
    let peers = snapshot.len().saturating_sub(1) as u64;
    snapshot.iter().chain(sum).map(|&e| e as u64 * peers).sum()
}
