//! Synthetic traces, the per-switch stream splitter, and the exact top-k
//! oracle used as ground truth.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{ConfigError, Error};
use crate::flowtable::{seeded_hash, Count, FlowEntry, FlowId};

/// A packet trace: one flow id per packet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub packets: Vec<FlowId>,
    /// Size of the flow-id universe the trace was drawn from.
    pub num_flows: u32,
}

impl Trace {
    pub fn new(packets: Vec<FlowId>, num_flows: u32) -> Result<Self, ConfigError> {
        if packets.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::Invalid("trace contains flow id 0".into()));
        }
        Ok(Trace { packets, num_flows })
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

/// Draws `num_packets` packets whose flow ranks follow a Zipf law with
/// exponent `a` over `num_flows` flows. Rank `r` maps to a seeded
/// permutation of `1..=num_flows`.
pub fn gen_zipf(
    a: f64,
    num_packets: usize,
    num_flows: u32,
    seed: u64,
) -> Result<Trace, ConfigError> {
    if a <= 0.0 || a.is_nan() {
        return Err(ConfigError::Invalid(format!(
            "zipf exponent must be positive, got {a}"
        )));
    }
    if num_flows == 0 || num_flows == u32::MAX {
        return Err(ConfigError::Invalid(format!(
            "flow count must lie in 1..{}, got {num_flows}",
            u32::MAX
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<FlowId> = (1..=num_flows).map(FlowId).collect();
    ids.shuffle(&mut rng);

    let zipf =
        Zipf::new(num_flows as u64, a).map_err(|e| ConfigError::Invalid(format!("zipf: {e}")))?;
    let packets = (0..num_packets)
        .map(|_| {
            let rank = zipf.sample(&mut rng) as usize;
            ids[rank - 1]
        })
        .collect();
    Ok(Trace { packets, num_flows })
}

/// How packets are spread over switches.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub k: usize,
    pub switches: usize,
    /// Probability that a packet of a non-top-k flow goes to the flow's home
    /// switch rather than a uniformly chosen one.
    pub affinity: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn home(&self, id: FlowId) -> usize {
        let key = (self.seed ^ (self.seed >> 32)) as u32;
        seeded_hash(key, id.0) as usize % self.switches
    }
}

/// Splits a trace into one packet sequence per switch. Packets of the true
/// top-k flows are spread uniformly; every other flow prefers its home
/// switch with probability `affinity`. Order is preserved within each
/// output.
pub fn split_stream(trace: &Trace, plan: &SplitPlan) -> Result<Vec<Vec<FlowId>>, ConfigError> {
    if plan.switches == 0 {
        return Err(ConfigError::NoSwitches);
    }
    if plan.k as u64 > trace.num_flows as u64 {
        return Err(ConfigError::Invalid(format!(
            "k = {} exceeds the {} flows in the trace",
            plan.k, trace.num_flows
        )));
    }
    if !(0.0..=1.0).contains(&plan.affinity) {
        return Err(ConfigError::Invalid(format!(
            "affinity must lie in [0, 1], got {}",
            plan.affinity
        )));
    }
    let top: HashSet<FlowId> = exact_topk(&trace.packets, plan.k)
        .into_iter()
        .map(|e| e.id)
        .collect();
    let n = plan.switches;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = vec![Vec::with_capacity(trace.len() / n + 1); n];
    for &id in &trace.packets {
        let target = if top.contains(&id) {
            rng.gen_range(0..n)
        } else if plan.affinity >= 1.0 || rng.gen_bool(plan.affinity) {
            plan.home(id)
        } else {
            rng.gen_range(0..n)
        };
        out[target].push(id);
    }
    Ok(out)
}

pub fn exact_counts<'a>(packets: impl IntoIterator<Item = &'a FlowId>) -> HashMap<FlowId, Count> {
    let mut counts = HashMap::new();
    for &id in packets {
        *counts.entry(id).or_insert(0) += 1;
    }
    counts
}

/// The `k` heaviest flows from a tally, heaviest first; ties go to the
/// larger id.
pub fn topk_from_counts(counts: &HashMap<FlowId, Count>, k: usize) -> Vec<FlowEntry> {
    let mut all: Vec<FlowEntry> = counts
        .iter()
        .map(|(&id, &count)| FlowEntry { id, count })
        .collect();
    all.sort_unstable_by_key(|e| std::cmp::Reverse(e.rank_key()));
    all.truncate(k);
    all
}

/// Exact top-k by full tally.
pub fn exact_topk(packets: &[FlowId], k: usize) -> Vec<FlowEntry> {
    topk_from_counts(&exact_counts(packets), k)
}

const MAGIC: &[u8; 4] = b"NTRC";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum TraceFormatError {
    #[error("bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("truncated: expected {expected} packets, read {got}")]
    Truncated { expected: u64, got: u64 },
    #[error("trailing bytes after the last packet")]
    Trailing,
    #[error("packet {0} carries the reserved flow id 0")]
    EmptyId(u64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes `NTRC | version u8 | num_flows u32 | num_packets u64 | ids u32...`,
/// all little-endian.
pub fn write_trace_to<W: Write>(trace: &Trace, mut out: W) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    header[4] = VERSION;
    header[5..9].copy_from_slice(&trace.num_flows.to_le_bytes());
    header[9..17].copy_from_slice(&(trace.packets.len() as u64).to_le_bytes());
    out.write_all(&header)?;
    for chunk in trace.packets.chunks(1 << 14) {
        let bytes: Vec<u8> = chunk.iter().flat_map(|id| id.0.to_le_bytes()).collect();
        out.write_all(&bytes)?;
    }
    out.flush()
}

pub fn read_trace_from<R: Read>(mut input: R) -> Result<Trace, TraceFormatError> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header)?;
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(TraceFormatError::Magic(magic));
    }
    if header[4] != VERSION {
        return Err(TraceFormatError::Version(header[4]));
    }
    let num_flows = u32::from_le_bytes(header[5..9].try_into().unwrap());
    let num_packets = u64::from_le_bytes(header[9..17].try_into().unwrap());

    let mut packets = Vec::with_capacity(num_packets.min(1 << 28) as usize);
    let mut buf = vec![0u8; 4 << 14];
    let mut remaining = num_packets;
    while remaining > 0 {
        let want = (remaining.min(1 << 14) * 4) as usize;
        let mut filled = 0;
        while filled < want {
            let got = input.read(&mut buf[filled..want])?;
            if got == 0 {
                return Err(TraceFormatError::Truncated {
                    expected: num_packets,
                    got: packets.len() as u64 + (filled / 4) as u64,
                });
            }
            filled += got;
        }
        for word in buf[..want].chunks_exact(4) {
            let id = u32::from_le_bytes(word.try_into().unwrap());
            if id == 0 {
                return Err(TraceFormatError::EmptyId(packets.len() as u64));
            }
            packets.push(FlowId(id));
        }
        remaining -= (want / 4) as u64;
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(TraceFormatError::Trailing);
    }
    Ok(Trace { packets, num_flows })
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(trace, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Trace, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace_from(BufReader::new(file)).map_err(|e| match e {
        TraceFormatError::Io(source) => Error::io(path, source),
        other => Error::TraceFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}
