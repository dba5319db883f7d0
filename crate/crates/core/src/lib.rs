//! In-network top-k flow detection: per-switch multi-vector tables kept by a
//! probabilistic-replacement sketch, merged network-wide by a two-round
//! exchange that leaves every switch with the same global table.

pub mod cluster;
pub mod error;
pub mod experiment;
pub mod flowtable;
pub mod invariants;
pub mod precision;
pub mod protocol;
pub mod transport;
pub mod workload;

pub use error::{ConfigError, Error, PhaseError, Result};
pub use flowtable::{Count, FieldOrder, FlowEntry, FlowId, MultiVectorTable, Slot, TableConfig};
pub use precision::LocalTopK;
pub use protocol::{ProtocolError, Round, RoundPhase, SwitchId, SwitchState};
pub use transport::{DeliveryOrder, Network, NetworkConfig};
pub use workload::Trace;
