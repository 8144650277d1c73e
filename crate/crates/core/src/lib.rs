//! UWB HRP double-sided two-way ranging simulator: baseband PHY, channel,
//! leading-edge receiver, Ghost Peak adversary, counter-synchronized
//! time-hopping defense, CIR-based attack detection, closed-form attack
//! probabilities and a Monte Carlo harness.

// Negated float comparisons double as NaN rejection in validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod analytics;
pub mod channel;
pub mod detection;
pub mod error;
pub mod harness;
pub mod phy;
pub mod protocol;
pub mod receiver;
pub mod seed;

pub use adversary::{AttackConfig, AttackTarget};
pub use analytics::AnalyticParams;
pub use channel::ChannelConfig;
pub use detection::DetectionConfig;
pub use error::{Error, Result};
pub use harness::{CellKey, CellResult, Execution, ExperimentConfig};
pub use phy::{PacketConfig, StsCounterState, StsSequence};
pub use protocol::{ModePolicy, ProtocolConfig, RangingMode, TrialRecord};
pub use receiver::{CirSpectrum, ReceiverConfig};
