//! Behavioral simulator of a FeFET array that acts as a content-addressable
//! memory for top-k key selection, as a charge-domain accumulator for
//! eviction and as a current-domain multiply-accumulate engine for exact
//! attention scores.
//!
//! The core is generic over the scalar type; `f64` aliases are exported at
//! the crate root.

pub mod array;
pub mod cam;
pub mod charge;
pub mod cost;
pub mod device;
pub mod error;
pub mod events;
pub mod mac;
pub mod order;
pub mod pipeline;
pub mod pruning;
pub mod scalar;
pub mod snapshot;

pub use error::{Result, SimError};
pub use scalar::Scalar;

pub type DeviceParams = device::DeviceParams<f64>;
pub type ArrayConfig = array::ArrayConfig<f64>;
pub type CamCimArray = array::CamCimArray<f64>;
pub type RaceConfig = cam::RaceConfig<f64>;
pub type ChargeConfig = charge::ChargeConfig<f64>;
pub type AdcConfig = mac::AdcConfig<f64>;
pub type EventLog = events::EventLog<f64>;
pub type PruneConfig = pruning::PruneConfig<f64>;
pub type AttentionTrace = pruning::AttentionTrace<f64>;
pub type KvCacheState = pruning::KvCacheState<f64>;
pub type PipelineConfig = pipeline::PipelineConfig<f64>;
pub type CostParams = cost::CostParams<f64>;
pub type CostReport = cost::CostReport<f64>;
