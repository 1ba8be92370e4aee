//! Desk-scale toolkit for moving an autoregressive action-token policy from
//! one arm to several.
//!
//! * [`action_codec`]: 7-DoF action discretization and the `7 * N` token contract.
//! * [`dataset`]: JSONL trajectory samples, seeded batching, statistics.
//! * [`scp`]: cross-sampled synthetic multi-robot token targets and their audit.
//! * [`egot`]: typed task graphs: DSL, validation, scheduling, runtime state.
//! * [`sim`]: 2D multi-arm kinematic simulator with six task analogs.
//! * [`toy_policy`]: positional count model for sequence-length behaviour.
//! * [`ablation`]: three-arm ablation runner and report rendering.
//!
//! Numeric code in the codec and the simulator is generic over [`Scalar`]
//! (`f32` or `f64`); the aliases below fix the scalar type.

pub mod ablation;
pub mod action_codec;
pub mod dataset;
pub mod egot;
pub mod scalar;
pub mod scp;
pub mod sim;
pub mod toy_policy;

pub use scalar::Scalar;

pub type ActionVectorF32 = action_codec::ActionVector<f32>;
pub type ActionVectorF64 = action_codec::ActionVector<f64>;
pub type BinningSpecF32 = action_codec::BinningSpec<f32>;
pub type BinningSpecF64 = action_codec::BinningSpec<f64>;
pub type WorldF32 = sim::World<f32>;
pub type WorldF64 = sim::World<f64>;
pub type ScenarioF32 = sim::Scenario<f32>;
pub type ScenarioF64 = sim::Scenario<f64>;
