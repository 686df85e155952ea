//! Macro control-action reinforcement learning for small-satellite tasking.
//!
//! The crate is organised bottom-up:
//!
//! - [`attmath`]: DCM / MRP / Euler-angle frame mathematics.
//! - [`twinsim`]: the episodic digital twin (orbit, attitude, power, wheels).
//! - [`fswactions`]: macro actions expanded into control programs and
//!   operator scripts.
//! - [`policy`]: the MLP policy/value network and its checkpoint format.
//! - [`ppotrain`]: PPO training with periodic checkpointing.
//! - [`xray`]: input-space sweeps, renders, sanity scenarios.
//! - [`telbridge`]: telemetry ingestion, shadow inference, downlink packing
//!   and hot reload.

pub mod attmath;
pub mod fswactions;
pub mod twinsim;
pub mod policy;
pub mod ppotrain;
pub mod xray;
pub mod telbridge;
