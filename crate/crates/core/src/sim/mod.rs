//! Microscopic simulation of the lane-drop corridor.

pub mod config;
pub mod events;
pub mod following;
pub mod vehicle;
pub mod world;

/// Most lanes a corridor may have.
pub const MAX_LANES: usize = 8;

pub use config::{Behavior, BehaviorParams, Corridor, LinkSpec, SimConfig, VehicleParams};
pub use events::{Event, EventKind};
pub use vehicle::{Vehicle, VehicleClass};
pub use world::{Gate, InvariantViolation, RunOutput, SimError, World};
