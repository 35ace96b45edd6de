//! Parallel and distributed discrete-event simulation with migratable
//! entities.
//!
//! A model is a set of entities exchanging timestamped messages. It runs either
//! on the sequential reference executor ([`sequential`]) or partitioned over
//! logical processes, each on its own thread, synchronized by a time-stepped,
//! conservative or optimistic protocol ([`runtime`]). Both produce a
//! [`digest::TrajectoryDigest`]; equal digests mean equal trajectories.

pub mod behavior;
pub mod digest;
pub mod exec;
pub mod ft;
pub mod ids;
pub mod message;
pub mod migration;
pub mod model;
pub mod placement;
pub mod rng;
pub mod runtime;
pub mod sequential;
pub mod sync;
pub mod transport;

pub use behavior::{Behavior, EntityCtx, Medium, MediumFactory, ModelError};
pub use ids::{EntityId, LpId, NodeId, SeId, VirtualTime};
pub use model::{SimBuilder, Simulation};
pub use runtime::{run_parallel, RunConfig, RunError, RunFailure, RunOutcome};
