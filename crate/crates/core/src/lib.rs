//! Trace-driven planning and simulation of expert placement for distributed
//! sparse mixture-of-experts inference.
//!
//! The pipeline is: record a [`trace::RoutingTrace`], build per-layer
//! [`affinity`] statistics, group experts onto GPUs ([`grouping`]), replicate
//! hot experts of overloaded GPUs ([`replication`]), choose a replica per
//! token ([`routing`]) and replay the trace to count transfers and per-GPU
//! load ([`simulator`]). [`pipeline`] ties the stages together with content
//! hashes so results can be compared across runs.

pub mod affinity;
pub mod error;
pub mod grouping;
pub mod hashing;
pub mod pipeline;
pub mod replication;
pub mod rng;
pub mod routing;
pub mod simulator;
pub mod topology;
pub mod trace;

pub use affinity::{AffinityMatrix, ExpertLoadVector, Grouping, LayerProfile};
pub use error::{Error, Result};
pub use grouping::{PlacementPlan, RatioChoice, RatioSelection};
pub use replication::{ReplicaPlan, ReplicationMode};
pub use routing::{PollingWeights, RoutingPolicy, SharePolicy};
pub use simulator::{SimOptions, SimReport};
pub use topology::ClusterTopology;
pub use trace::{ModelShape, RoutingTrace, SyntheticSpec, TraceRecord};
