//! Fire-station siting toolkit.
//!
//! The pipeline predicts per-property demand probability with a random
//! forest, scores service quality against existing stations from road
//! travel times, clusters poorly served properties with a travel-time
//! DBSCAN to propose candidate sites, and picks among the candidates with
//! a weighted maximum-coverage solver and an epsilon-greedy reward
//! simulation.

pub mod clustering;
pub mod coverage;
pub mod demand;
mod error;
pub mod geodata;
pub mod pipeline;
pub mod sqi;
pub mod stochastic;

pub use error::{Error, Result};

/// Identifier of a property (parcel) row.
pub type PropertyId = u64;
/// Identifier of a road-network node.
pub type NodeId = u64;
