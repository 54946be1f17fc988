//! Dual-scale navigation over a sparse spatial memory graph.
//!
//! The crate splits into layers that mirror the navigation stack:
//!
//! - [`features`] / [`geometry`]: embeddings, token grids, poses, and the
//!   similarity/pooling primitives everything else consumes.
//! - [`simworld`]: a deterministic synthetic 2D world with a latent
//!   appearance field, object instances, ray-cast observation rendering,
//!   tour generation, dynamic obstacle injection, and a geodesic oracle.
//! - [`smg`]: construction of the sparse spatial memory graph from a tour
//!   (farthest-point node sampling, keyframe selection, object
//!   aggregation, temporal-adjacency edges) plus persistence.
//! - [`retrieval`]: two-stage image-to-instance hybrid node retrieval and
//!   the confidence score used by the planning loop.
//! - [`planner`]: A* node-level path planning with blocked-edge replanning.
//! - [`policy`]: the node-to-node local controller with point-goal and
//!   image-goal modes and the geometry-fusion adapter.
//! - [`episode`]: the dual-frequency planning loop, SR/SPL metrics, and
//!   benchmark orchestration.
//! - [`config`]: the single defaults table and TOML config loading.

pub mod config;
pub mod episode;
pub mod error;
pub mod features;
pub mod geometry;
pub mod planner;
pub mod policy;
pub mod retrieval;
pub mod rng;
pub mod simworld;
pub mod smg;

pub use error::Error;
