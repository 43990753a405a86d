//! Core algorithms for iterative (tour-based) instruction-following navigation.
//!
//! Everything in this crate is pure computation over in-memory values and builds
//! with `no_std` + `alloc`. File formats, the external policy transport and the
//! command line live in the `ivln` crate.
//!
//! Module map:
//!
//! - [`environment`]: navigation graphs, occupancy grids, geodesic queries.
//! - [`tourgen`]: connectivity partitioning, ATSP ordering, instruction expansion.
//! - [`metrics`]: DTW, nDTW, episode-masked tour DTW, t-nDTW and episodic metrics.
//! - [`mapper`]: depth unprojection, semantic occupancy maps, egocentric crops.
//! - [`harness`]: agent/oracle tour rollouts and scripted policies.
//! - [`coverage`]: how much of a tour has been observed before each episode.
//! - [`syngen`]: seeded synthetic floorplans and episode sets.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod coverage;
pub mod environment;
pub mod error;
pub mod geom;
pub mod harness;
pub mod mapper;
pub mod metrics;
pub mod syngen;
pub mod tourgen;

pub use error::{Error, Result};
pub use geom::{Point3, Pose};
