//! Nonparametric density estimation and simulation for trajectory data.
//!
//! Tracks are embedded with a diffusion map, a k-nearest-neighbour kernel
//! density is fitted and sampled in diffusion space, and samples are mapped
//! back to tracks by a pre-image search. A nearest-neighbour two-sample
//! statistic checks simulated sets against the observed one.

pub mod cde;
pub mod density;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod io;
pub mod pipeline;
pub mod preimage;
pub mod rng;
pub mod stats;
pub mod trackdata;
pub mod validation;

pub use diffusion::{DiffusionModel, EmbeddedPoint};
pub use error::{Error, Result};
pub use exec::Exec;
pub use trackdata::{RawTrack, RegularTrack, TrackSet};
