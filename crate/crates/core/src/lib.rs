//! First-in-first-match spatial matching with reneging.
//!
//! Red and blue particles arrive as a space-time Poisson process. An arrival
//! is matched to the earliest present particle of the opposite colour within
//! the interaction radius; otherwise it joins the queue and reneges after an
//! exponential patience. The crate provides exact simulation, perfect
//! sampling by coupling from the past, the stationary product-form densities,
//! the finite customer/server chain with its local-balance verification, and
//! checks of the positive-association inequalities.

pub mod analytics;
pub mod bipartite;
pub mod cftp;
pub mod error;
mod engine;
pub mod euclid;
pub mod fifm;
pub mod fkg;
pub mod intervals;
pub mod par;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod space;
pub mod suite;

pub use error::{FifmError, Result};
pub use fifm::{DetailedItem, DetailedState, Mark, MatchOutcome, OrderedConfiguration, Particle};
pub use space::{Color, FiniteTypes, MarkedPoint, MeasureValue, Point, Space, SpaceKind};
pub use simulator::ModelParams;
