//! Age of Information at the receivers of a single-source multicast
//! network, where each update is stopped once a chosen set of
//! acknowledgements arrives.
//!
//! - [`delay`]: link delay laws, seeded streams, harmonic numbers and
//!   order-statistic moments.
//! - [`analytics`]: closed-form ages for wait-for-all, earliest-k and
//!   pre-selected-k stopping, and the age-minimizing threshold.
//! - [`sim`]: round-based Monte Carlo simulation of the age sawtooth.
//! - [`experiments`]: sweep tables and the simulation-versus-theory grid.

pub mod analytics;
pub mod delay;
pub mod error;
pub mod experiments;
pub mod sim;

pub use analytics::{AgeResult, Kind, Scheme};
pub use delay::{DelayModel, OrderStatMoments, RandomStream};
pub use error::{Error, Result};
pub use sim::{Regroup, SimConfig, SimResult, StoppingPolicy};
