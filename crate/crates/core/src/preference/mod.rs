//! User model: latent utilities, link functions and the comparison oracle.

pub mod comfort;
mod link;
mod oracle;
mod utility;

pub use comfort::{optimal_temperature, pmv, ppd, PmvEnvironment};
pub use link::LinkFunction;
pub use oracle::{Feedback, PreferenceOracle, ORACLE_STREAM};
pub use utility::{LatentUtility, ReducedUtility, COMFORT_SEARCH_RANGE};
