//! Real-time preference optimization: an online feedback optimization
//! controller that steers a stable plant toward the minimizer of a latent user
//! utility using only pairwise comparisons between consecutive operating points.
//!
//! * [`plant`]: stable LTI plants, steady-state maps and quadratic Lyapunov certificates.
//! * [`preference`]: latent utilities (quadratic tracking, PMV/PPD comfort), link
//!   functions and the Bernoulli comparison oracle.
//! * [`controller`]: the dueling update, closed-loop runner and its baselines.
//! * [`analysis`]: numerical checks of the stability and convergence bounds.
//! * [`harness`]: experiment configuration, builtin studies and result files.

pub mod analysis;
pub mod controller;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod plant;
pub mod preference;

pub use error::{Error, Result};
