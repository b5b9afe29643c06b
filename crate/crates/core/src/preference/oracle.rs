use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LatentUtility, LinkFunction};
use crate::error::{Error, Result};

/// Stream of the ChaCha generator reserved for comparison draws; stream 0 drives
/// the exploration directions.
pub const ORACLE_STREAM: u64 = 1;

/// Binary comparison outcome. `Current` (+1) means the newer operating point won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Feedback {
    Current,
    Previous,
}

impl Feedback {
    pub fn sign(self) -> f64 {
        match self {
            Feedback::Current => 1.0,
            Feedback::Previous => -1.0,
        }
    }
}

impl TryFrom<i64> for Feedback {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Feedback::Current),
            -1 => Ok(Feedback::Previous),
            other => Err(Error::InvalidFeedback(other)),
        }
    }
}

impl From<Feedback> for i64 {
    fn from(f: Feedback) -> i64 {
        match f {
            Feedback::Current => 1,
            Feedback::Previous => -1,
        }
    }
}

/// Simulated user answering "is the first option better than the second?".
#[derive(Debug, Clone)]
pub struct PreferenceOracle {
    link: LinkFunction,
    utility: LatentUtility,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PreferenceOracle {
    pub fn new(link: LinkFunction, utility: LatentUtility, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ORACLE_STREAM);
        Self {
            link,
            utility,
            seed,
            rng,
        }
    }

    pub fn link(&self) -> LinkFunction {
        self.link
    }

    pub fn utility(&self) -> &LatentUtility {
        &self.utility
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Probability that the first option is preferred.
    pub fn preference_probability(&self, phi_first: f64, phi_second: f64) -> Result<f64> {
        if phi_first.is_nan() || phi_second.is_nan() {
            return Err(Error::NonFiniteUtility);
        }
        Ok(self.link.eval(phi_second - phi_first))
    }

    /// `+1` with probability `sigma(phi_second - phi_first)`.
    pub fn sample_preference(&mut self, phi_first: f64, phi_second: f64) -> Result<Feedback> {
        let p = self.preference_probability(phi_first, phi_second)?;
        // Exactly one uniform draw per query, whatever the link.
        let r: f64 = self.rng.random();
        Ok(if r < p { Feedback::Current } else { Feedback::Previous })
    }

    /// Evaluates both operating points and samples a preference for the first.
    pub fn compare(
        &mut self,
        first: (&DVector<f64>, &DVector<f64>),
        second: (&DVector<f64>, &DVector<f64>),
    ) -> Result<Feedback> {
        let a = self.utility.evaluate(first.0, first.1)?;
        let b = self.utility.evaluate(second.0, second.1)?;
        self.sample_preference(a, b)
    }
}
