//! Active acoustic source tracking with a mobile bearing-only sensor.
//!
//! A robot carrying a linear microphone array measures quantized angles of
//! arrival of a moving sound source. The source position is tracked with a
//! SIR particle filter, and the robot chooses its angular-velocity commands
//! with Monte Carlo tree search over particle beliefs, using a particle-based
//! estimate of the negative differential entropy of the belief as reward.
//!
//! Module map:
//!
//! - [`kinematics`]: agent states and the noisy constant-velocity motion model.
//! - [`observation`]: angle-of-arrival geometry, the parameter table and the
//!   quantized-Gaussian measurement model.
//! - [`belief`]: weighted particle sets, SIR updates, systematic resampling and
//!   the entropy reward.
//! - [`model`]: binds the motion and measurement models into the tracking
//!   state-space model consumed by the filter.
//! - [`planner`]: generic Monte Carlo tree search plus the tracking simulator.
//! - [`world`]: ground-truth episodes, room walls and baseline policies.
//! - [`harness`]: configuration, batch experiments, CSV output and the CLI.

pub mod belief;
pub mod error;
pub mod harness;
pub mod kinematics;
pub mod model;
pub mod observation;
pub mod planner;
pub mod world;

pub use error::{Error, Result};

/// Deterministic random stream used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the random stream `stream` of the generator keyed by `seed`.
///
/// Distinct streams of one seed are statistically independent, which lets
/// every consumer inside an episode draw from its own sequence.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
