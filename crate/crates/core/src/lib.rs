//! Filtered expectation-maximization on a synthetic latent-rationale task.
//!
//! The crate is organised bottom-up:
//!
//! * [`seqmodel`]: the tabular policy `π(z, y | x; θ)`, its likelihood,
//!   score function, sampling and greedy decoding.
//! * [`taskgen`]: the modular prefix-sum task and its binary reward.
//! * [`samplers`]: rationale proposals: rejection sampling with a budget,
//!   exact posterior sampling by backward messages, hint-conditioned
//!   sampling and the two-stage self-taught scheme.
//! * [`trainer`]: the filtered EM loop and its metrics.
//! * [`oracle`]: brute-force and analytic references used to verify all of
//!   the above.

pub mod error;
pub mod numeric;
pub mod oracle;
pub mod rng;
pub mod samplers;
pub mod seqmodel;
pub mod taskgen;
pub mod trainer;

pub use error::{Error, Result};
