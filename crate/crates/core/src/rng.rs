//! Deterministic random streams.
//!
//! Every random decision is drawn from a ChaCha8 generator keyed by the run
//! seed, a domain tag and a counter, with the stream id selecting an
//! independent lane (one lane per datapoint in the E-step).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Data = 1,
    Init = 2,
    Sampling = 3,
    Shuffle = 4,
    Verify = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, domain: Domain, counter: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(domain as u64)) ^ counter)
}

pub fn stream(seed: u64, domain: Domain, counter: u64, lane: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, counter));
    rng.set_stream(lane);
    rng
}
