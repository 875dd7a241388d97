//! Small log-space helpers shared by the model, the samplers and the oracles.

use rand::Rng;

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all-`-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn logaddexp(a: f64, b: f64) -> f64 {
    let max = a.max(b);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

/// Draws an index from a vector of unnormalized log-weights.
///
/// Entries equal to `-inf` are never selected. Returns `None` when every
/// weight is `-inf`.
pub fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let total = logsumexp(log_weights);
    if total == f64::NEG_INFINITY {
        return None;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_live = None;
    for (i, &w) in log_weights.iter().enumerate() {
        if w == f64::NEG_INFINITY {
            continue;
        }
        acc += (w - total).exp();
        last_live = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    // rounding left `acc` a hair below 1
    last_live
}

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let xs = [0.1, -2.0, 3.5];
        let direct: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&xs) - direct).abs() < 1e-14);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn logsumexp_survives_large_magnitudes() {
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((logaddexp(-1000.0, -1000.0) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn masked_weights_are_never_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY, 0.0];
        for _ in 0..1000 {
            let i = sample_log_weights(&w, &mut rng).unwrap();
            assert!(i == 1 || i == 3);
        }
        assert_eq!(sample_log_weights(&[f64::NEG_INFINITY], &mut rng), None);
    }

    #[test]
    fn argmax_prefers_smallest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }
}
