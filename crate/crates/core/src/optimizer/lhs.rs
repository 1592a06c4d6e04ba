use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng_for;

/// RNG stream used for the initial design.
pub(crate) const LHS_STREAM: u64 = 0;
/// RNG stream used by [`random_search_baseline`].
pub(crate) const RANDOM_SEARCH_STREAM: u64 = 1;

/// `n` Latin hypercube points in `[0,1)^d`: along every axis each of the `n`
/// strata `[k/n, (k+1)/n)` holds exactly one point.
pub fn lhs_sample(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, LHS_STREAM);
    lhs_with(n, d, &mut rng)
}

pub(crate) fn lhs_with(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let width = 1.0 / n as f64;
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for (i, &k) in perm.iter().enumerate() {
            let lo = k as f64 * width;
            let hi = ((k + 1) as f64 * width).next_down();
            let u: f64 = rng.random();
            points[i][j] = (lo + u * width).clamp(lo, hi);
        }
    }
    points
}

/// Uniform i.i.d. points in `[0,1)^d`.
pub fn random_search_baseline(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, RANDOM_SEARCH_STREAM);
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}
