//! Truncated Gaussian draws that stay stable far in the tails.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// Width below which a two-sided interval straddling zero is sampled by
/// uniform rejection instead of normal rejection.
const STRADDLE_WIDTH: f64 = 2.0;

/// Draws from `N(mean, 1/precision)` restricted to `(lower, upper)`.
///
/// Works on the standardised interval: plain normal rejection when it holds
/// plenty of mass, uniform rejection on short intervals, and an exponential
/// proposal (rate `(a + √(a² + 4)) / 2`) in one-sided tails, so intervals
/// any number of SDs from the mean are handled without loss of precision.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    precision: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(precision > 0.0) || mean.is_nan() {
        return Err(Error::invalid(format!(
            "truncated normal needs a finite mean and positive precision, got ({mean}, {precision})"
        )));
    }
    if !(lower < upper) {
        return Err(Error::invalid(format!(
            "empty truncation interval ({lower}, {upper})"
        )));
    }
    if precision.is_infinite() {
        return Ok(mean.clamp(lower, upper));
    }
    let sd = precision.sqrt().recip();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = standard_truncated(a, b, rng);
    Ok((mean + sd * z).clamp(lower, upper))
}

fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        return upper_tail(a, b, rng);
    }
    if b <= 0.0 {
        return -upper_tail(-b, -a, rng);
    }
    // a < 0 < b
    if b - a >= STRADDLE_WIDTH {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a && z < b {
                return z;
            }
        }
    }
    loop {
        let z = rng.gen_range(a..b);
        if rng.gen::<f64>() <= (-0.5 * z * z).exp() {
            return z;
        }
    }
}

/// `0 ≤ a < b ≤ ∞`.
fn upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    if lambda * (b - a) < 1.0 {
        loop {
            let z = rng.gen_range(a..b);
            if rng.gen::<f64>() <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = a + e / lambda;
        if z >= b {
            continue;
        }
        let d = z - lambda;
        if rng.gen::<f64>() <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}
