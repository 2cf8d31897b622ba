//! Likelihoods, DIC, posterior summaries and forecasting.

mod forecast;
mod summary;

pub use forecast::{forecast, ForecastSet, HorizonSummary};
pub use summary::{percentile, summarize_draws, summarize_states, CellSummary, StateSummary, VelocitySummary};

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{CompleteData, Hyperparams, ObsValue, ObservationSet};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log(1 − Φ(x))`, accurate far into the upper tail.
pub fn log_normal_sf(x: f64) -> f64 {
    if x < 26.0 {
        (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills-ratio series; the first omitted term is below 1e−11 here.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2);
        -0.5 * x2 - 0.5 * LN_2PI - x.ln() + series.ln()
    }
}

/// Tobit log-likelihood contribution of one reading with latent mean
/// `mean` and precision `precision`; missing readings contribute zero.
pub fn tobit_log_density(y: ObsValue, mean: f64, precision: f64) -> f64 {
    match y {
        ObsValue::Positive(y) => {
            let r = y - mean;
            0.5 * precision.ln() - 0.5 * LN_2PI - 0.5 * precision * r * r
        }
        ObsValue::Censored => log_normal_sf(precision.sqrt() * mean),
        ObsValue::Missing => 0.0,
    }
}

fn check_slices(theta: &[&[f64]], times: usize, cells: usize) -> Result<()> {
    if theta.len() != times || theta.iter().any(|t| t.len() < cells) {
        return Err(Error::invalid(format!(
            "expected θ at {times} observation times over {cells} cells"
        )));
    }
    Ok(())
}

/// Observed-data (Tobit) log-likelihood of a draw. `theta[k]` is θ at
/// observation time `k`.
pub fn observed_data_loglik(
    theta: &[&[f64]],
    mu_r: f64,
    hyper: &Hyperparams,
    data: &ObservationSet,
) -> Result<f64> {
    let n = data.cells();
    check_slices(theta, data.times(), n)?;
    let mut total = 0.0;
    for (k, th) in theta.iter().enumerate() {
        for (i, &y) in data.radar[k].iter().enumerate() {
            total += tobit_log_density(y, th[i] + mu_r, hyper.phi_r);
        }
        for (g, &y) in data.gauges[k].iter().enumerate() {
            total += tobit_log_density(y, th[data.gauge_cells[g]], hyper.phi_g);
        }
    }
    Ok(total)
}

/// Gaussian log-likelihood of the complete (uncensored) data.
pub fn complete_data_loglik(
    theta: &[&[f64]],
    mu_r: f64,
    hyper: &Hyperparams,
    gauge_cells: &[usize],
    complete: &CompleteData,
) -> Result<f64> {
    let times = complete.times();
    let n = complete.values.first().map_or(0, |r| r.len() - gauge_cells.len());
    check_slices(theta, times, n)?;
    let mut total = 0.0;
    for (k, row) in complete.values.iter().enumerate() {
        for (r, y) in row.iter().enumerate() {
            let Some(y) = y else { continue };
            let (mean, phi) = if r < n {
                (theta[k][r] + mu_r, hyper.phi_r)
            } else {
                (theta[k][gauge_cells[r - n]], hyper.phi_g)
            };
            total += tobit_log_density(ObsValue::Positive(*y), mean, phi);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicResult {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
}

/// DIC with `p_D` taken as twice the sample variance (divisor `n − 1`) of
/// the log-likelihood trace.
pub fn dic(loglik: &[f64]) -> Result<DicResult> {
    let n = loglik.len();
    if n < 2 {
        return Err(Error::invalid(format!("DIC needs at least two draws, got {n}")));
    }
    let mean = loglik.iter().sum::<f64>() / n as f64;
    let var = loglik.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let p_d = 2.0 * var;
    let mean_deviance = -2.0 * mean;
    Ok(DicResult {
        dic: mean_deviance + p_d,
        p_d,
        mean_deviance,
    })
}

#[cfg(test)]
mod tests;
