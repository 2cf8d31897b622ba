//! Posterior summaries of the stored draws.

use crate::error::{Error, Result};
use crate::gibbs::{DrawStore, StateDraw};

/// Marginal summary of θ at one (observation time, cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    /// Sample SD, divisor `n − 1`.
    pub sd: f64,
    pub pr_positive: f64,
}

/// Posterior mean and central 95% interval of one `ν_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySummary {
    pub mean: [f64; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSummary {
    pub obs_times: usize,
    pub cells: usize,
    /// Indexed `k * cells + i`.
    pub theta: Vec<CellSummary>,
    /// One entry per augmented step `0..=T̃`.
    pub velocity: Vec<VelocitySummary>,
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summaries from the streaming accumulators and the stored velocity paths.
pub fn summarize_states(store: &DrawStore) -> Result<StateSummary> {
    let acc = &store.accumulator;
    if acc.count < 2 || store.velocities.len() < 2 {
        return Err(Error::invalid(format!(
            "summaries need two or more draws, have {} accumulated and {} stored",
            acc.count,
            store.velocities.len()
        )));
    }
    let n = acc.count as f64;
    let theta = (0..acc.mean.len())
        .map(|idx| CellSummary {
            mean: acc.mean[idx],
            sd: (acc.m2[idx] / (n - 1.0)).max(0.0).sqrt(),
            pr_positive: acc.positive[idx] as f64 / n,
        })
        .collect();

    let steps = store.velocities[0].len();
    let draws = store.velocities.len() as f64;
    let mut velocity = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut xs: Vec<f64> = store.velocities.iter().map(|v| v[t].x).collect();
        let mut ys: Vec<f64> = store.velocities.iter().map(|v| v[t].y).collect();
        let mean = [xs.iter().sum::<f64>() / draws, ys.iter().sum::<f64>() / draws];
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        velocity.push(VelocitySummary {
            mean,
            lower: [percentile(&xs, 0.025), percentile(&ys, 0.025)],
            upper: [percentile(&xs, 0.975), percentile(&ys, 0.975)],
        });
    }
    Ok(StateSummary {
        obs_times: acc.obs_times,
        cells: acc.cells,
        theta,
        velocity,
    })
}

/// Batch θ summaries recomputed from stored state slices.
pub fn summarize_draws(draws: &[StateDraw]) -> Result<Vec<CellSummary>> {
    if draws.len() < 2 {
        return Err(Error::invalid("summaries need two or more draws"));
    }
    let times = draws[0].slices.len();
    let cells = draws[0].slices.first().map_or(0, |s| s.cells());
    let n = draws.len() as f64;
    let mut out = Vec::with_capacity(times * cells);
    for k in 0..times {
        for i in 0..cells {
            let vals: Vec<f64> = draws.iter().map(|d| d.slices[k].theta()[i]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let pos = vals.iter().filter(|&&v| v > 0.0).count();
            out.push(CellSummary {
                mean,
                sd: var.sqrt(),
                pr_positive: pos as f64 / n,
            });
        }
    }
    Ok(out)
}
