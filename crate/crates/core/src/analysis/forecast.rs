//! Predictive simulation from posterior draws.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gibbs::TerminalDraw;
use crate::lattice::{Lattice, Velocity};
use crate::model::{assemble_dlm, Hyperparams, StateVector};
use crate::rng::{tag, SeedStream};

/// Summary of θ across draws at one forecast step.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSummary {
    /// Augmented steps ahead of the last observation, from 1.
    pub step: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub pr_positive: Vec<f64>,
    /// Mean rain rate in mm/h, with negative intensities read as no rain.
    pub rate_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    /// Horizon in observation steps.
    pub horizon: usize,
    pub t_tilde: usize,
    /// θ per draw per augmented step, when requested.
    pub paths: Option<Vec<Vec<Vec<f64>>>>,
    pub summaries: Vec<HorizonSummary>,
}

fn simulate_one(
    draw: &TerminalDraw,
    hyper: &Hyperparams,
    lattice: &Lattice,
    steps: usize,
    seed: SeedStream,
) -> Result<Vec<Vec<f64>>> {
    let dlm = assemble_dlm(draw.params, *hyper, lattice, &[])?;
    let n = lattice.cells();
    let (wt, ws) = dlm.w_diag();
    let (sd_t, sd_s, sd_v) = (wt.sqrt(), ws.sqrt(), hyper.velocity_innovation_var().sqrt());
    let mut rng = seed.rng();
    let mut x = draw.state.clone();
    let mut nu = draw.velocity;
    let mut next = StateVector::zeros(n);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        dlm.propagate(lattice, nu, &x.0, &mut next.0);
        {
            let (theta, source) = next.split_mut();
            for v in theta.iter_mut() {
                *v += sd_t * rng.sample::<f64, _>(StandardNormal);
            }
            for v in source.iter_mut() {
                *v += sd_s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        nu = Velocity::new(
            hyper.alpha_nu * nu.x + sd_v * rng.sample::<f64, _>(StandardNormal),
            hyper.alpha_nu * nu.y + sd_v * rng.sample::<f64, _>(StandardNormal),
        );
        std::mem::swap(&mut x, &mut next);
        out.push(x.theta().to_vec());
    }
    Ok(out)
}

/// Draws simulated concurrently before their results are folded in.
const CHUNK: usize = 64;

fn simulate_chunk(
    draws: &[TerminalDraw],
    first: usize,
    hyper: &Hyperparams,
    lattice: &Lattice,
    steps: usize,
    root: SeedStream,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let run = |(d, draw): (usize, &TerminalDraw)| {
        simulate_one(draw, hyper, lattice, steps, root.derive((first + d) as u64))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        draws.par_iter().enumerate().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        draws.iter().enumerate().map(run).collect()
    }
}

/// Runs the model forward `horizon (t̃ + 1)` augmented steps from each
/// draw's terminal state with fresh innovations and summarises every step.
pub fn forecast(
    draws: &[TerminalDraw],
    horizon: usize,
    hyper: &Hyperparams,
    lattice: &Lattice,
    seed: u64,
    keep_paths: bool,
) -> Result<ForecastSet> {
    if horizon < 1 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    if draws.len() < 2 {
        return Err(Error::invalid("forecast summaries need two or more draws"));
    }
    if let Some(d) = draws.iter().find(|d| d.state.cells() != lattice.cells()) {
        return Err(Error::invalid(format!(
            "draw state has {} cells, lattice has {}",
            d.state.cells(),
            lattice.cells()
        )));
    }
    let steps = horizon * (hyper.t_tilde + 1);
    let n = lattice.cells();
    let root = SeedStream::new(seed).derive(tag::FORECAST_DRAW);
    // Welford moments folded in draw order.
    let mut mean = vec![vec![0.0; n]; steps];
    let mut m2 = vec![vec![0.0; n]; steps];
    let mut pos = vec![vec![0u64; n]; steps];
    let mut rate = vec![vec![0.0; n]; steps];
    let mut kept = keep_paths.then(Vec::new);
    let mut seen = 0.0;
    for (c, chunk) in draws.chunks(CHUNK).enumerate() {
        let paths = simulate_chunk(chunk, c * CHUNK, hyper, lattice, steps, root)?;
        for path in paths {
            seen += 1.0;
            for (s, theta) in path.iter().enumerate() {
                for (i, &v) in theta.iter().enumerate() {
                    let delta = v - mean[s][i];
                    mean[s][i] += delta / seen;
                    m2[s][i] += delta * (v - mean[s][i]);
                    if v > 0.0 {
                        pos[s][i] += 1;
                        rate[s][i] += v.exp_m1();
                    }
                }
            }
            if let Some(k) = kept.as_mut() {
                k.push(path);
            }
        }
    }
    let summaries = (0..steps)
        .map(|s| HorizonSummary {
            step: s + 1,
            mean: mean[s].clone(),
            sd: m2[s].iter().map(|v| (v / (seen - 1.0)).max(0.0).sqrt()).collect(),
            pr_positive: pos[s].iter().map(|&c| c as f64 / seen).collect(),
            rate_mean: rate[s].iter().map(|r| r / seen).collect(),
        })
        .collect();
    Ok(ForecastSet {
        horizon,
        t_tilde: hyper.t_tilde,
        paths: kept,
        summaries,
    })
}
