//! Forward simulation of the generative model.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Velocity};
use crate::model::{
    assemble_dlm, Hyperparams, ObsValue, ObservationSet, Priors, StateVector, StaticParams,
    TimeGrid,
};
use crate::rng::{tag, SeedStream};

/// Latent paths over the augmented time axis, `T̃ + 1` slices each.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPath {
    pub states: Vec<StateVector>,
    pub velocities: Vec<Velocity>,
}

/// Everything a synthetic-data study needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub path: SystemPath,
    /// Uncensored observations per observation time, radar then gauges.
    pub complete: Vec<Vec<f64>>,
    pub observed: ObservationSet,
}

/// Size of a synthetic scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub n: usize,
    pub gauges: usize,
    pub obs_times: usize,
}

impl Scenario {
    /// Full-size study: 72×72 lattice, 15 gauges, 72 observation times.
    pub const FULL: Scenario = Scenario {
        n: 72,
        gauges: 15,
        obs_times: 72,
    };
    /// Desk-scale variant used in tests.
    pub const DESK: Scenario = Scenario {
        n: 16,
        gauges: 5,
        obs_times: 24,
    };
}

#[inline]
fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulates `x_{0:T̃}` and `ν_{0:T̃}`: initial values from the priors, then
/// the θ, S and ν recursions with Gaussian innovations.
pub fn simulate_system(
    params: &StaticParams,
    hyper: &Hyperparams,
    priors: &Priors,
    lattice: &Lattice,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SystemPath> {
    run_system(params, hyper, priors, lattice, grid, seed, None)
}

/// As [`simulate_system`], with the velocity held at `nu` throughout.
pub fn simulate_system_with_velocity(
    params: &StaticParams,
    hyper: &Hyperparams,
    priors: &Priors,
    lattice: &Lattice,
    grid: &TimeGrid,
    nu: Velocity,
    seed: u64,
) -> Result<SystemPath> {
    run_system(params, hyper, priors, lattice, grid, seed, Some(nu))
}

fn run_system(
    params: &StaticParams,
    hyper: &Hyperparams,
    priors: &Priors,
    lattice: &Lattice,
    grid: &TimeGrid,
    seed: u64,
    fixed: Option<Velocity>,
) -> Result<SystemPath> {
    params.validate()?;
    hyper.validate()?;
    priors.validate()?;
    let dlm = assemble_dlm(*params, *hyper, lattice, &[])?;
    let n = lattice.cells();
    let root = SeedStream::new(seed).derive(tag::SIM_STATE);

    let mut rng = root.derive(0).rng();
    let mut x0 = StateVector::zeros(n);
    {
        let (theta, source) = x0.split_mut();
        let sd = priors.theta0.var.sqrt();
        for v in theta.iter_mut() {
            *v = priors.theta0.mean + params.mu + sd * normal(&mut rng);
        }
        let sd = priors.source0.var.sqrt();
        for v in source.iter_mut() {
            *v = priors.source0.mean + sd * normal(&mut rng);
        }
    }
    let nu_sd = priors.nu0.var.sqrt();
    let nu0 = fixed.unwrap_or_else(|| {
        Velocity::new(
            priors.nu0.mean + nu_sd * normal(&mut rng),
            priors.nu0.mean + nu_sd * normal(&mut rng),
        )
    });

    let steps = grid.augmented_len();
    let mut states = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    states.push(x0);
    velocities.push(nu0);

    let theta_sd = hyper.theta_innovation_var().sqrt();
    let source_sd = hyper.source_innovation_var().sqrt();
    let vel_sd = hyper.velocity_innovation_var().sqrt();
    for t in 1..=steps {
        let mut rng = root.derive(t as u64).rng();
        let prev_nu = velocities[t - 1];
        let mut next = StateVector::zeros(n);
        dlm.propagate(lattice, prev_nu, &states[t - 1].0, &mut next.0);
        {
            let (theta, source) = next.split_mut();
            for v in theta.iter_mut() {
                *v += theta_sd * normal(&mut rng);
            }
            for v in source.iter_mut() {
                *v += source_sd * normal(&mut rng);
            }
        }
        let nu = fixed.unwrap_or_else(|| {
            Velocity::new(
                hyper.alpha_nu * prev_nu.x + vel_sd * normal(&mut rng),
                hyper.alpha_nu * prev_nu.y + vel_sd * normal(&mut rng),
            )
        });
        states.push(next);
        velocities.push(nu);
    }
    Ok(SystemPath { states, velocities })
}

/// Draws complete radar/gauge observations at each observation time and
/// censors them at zero.
pub fn simulate_observations(
    path: &SystemPath,
    params: &StaticParams,
    hyper: &Hyperparams,
    grid: &TimeGrid,
    gauge_cells: &[usize],
    gauge_ids: Vec<String>,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, ObservationSet)> {
    if path.states.len() < grid.path_len() {
        return Err(Error::invalid(format!(
            "state path has {} slices, time grid needs {}",
            path.states.len(),
            grid.path_len()
        )));
    }
    let n = path.states[0].cells();
    let root = SeedStream::new(seed).derive(tag::SIM_OBS);
    let radar_sd = (1.0 / hyper.phi_r).sqrt();
    let gauge_sd = (1.0 / hyper.phi_g).sqrt();

    let mut complete = Vec::with_capacity(grid.obs_times());
    let mut radar = Vec::with_capacity(grid.obs_times());
    let mut gauges = Vec::with_capacity(grid.obs_times());
    for k in 0..grid.obs_times() {
        let theta = path.states[grid.augmented_index(k)].theta();
        let mut rng = root.derive(k as u64).rng();
        let mut y = Vec::with_capacity(n + gauge_cells.len());
        for &th in theta {
            y.push(th + params.mu_r + radar_sd * normal(&mut rng));
        }
        for &cell in gauge_cells {
            y.push(theta[cell] + gauge_sd * normal(&mut rng));
        }
        radar.push(y[..n].iter().map(|&v| ObsValue::from_transformed(v)).collect());
        gauges.push(y[n..].iter().map(|&v| ObsValue::from_transformed(v)).collect());
        complete.push(y);
    }
    let observed = ObservationSet::new(n, radar, gauge_ids, gauge_cells.to_vec(), gauges)?;
    Ok((complete, observed))
}

/// Distinct gauge cells chosen uniformly at random.
pub fn place_gauges(cells: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > cells {
        return Err(Error::invalid(format!(
            "cannot place {count} gauges on {cells} distinct cells"
        )));
    }
    let mut rng = SeedStream::new(seed).derive(tag::SIM_GAUGES).rng();
    let mut chosen = sample(&mut rng, cells, count).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Runs the full generative model: gauge placement, system, observations.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    params: &StaticParams,
    hyper: &Hyperparams,
    priors: &Priors,
    lattice: &Lattice,
    grid: &TimeGrid,
    gauge_count: usize,
    seed: u64,
) -> Result<SimulationOutput> {
    let gauge_cells = place_gauges(lattice.cells(), gauge_count, seed)?;
    let ids = (0..gauge_count).map(|g| format!("g{:02}", g + 1)).collect();
    let path = simulate_system(params, hyper, priors, lattice, grid, seed)?;
    let (complete, observed) =
        simulate_observations(&path, params, hyper, grid, &gauge_cells, ids, seed)?;
    Ok(SimulationOutput {
        path,
        complete,
        observed,
    })
}
