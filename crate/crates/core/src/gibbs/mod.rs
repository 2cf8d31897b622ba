//! Gibbs sampler with an ensemble Kalman smoother state step.
//!
//! Each iteration draws, in order: the state path `x_{0:T̃}`, then
//! `μ, μ_r, α, β`, then the latent values of censored readings, then the
//! velocities `ν_{0:T̃}`.

mod conditionals;
mod truncated;

pub use conditionals::{
    alpha_conditional, beta_conditional, mu_conditional, mu_r_conditional, update_latent_obs,
    update_static, update_velocities, velocity_conditional, Conditioning, GaussianConditional,
    VelocityConditional,
};
pub use truncated::sample_truncated_normal;

use crate::analysis::{complete_data_loglik, observed_data_loglik};
use crate::enks::{enks_draw, exact_ffbs, SmootherConfig, StateProblem};
use crate::error::{Error, Result};
use crate::lattice::{GridSpec, Lattice, Velocity};
use crate::model::{
    assemble_dlm, time_map, CompleteData, Hyperparams, ObservationSet, Priors, StateVector,
    StaticParams, TimeGrid,
};
use crate::rng::{tag, SeedStream};

/// How the state path is drawn each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSampler {
    Enks(SmootherConfig),
    /// Exact forward-filter backward-sampler; small lattices only.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    /// Keep full state slices every `state_thin`-th stored iteration.
    pub state_thin: usize,
    pub sampler: StateSampler,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            burnin: 1000,
            thin: 1,
            state_thin: 10,
            sampler: StateSampler::Enks(SmootherConfig::default()),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.state_thin == 0 {
            return Err(Error::invalid("thinning intervals must be at least 1"));
        }
        if self.burnin > self.iters {
            return Err(Error::invalid(format!(
                "burn-in {} exceeds iteration count {}",
                self.burnin, self.iters
            )));
        }
        if let StateSampler::Enks(c) = self.sampler {
            c.validate()?;
        }
        Ok(())
    }

    /// Number of draws a run will store.
    pub fn stored_draws(&self) -> usize {
        (self.iters - self.burnin).div_ceil(self.thin)
    }
}

/// Model settings that stay fixed during sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub grid: GridSpec,
    pub hyper: Hyperparams,
    pub priors: Priors,
    /// Starting values of ρ.
    pub initial: StaticParams,
}

impl ModelSpec {
    /// Starts ρ at the prior means.
    pub fn new(grid: GridSpec, hyper: Hyperparams, priors: Priors) -> Self {
        Self {
            grid,
            hyper,
            priors,
            initial: StaticParams {
                mu: priors.mu.mean,
                mu_r: priors.mu_r.mean,
                alpha: priors.alpha.mean.clamp(0.01, 0.99),
                beta: priors.beta.mean,
            },
        }
    }
}

/// Everything a forecast needs from one stored draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDraw {
    pub params: StaticParams,
    /// `x_{T̃}`.
    pub state: StateVector,
    /// `ν_{T̃}`.
    pub velocity: Velocity,
}

/// State slices at the observation times from one stored iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDraw {
    pub iteration: usize,
    pub slices: Vec<StateVector>,
}

/// Streaming per-(time, cell) moments of θ at the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaAccumulator {
    pub obs_times: usize,
    pub cells: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub positive: Vec<u64>,
}

impl ThetaAccumulator {
    pub fn new(obs_times: usize, cells: usize) -> Self {
        let len = obs_times * cells;
        Self {
            obs_times,
            cells,
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
            positive: vec![0; len],
        }
    }

    /// Adds one draw; `theta[k]` is θ at observation time `k`.
    pub fn push(&mut self, theta: &[&[f64]]) {
        self.count += 1;
        let n = self.count as f64;
        for (k, th) in theta.iter().enumerate() {
            for (i, &v) in th[..self.cells].iter().enumerate() {
                let idx = k * self.cells + i;
                let delta = v - self.mean[idx];
                self.mean[idx] += delta / n;
                self.m2[idx] += delta * (v - self.mean[idx]);
                if v > 0.0 {
                    self.positive[idx] += 1;
                }
            }
        }
    }
}

/// Sampler output.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub cells: usize,
    pub obs_times: usize,
    pub t_tilde: usize,
    /// Iteration number of each stored draw.
    pub iterations: Vec<usize>,
    pub params: Vec<StaticParams>,
    pub loglik_complete: Vec<f64>,
    pub loglik_obs: Vec<f64>,
    /// `ν_{0:T̃}` per stored draw.
    pub velocities: Vec<Vec<Velocity>>,
    pub terminal: Vec<TerminalDraw>,
    pub states: Vec<StateDraw>,
    /// Updated at every post-burn-in iteration, thinned or not.
    pub accumulator: ThetaAccumulator,
}

impl DrawStore {
    fn new(cells: usize, obs_times: usize, t_tilde: usize) -> Self {
        Self {
            cells,
            obs_times,
            t_tilde,
            iterations: Vec::new(),
            params: Vec::new(),
            loglik_complete: Vec::new(),
            loglik_obs: Vec::new(),
            velocities: Vec::new(),
            terminal: Vec::new(),
            states: Vec::new(),
            accumulator: ThetaAccumulator::new(obs_times, cells),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

fn check_finite_precisions(h: &Hyperparams) -> Result<()> {
    for (name, v) in [
        ("phi_g", h.phi_g),
        ("phi_r", h.phi_r),
        ("phi_theta", h.phi_theta),
        ("phi_s", h.phi_s),
        ("phi_nu", h.phi_nu),
    ] {
        if !v.is_finite() {
            return Err(Error::invalid(format!("sampling needs finite {name}")));
        }
    }
    Ok(())
}

/// Runs the sampler. Deterministic given `seed`, whatever the thread count.
pub fn run_genks(
    model: &ModelSpec,
    data: &ObservationSet,
    config: &GibbsConfig,
    seed: u64,
) -> Result<DrawStore> {
    config.validate()?;
    model.hyper.validate()?;
    model.priors.validate()?;
    model.initial.validate()?;
    check_finite_precisions(&model.hyper)?;
    let lattice = Lattice::new(model.grid);
    if data.cells() != lattice.cells() {
        return Err(Error::invalid(format!(
            "data cover {} cells, lattice has {}",
            data.cells(),
            lattice.cells()
        )));
    }
    let hyper = model.hyper;
    let grid = time_map(data.times(), hyper.t_tilde);
    let root = SeedStream::new(seed);
    let mut chain = ChainState::new(model, data, &grid);
    let mut store = DrawStore::new(lattice.cells(), data.times(), hyper.t_tilde);

    for it in 0..config.iters {
        let step = root.derive2(tag::ITERATION, it as u64);
        sweep(model, &lattice, &grid, data, config.sampler, &mut chain, step)
            .map_err(|e| e.with_iteration(it))?;
        let ChainState {
            params,
            velocities,
            complete,
            states,
        } = &chain;
        let params = *params;

        if it < config.burnin {
            continue;
        }
        let theta: Vec<&[f64]> = (0..grid.obs_times())
            .map(|k| states[grid.augmented_index(k)].theta())
            .collect();
        store.accumulator.push(&theta);
        let offset = it - config.burnin;
        if offset % config.thin != 0 {
            continue;
        }
        store.iterations.push(it);
        store.params.push(params);
        store
            .loglik_complete
            .push(complete_data_loglik(&theta, params.mu_r, &hyper, &data.gauge_cells, complete)?);
        store
            .loglik_obs
            .push(observed_data_loglik(&theta, params.mu_r, &hyper, data)?);
        store.velocities.push(velocities.clone());
        let last = grid.augmented_len();
        store.terminal.push(TerminalDraw {
            params,
            state: states[last].clone(),
            velocity: velocities[last],
        });
        if (offset / config.thin) % config.state_thin == 0 {
            store.states.push(StateDraw {
                iteration: it,
                slices: (0..grid.obs_times())
                    .map(|k| states[grid.augmented_index(k)].clone())
                    .collect(),
            });
        }
    }
    Ok(store)
}

/// Current values of every sampled quantity.
#[derive(Debug, Clone)]
pub(crate) struct ChainState {
    pub params: StaticParams,
    pub velocities: Vec<Velocity>,
    pub complete: CompleteData,
    pub states: Vec<StateVector>,
}

impl ChainState {
    pub(crate) fn new(model: &ModelSpec, data: &ObservationSet, grid: &TimeGrid) -> Self {
        Self {
            params: model.initial,
            velocities: vec![Velocity::ZERO; grid.path_len()],
            complete: CompleteData::initial(data, &model.hyper),
            states: Vec::new(),
        }
    }
}

/// One Gibbs sweep: states, ρ, latent observations, velocities.
pub(crate) fn sweep(
    model: &ModelSpec,
    lattice: &Lattice,
    grid: &TimeGrid,
    data: &ObservationSet,
    sampler: StateSampler,
    chain: &mut ChainState,
    step: SeedStream,
) -> Result<()> {
    let hyper = model.hyper;
    let dlm = assemble_dlm(chain.params, hyper, lattice, &data.gauge_cells)?;
    let problem = StateProblem {
        lattice,
        dlm: &dlm,
        priors: &model.priors,
        grid,
        velocities: &chain.velocities,
        data: &chain.complete,
    };
    let state_seed = step.derive(tag::ENKS).key();
    chain.states = match sampler {
        StateSampler::Enks(c) => enks_draw(problem, &c, state_seed)?.path,
        StateSampler::Exact => exact_ffbs(problem, state_seed)?.draw,
    };

    let cond = Conditioning {
        lattice,
        hyper: &hyper,
        priors: &model.priors,
        grid,
        states: &chain.states,
        data: &chain.complete,
    };
    let params = update_static(&cond, &chain.params, &chain.velocities, &mut step.derive(tag::STATIC).rng())?;
    let latent = update_latent_obs(&chain.states, &params, &hyper, grid, data, step.derive(tag::LATENT))?;
    let cond = Conditioning {
        data: &latent,
        ..cond
    };
    let mut velocities = chain.velocities.clone();
    update_velocities(&cond, &params, &mut velocities, &mut step.derive(tag::VELOCITY).rng())?;
    chain.params = params;
    chain.complete = latent;
    chain.velocities = velocities;
    Ok(())
}
