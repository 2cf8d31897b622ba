//! Fixed-lag ensemble Kalman smoother for the complete-data DLM, and an
//! exact forward-filter backward-sampler used as its oracle.

mod exact;
mod gain;

pub use exact::{exact_ffbs, ExactSmoother, EXACT_MAX_STATE_DIM};
pub use gain::{kalman_gain_deterministic, ObsNoise};

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Velocity};
use crate::linalg::{deviations, row_means};
use crate::model::{CompleteData, Dlm, ObsRow, Priors, StateVector, TimeGrid};
use crate::rng::{tag, SeedStream};

use gain::{observe_rows, scatter_rows, solve_innovations};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmootherConfig {
    /// Ensemble size `Nₑ ≥ 2`.
    pub ensemble_size: usize,
    /// Smoothing lag in observation times; a lag of τ updates the
    /// `τ (t̃ + 1)` most recent augmented slices alongside the current one.
    pub lag: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            lag: 3,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::invalid("ensemble needs at least two members"));
        }
        Ok(())
    }

    /// Smoothing window in augmented steps.
    pub fn augmented_lag(&self, t_tilde: usize) -> usize {
        self.lag.saturating_mul(t_tilde + 1)
    }
}

/// Output of one smoother pass.
#[derive(Debug, Clone)]
pub struct EnksDraw {
    /// The selected member's smoothed path `x_{0:T̃}`.
    pub path: Vec<StateVector>,
    /// Ensemble mean of each smoothed slice.
    pub means: Vec<DVector<f64>>,
    /// Index of the member returned in `path`.
    pub member: usize,
}

/// Inputs shared by both state samplers.
#[derive(Clone, Copy)]
pub struct StateProblem<'a> {
    pub lattice: &'a Lattice,
    pub dlm: &'a Dlm,
    pub priors: &'a Priors,
    pub grid: &'a TimeGrid,
    /// `ν_{0:T̃}`.
    pub velocities: &'a [Velocity],
    pub data: &'a CompleteData,
}

impl StateProblem<'_> {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.velocities.len() != self.grid.path_len() {
            return Err(Error::invalid(format!(
                "velocity path has {} entries, expected {}",
                self.velocities.len(),
                self.grid.path_len()
            )));
        }
        if self.data.times() != self.grid.obs_times() {
            return Err(Error::invalid(format!(
                "complete data covers {} times, grid has {}",
                self.data.times(),
                self.grid.obs_times()
            )));
        }
        Ok(())
    }

    /// Active rows and their complete-data values at augmented step `t`.
    pub(crate) fn observations_at(&self, t: usize) -> Option<(Vec<ObsRow>, DVector<f64>)> {
        let k = self.grid.obs_index(t)?;
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (row, value) in self.dlm.rows().iter().zip(&self.data.values[k]) {
            if let Some(y) = value {
                rows.push(*row);
                values.push(*y);
            }
        }
        if rows.is_empty() {
            return None;
        }
        Some((rows, DVector::from_vec(values)))
    }

    /// Prior mean and (diagonal) variance of `x₀`.
    pub(crate) fn initial_moments(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dlm.cells();
        let theta_mean = self.priors.theta0.mean + self.dlm.params.mu;
        let mean = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                theta_mean
            } else {
                self.priors.source0.mean
            }
        });
        let var = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                self.priors.theta0.var
            } else {
                self.priors.source0.var
            }
        });
        (mean, var)
    }
}

/// A smoothed slice in the lag window. Ensemble-space updates are
/// right-multiplications `X ← X (I + P C)` (`P` the centring projector), so
/// while `Nₑ` is below the state dimension they are composed in `pending`
/// and applied once when the slice is next needed.
struct WindowSlice {
    t: usize,
    x: DMatrix<f64>,
    pending: Option<DMatrix<f64>>,
}

impl WindowSlice {
    fn new(t: usize, x: DMatrix<f64>) -> Self {
        Self { t, x, pending: None }
    }

    fn materialize(&mut self) {
        if let Some(m) = self.pending.take() {
            self.x = &self.x * m;
        }
    }

    fn into_ensemble(mut self) -> DMatrix<f64> {
        self.materialize();
        self.x
    }
}

/// Runs `f(member, column)` over every column of an ensemble matrix.
fn for_each_member<F>(x: &mut DMatrix<f64>, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let dim = x.nrows();
    let data = x.as_mut_slice();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(dim)
            .enumerate()
            .for_each(|(j, col)| f(j, col));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(dim).enumerate().for_each(|(j, col)| f(j, col));
    }
}

/// One approximate joint draw of `x_{0:T̃}` from its full conditional.
///
/// Members start from the `x₀` prior. At each augmented step every member
/// is propagated through `G̃_t` (the deterministic ensemble) and then given
/// its own innovation. At observation steps, perturbed pseudo-observations
/// update every slice in the lag window with the deterministic-ensemble
/// gain; imputed steps skip the update. A member is chosen uniformly at
/// random and its smoothed path returned.
pub fn enks_draw(problem: StateProblem<'_>, config: &SmootherConfig, seed: u64) -> Result<EnksDraw> {
    config.validate()?;
    problem.validate()?;
    let StateProblem {
        lattice, dlm, grid, velocities, ..
    } = problem;
    let ne = config.ensemble_size;
    let dim = dlm.state_dim();
    let n = dlm.cells();
    let root = SeedStream::new(seed);
    let steps = grid.augmented_len();
    let window_lag = config.augmented_lag(grid.t_tilde());
    let (w_theta, w_source) = dlm.w_diag();
    let (sd_theta, sd_source) = (w_theta.sqrt(), w_source.sqrt());
    let mu = dlm.params.mu;

    // Exchangeable members: choosing the returned index up front has the
    // same law as choosing it at the end, and only that member's evicted
    // slices need to be kept.
    let member = root.derive(tag::SELECT).rng().gen_range(0..ne);

    let mut path: Vec<Option<StateVector>> = vec![None; steps + 1];
    let mut means: Vec<Option<DVector<f64>>> = vec![None; steps + 1];
    let mut window: VecDeque<WindowSlice> = VecDeque::new();

    let finalize = |t: usize,
                    x: DMatrix<f64>,
                    path: &mut Vec<Option<StateVector>>,
                    means: &mut Vec<Option<DVector<f64>>>| {
        means[t] = Some(row_means(&x));
        path[t] = Some(StateVector(x.column(member).iter().copied().collect()));
    };

    let (m0, v0) = problem.initial_moments();
    let sd0 = v0.map(f64::sqrt);
    let mut x0 = DMatrix::zeros(dim, ne);
    let init = root.derive(tag::INIT);
    for_each_member(&mut x0, |j, col| {
        let mut rng = init.derive(j as u64).rng();
        for (i, v) in col.iter_mut().enumerate() {
            *v = m0[i] + sd0[i] * rng.sample::<f64, _>(StandardNormal);
        }
    });
    window.push_back(WindowSlice::new(0, x0));

    let forecast_root = root.derive(tag::FORECAST);
    let pseudo_root = root.derive(tag::PSEUDO_OBS);
    for t in 1..=steps {
        let nu_prev = velocities[t - 1];
        let theta_stencil = dlm.theta_stencil(nu_prev);
        let source_stencil = dlm.source_stencil();

        let back = window.back().expect("window never empty");
        // The newest slice is always updated in place.
        debug_assert!(back.pending.is_none());
        let prev = &back.x;
        let mut det = DMatrix::zeros(dim, ne);
        {
            let prev_data = prev.as_slice();
            for_each_member(&mut det, |j, out| {
                let x = &prev_data[j * dim..(j + 1) * dim];
                let (theta, source) = x.split_at(n);
                let centred: Vec<f64> = theta.iter().map(|v| v - mu).collect();
                let (out_theta, out_source) = out.split_at_mut(n);
                lattice.apply(&theta_stencil, &centred, out_theta);
                for (o, s) in out_theta.iter_mut().zip(source) {
                    *o += mu + s;
                }
                lattice.apply(&source_stencil, source, out_source);
            });
        }
        let mut forecast = det.clone();
        let step_root = forecast_root.derive(t as u64);
        for_each_member(&mut forecast, |j, col| {
            let mut rng = step_root.derive(j as u64).rng();
            let (theta, source) = col.split_at_mut(n);
            for v in theta.iter_mut() {
                *v += sd_theta * rng.sample::<f64, _>(StandardNormal);
            }
            for v in source.iter_mut() {
                *v += sd_source * rng.sample::<f64, _>(StandardNormal);
            }
        });

        // Slices older than the lag window can no longer change.
        let oldest = t.saturating_sub(window_lag);
        while window.front().is_some_and(|s| s.t < oldest) {
            let slice = window.pop_front().expect("checked non-empty");
            let l = slice.t;
            finalize(l, slice.into_ensemble(), &mut path, &mut means);
        }

        if let Some((rows, y)) = problem.observations_at(t) {
            let p = rows.len();
            let scale = 1.0 / ((ne - 1) as f64).sqrt();
            let det_dev = deviations(&det);
            let a = observe_rows(&rows, &det_dev) * scale;

            // Innovations y − ŷʲ with ŷʲ = F xʲ + μ_r Lʳ + vʲ.
            let mut innov = DMatrix::zeros(p, ne);
            let mu_r = dlm.params.mu_r;
            let pseudo_step = pseudo_root.derive(t as u64);
            {
                let fc = forecast.as_slice();
                let rows_ref = &rows;
                let y_ref = &y;
                for_each_member(&mut innov, |j, col| {
                    let mut rng = pseudo_step.derive(j as u64).rng();
                    let x = &fc[j * dim..(j + 1) * dim];
                    for (r, row) in rows_ref.iter().enumerate() {
                        let bias = if row.radar { mu_r } else { 0.0 };
                        let noise = row.var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                        col[r] = y_ref[r] - (x[row.cell] + bias + noise);
                    }
                });
            }

            let noise = ObsNoise::new(rows.clone(), w_theta);
            let solved = solve_innovations(&a, &innov, &noise, t)?;

            // Lagged slices gain X_ℓ' Aᵀ Z / √(Nₑ − 1) with X_ℓ' their
            // deviations; the current slice uses D̃ in place of X_ℓ' plus the
            // W Fᵀ Z term. Association order follows the cheaper route.
            match solved.ensemble_coeffs {
                Some(coeffs) if ne < dim => {
                    // X + X' C = X (I + P C); P C subtracts the column means of C.
                    let mut step = coeffs.clone();
                    for mut col in step.column_iter_mut() {
                        let m = col.mean();
                        col.add_scalar_mut(-m);
                    }
                    for i in 0..ne {
                        step[(i, i)] += 1.0;
                    }
                    for slice in window.iter_mut() {
                        slice.pending = Some(match slice.pending.take() {
                            Some(m) => m * &step,
                            None => step.clone(),
                        });
                    }
                    forecast.gemm(1.0, &det_dev, &coeffs, 1.0);
                }
                Some(coeffs) => {
                    for slice in window.iter_mut() {
                        slice.materialize();
                        let dev = deviations(&slice.x);
                        slice.x.gemm(1.0, &dev, &coeffs, 1.0);
                    }
                    forecast.gemm(1.0, &det_dev, &coeffs, 1.0);
                }
                None => {
                    let z_scaled = &solved.z * scale;
                    let a_t = a.transpose();
                    for slice in window.iter_mut() {
                        slice.materialize();
                        let cross = deviations(&slice.x) * &a_t;
                        slice.x.gemm(1.0, &cross, &z_scaled, 1.0);
                    }
                    let cross = &det_dev * &a_t;
                    forecast.gemm(1.0, &cross, &z_scaled, 1.0);
                }
            }
            let ftz = scatter_rows(&rows, &solved.z, dim);
            for j in 0..ne {
                for i in 0..n {
                    forecast[(i, j)] += w_theta * ftz[(i, j)];
                }
            }
        }
        window.push_back(WindowSlice::new(t, forecast));
    }
    while let Some(slice) = window.pop_front() {
        let l = slice.t;
        finalize(l, slice.into_ensemble(), &mut path, &mut means);
    }

    Ok(EnksDraw {
        path: path.into_iter().map(|x| x.expect("every slice finalised")).collect(),
        means: means.into_iter().map(|m| m.expect("every slice finalised")).collect(),
        member,
    })
}
