//! Dense forward filtering, backward sampling and RTS smoothing.

use nalgebra::{DMatrix, DVector};

use super::StateProblem;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, sample_mvn, spd_solve};
use crate::model::StateVector;
use crate::rng::{tag, SeedStream};

/// Largest state dimension `2N` accepted by [`exact_ffbs`].
pub const EXACT_MAX_STATE_DIM: usize = 512;

#[derive(Debug, Clone)]
pub struct ExactSmoother {
    /// One exact joint draw of `x_{0:T̃}`.
    pub draw: Vec<StateVector>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub smoothed_means: Vec<DVector<f64>>,
    pub smoothed_covs: Vec<DMatrix<f64>>,
}

/// Exact Kalman filter/smoother and one joint FFBS draw for small lattices.
pub fn exact_ffbs(problem: StateProblem<'_>, seed: u64) -> Result<ExactSmoother> {
    problem.validate()?;
    let StateProblem {
        lattice, dlm, grid, velocities, ..
    } = problem;
    let dim = dlm.state_dim();
    if dim > EXACT_MAX_STATE_DIM {
        return Err(Error::invalid(format!(
            "exact smoother limited to state dimension {EXACT_MAX_STATE_DIM}, got {dim}"
        )));
    }
    let steps = grid.augmented_len();
    let mu_l = dlm.mean_indicator() * dlm.params.mu;
    let w = dlm.w_dense();

    let (m0, v0) = problem.initial_moments();
    let mut filtered_means = vec![m0];
    let mut filtered_covs = vec![DMatrix::from_diagonal(&v0)];
    let mut pred_means = vec![DVector::zeros(dim)];
    let mut pred_covs = vec![DMatrix::zeros(dim, dim)];
    let mut transitions = vec![DMatrix::zeros(dim, dim)];

    for t in 1..=steps {
        let g = dlm.g_tilde_dense(lattice, velocities[t - 1]);
        let a = &g * (&filtered_means[t - 1] - &mu_l) + &mu_l;
        let p = &g * &filtered_covs[t - 1] * g.transpose() + &w;
        let (m, c) = match problem.observations_at(t) {
            Some((rows, y)) => {
                let q = rows.len();
                let mut f = DMatrix::zeros(q, dim);
                let mut offset = DVector::zeros(q);
                let mut v = DMatrix::zeros(q, q);
                for (r, row) in rows.iter().enumerate() {
                    f[(r, row.cell)] = 1.0;
                    offset[r] = if row.radar { dlm.params.mu_r } else { 0.0 };
                    v[(r, r)] = row.var;
                }
                let pf = &p * f.transpose();
                let s = &f * &pf + v;
                let chol = cholesky_with_jitter((&s + s.transpose()) * 0.5).ok_or_else(|| {
                    Error::Numerical {
                        time: t,
                        message: "forecast innovation covariance is not positive definite".into(),
                    }
                })?;
                let innov = y - &f * &a - offset;
                let gain_t = chol.solve(&pf.transpose());
                let m = &a + gain_t.transpose() * innov;
                let c = &p - &pf * &gain_t;
                let c = (&c + c.transpose()) * 0.5;
                (m, c)
            }
            None => (a.clone(), p.clone()),
        };
        filtered_means.push(m);
        filtered_covs.push(c);
        pred_means.push(a);
        pred_covs.push(p);
        transitions.push(g);
    }

    // RTS smoother and backward sampling share the gains
    // J_t = C_t G̃ᵀ_{t+1} P⁻¹_{t+1}.
    let mut rng = SeedStream::new(seed).derive(tag::FFBS).rng();
    let mut smoothed_means = filtered_means.clone();
    let mut smoothed_covs = filtered_covs.clone();
    let mut draw = vec![DVector::zeros(dim); steps + 1];
    draw[steps] = sample_mvn(&filtered_means[steps], &filtered_covs[steps], &mut rng);
    for t in (0..steps).rev() {
        let g_next = &transitions[t + 1];
        let cg = &filtered_covs[t] * g_next.transpose();
        let j = spd_solve(&pred_covs[t + 1], &cg.transpose()).transpose();

        let ms = &filtered_means[t] + &j * (&smoothed_means[t + 1] - &pred_means[t + 1]);
        let cs = &filtered_covs[t] + &j * (&smoothed_covs[t + 1] - &pred_covs[t + 1]) * j.transpose();
        smoothed_means[t] = ms;
        smoothed_covs[t] = (&cs + cs.transpose()) * 0.5;

        let h = &filtered_means[t] + &j * (&draw[t + 1] - &pred_means[t + 1]);
        let hc = &filtered_covs[t] - &j * cg.transpose();
        draw[t] = sample_mvn(&h, &hc, &mut rng);
    }

    Ok(ExactSmoother {
        draw: draw.into_iter().map(|x| StateVector(x.iter().copied().collect())).collect(),
        filtered_means,
        filtered_covs,
        smoothed_means,
        smoothed_covs,
    })
}
