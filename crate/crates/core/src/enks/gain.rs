//! Kalman gain from the deterministic ensemble.
//!
//! With `D̃` the deviations of the deterministic forecast `x̃ = G̃ x` and
//! `X_ℓ` the deviations of a window slice,
//!
//! ```text
//! Σ̃_ℓt = X_ℓ D̃ᵀ / (Nₑ − 1)
//! S    = F Σ̃_tt Fᵀ + F W Fᵀ + V
//! K̂_ℓt = Σ̃_ℓt Fᵀ S⁻¹                 ℓ < t
//! K̂_tt = (Σ̃_tt + W) Fᵀ S⁻¹
//! ```
//!
//! Nothing of size `2N × 2N` is formed. `F W Fᵀ + V` is block diagonal with
//! one block per observed cell, so its inverse is applied exactly with
//! Sherman–Morrison, and `S⁻¹` is applied either in observation space or,
//! when the ensemble is smaller than the observation vector, through the
//! Woodbury identity in ensemble space.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, deviations};
use crate::model::ObsRow;

/// `R = F W Fᵀ + V` for the active observation rows.
#[derive(Debug, Clone)]
pub struct ObsNoise {
    rows: Vec<ObsRow>,
    w_theta: f64,
    /// Row indices grouped by observed cell, in first-appearance order.
    groups: Vec<Vec<usize>>,
}

impl ObsNoise {
    pub fn new(rows: Vec<ObsRow>, w_theta: f64) -> Self {
        let mut order: Vec<(usize, usize)> =
            rows.iter().enumerate().map(|(r, row)| (row.cell, r)).collect();
        order.sort_unstable();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut last_cell = usize::MAX;
        for (cell, r) in order {
            if cell != last_cell {
                groups.push(Vec::new());
                last_cell = cell;
            }
            groups.last_mut().expect("pushed above").push(r);
        }
        Self {
            rows,
            w_theta,
            groups,
        }
    }

    pub fn rows(&self) -> &[ObsRow] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// `R⁻¹ m`, column by column.
    pub fn solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        let w = self.w_theta;
        for (c, col) in m.column_iter().enumerate() {
            for group in &self.groups {
                if let [r] = group.as_slice() {
                    out[(*r, c)] = col[*r] / (self.rows[*r].var + w);
                    continue;
                }
                let mut s = 0.0;
                let mut inv_sum = 0.0;
                for &r in group {
                    let v = self.rows[r].var;
                    s += col[r] / v;
                    inv_sum += 1.0 / v;
                }
                let shrink = w * s / (1.0 + w * inv_sum);
                for &r in group {
                    out[(r, c)] = (col[r] - shrink) / self.rows[r].var;
                }
            }
        }
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_fn(p, p, |a, b| {
            let shared = if self.rows[a].cell == self.rows[b].cell {
                self.w_theta
            } else {
                0.0
            };
            shared + if a == b { self.rows[a].var } else { 0.0 }
        })
    }
}

/// Gathers the θ rows observed by each active row: `F D` for a `2N × Nₑ`
/// matrix `D`.
pub fn observe_rows(rows: &[ObsRow], d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), d.ncols());
    for (j, col) in d.column_iter().enumerate() {
        for (r, row) in rows.iter().enumerate() {
            out[(r, j)] = col[row.cell];
        }
    }
    out
}

/// `Fᵀ Z` restricted to the θ block: scatter-adds observation rows onto cells.
pub fn scatter_rows(rows: &[ObsRow], z: &DMatrix<f64>, state_dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(state_dim, z.ncols());
    for (j, col) in z.column_iter().enumerate() {
        for (r, row) in rows.iter().enumerate() {
            out[(row.cell, j)] += col[r];
        }
    }
    out
}

/// The solved innovation system for one observation time.
pub struct SolvedInnovations {
    /// `S⁻¹ E`, `p × Nₑ`.
    pub z: DMatrix<f64>,
    /// `Aᵀ S⁻¹ E / √(Nₑ − 1)` when solved in ensemble space.
    pub ensemble_coeffs: Option<DMatrix<f64>>,
}

/// Applies `S⁻¹` to the innovation matrix `e`, where `S = A Aᵀ + R` and
/// `A = F D̃ / √(Nₑ − 1)`.
pub fn solve_innovations(
    a: &DMatrix<f64>,
    e: &DMatrix<f64>,
    noise: &ObsNoise,
    time: usize,
) -> Result<SolvedInnovations> {
    let p = a.nrows();
    let ne = a.ncols();
    let scale = 1.0 / ((ne - 1) as f64).sqrt();
    if ne <= p {
        // Woodbury: S⁻¹ = R⁻¹ − R⁻¹A (I + AᵀR⁻¹A)⁻¹ AᵀR⁻¹, and
        // AᵀS⁻¹E = (I + AᵀR⁻¹A)⁻¹ AᵀR⁻¹E.
        let ra = noise.solve(a);
        let re = noise.solve(e);
        // Explicit transposes route the products through the blocked gemm
        // kernel; `tr_mul` falls back to per-entry dot products.
        let a_t = a.transpose();
        let mut k = &a_t * &ra;
        for i in 0..ne {
            k[(i, i)] += 1.0;
        }
        let chol = cholesky_with_jitter(k).ok_or_else(|| Error::Numerical {
            time,
            message: "ensemble-space innovation matrix is not positive definite".into(),
        })?;
        let mut coeffs = ra.transpose() * e;
        chol.solve_mut(&mut coeffs);
        let mut z = re;
        z.gemm(-1.0, &ra, &coeffs, 1.0);
        coeffs *= scale;
        Ok(SolvedInnovations {
            z,
            ensemble_coeffs: Some(coeffs),
        })
    } else {
        let mut s = noise.dense();
        s.gemm(1.0, a, &a.transpose(), 1.0);
        let chol = cholesky_with_jitter(s).ok_or_else(|| Error::Numerical {
            time,
            message: "innovation covariance is not positive definite".into(),
        })?;
        Ok(SolvedInnovations {
            z: chol.solve(e),
            ensemble_coeffs: None,
        })
    }
}

/// Explicit gain `K̂_ℓt` (`2N × p`) from a window slice, the deterministic
/// forecast ensemble and the active observation rows.
///
/// `current` selects the `ℓ = t` branch, which adds `W` to the forecast
/// covariance. `w` is the `(θ, S)` diagonal of `W`.
pub fn kalman_gain_deterministic(
    slice: &DMatrix<f64>,
    deterministic: &DMatrix<f64>,
    current: bool,
    rows: &[ObsRow],
    w: (f64, f64),
) -> Result<DMatrix<f64>> {
    let ne = deterministic.ncols();
    if ne < 2 || slice.ncols() != ne {
        return Err(Error::invalid("gain needs two or more matching ensemble members"));
    }
    let state_dim = deterministic.nrows();
    let scale = 1.0 / ((ne - 1) as f64).sqrt();
    let d_det = deviations(deterministic);
    let a = observe_rows(rows, &d_det) * scale;
    let x_dev = if current { d_det } else { deviations(slice) };
    // Σ̃_ℓt Fᵀ = X_ℓ Aᵀ / √(Nₑ − 1)
    let mut cross = &x_dev * a.transpose() * scale;
    if current {
        for (r, row) in rows.iter().enumerate() {
            cross[(row.cell, r)] += w.0;
        }
    }
    let noise = ObsNoise::new(rows.to_vec(), w.0);
    let mut s = noise.dense();
    s.gemm(1.0, &a, &a.transpose(), 1.0);
    let chol = cholesky_with_jitter(s)
        .ok_or_else(|| Error::NumericalGeneral("innovation covariance is not positive definite".into()))?;
    // K = cross S⁻¹  ⇔  Kᵀ = S⁻¹ crossᵀ
    let kt = chol.solve(&cross.transpose());
    debug_assert_eq!(kt.ncols(), state_dim);
    Ok(kt.transpose())
}
