//! Parameters, priors, observation containers and the complete-data
//! dynamic linear model.
//!
//! The complete-data model at an observation time is
//!
//! ```text
//! Y_t         = F x_t + μ_r L^r + v_t,          v_t ~ N(0, V)
//! x_t − μ L   = G̃_t (x_{t−1} − μ L) + w_t,      w_t ~ N(0, W)
//! ν_t         = α_ν ν_{t−1} + e_t,              e_t ~ N(0, φ_ν⁻¹ I₂)
//! ```
//!
//! with `x_t = (θ_t, S_t)`, `G̃_t = [[G(ν_{t−1}), I], [0, G*]]` and `W`
//! rescaled by the number of imputed steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, StencilWeights, Velocity};

/// Unknown static quantities ρ = (μ, μ_r, α, β).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticParams {
    pub mu: f64,
    pub mu_r: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl StaticParams {
    pub fn validate(&self) -> Result<()> {
        if ![self.mu, self.mu_r, self.alpha, self.beta]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("static parameters must be finite"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie strictly inside (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Fixed constants of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub phi_g: f64,
    pub phi_r: f64,
    pub phi_theta: f64,
    pub phi_s: f64,
    pub phi_nu: f64,
    pub alpha_nu: f64,
    pub alpha_star: f64,
    pub beta_star: f64,
    /// Imputed steps between consecutive observation times.
    pub t_tilde: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            phi_g: 100.0,
            phi_r: 2.0,
            phi_theta: 40.0,
            phi_s: 20.0,
            phi_nu: 2000.0,
            alpha_nu: 0.95,
            alpha_star: 0.85,
            beta_star: 0.15,
            t_tilde: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("phi_g", self.phi_g),
            ("phi_r", self.phi_r),
            ("phi_theta", self.phi_theta),
            ("phi_s", self.phi_s),
            ("phi_nu", self.phi_nu),
        ] {
            // +inf is a legal noise-free limit.
            if v.is_nan() || v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha_nu > 0.0 && self.alpha_nu < 1.0) {
            return Err(Error::invalid(format!(
                "alpha_nu must lie in (0, 1), got {}",
                self.alpha_nu
            )));
        }
        if !(self.alpha_star.is_finite() && self.beta_star.is_finite()) {
            return Err(Error::invalid("source-sink constants must be finite"));
        }
        Ok(())
    }

    /// Innovation variance of θ per augmented step, `1 / (φ_θ (t̃ + 1))`.
    pub fn theta_innovation_var(&self) -> f64 {
        1.0 / (self.phi_theta * (self.t_tilde as f64 + 1.0))
    }

    /// Innovation variance of S per augmented step, `1 / (φ_s (t̃ + 1))`.
    pub fn source_innovation_var(&self) -> f64 {
        1.0 / (self.phi_s * (self.t_tilde as f64 + 1.0))
    }

    pub fn velocity_innovation_var(&self) -> f64 {
        1.0 / self.phi_nu
    }

    pub fn source_stencil(&self) -> StencilWeights {
        StencilWeights::source(self.alpha_star, self.beta_star)
    }
}

/// Univariate Gaussian prior given by mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrior {
    pub mean: f64,
    pub var: f64,
}

impl GaussianPrior {
    pub const fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.var
    }
}

/// Prior settings. Initial-state priors are isotropic: a constant mean and a
/// common variance per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub mu: GaussianPrior,
    pub mu_r: GaussianPrior,
    /// Truncated to (0, 1).
    pub alpha: GaussianPrior,
    pub beta: GaussianPrior,
    /// θ₀ | μ ~ N((m_θ + μ) 1, c_θ I).
    pub theta0: GaussianPrior,
    pub source0: GaussianPrior,
    pub nu0: GaussianPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            mu: GaussianPrior::new(0.0, 1.0),
            mu_r: GaussianPrior::new(0.0, 1.0),
            alpha: GaussianPrior::new(0.8, 1.0 / 250.0),
            beta: GaussianPrior::new(0.1, 1.0 / 500.0),
            theta0: GaussianPrior::new(0.0, 4.0),
            source0: GaussianPrior::new(0.0, 0.25),
            nu0: GaussianPrior::new(0.0, 0.01),
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("mu", self.mu),
            ("mu_r", self.mu_r),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("theta0", self.theta0),
            ("source0", self.source0),
            ("nu0", self.nu0),
        ] {
            if !(p.var.is_finite() && p.var > 0.0 && p.mean.is_finite()) {
                return Err(Error::invalid(format!(
                    "prior {name} needs a finite mean and positive variance"
                )));
            }
        }
        Ok(())
    }
}

/// Forward observation transform, `log(1 + rate)`.
pub fn transform_obs(rate: f64) -> Result<f64> {
    if rate.is_nan() || rate < 0.0 {
        return Err(Error::invalid(format!("rain rate must be >= 0, got {rate}")));
    }
    Ok(rate.ln_1p())
}

/// Inverse of [`transform_obs`].
pub fn inverse_transform(y: f64) -> Result<f64> {
    if y.is_nan() || y < 0.0 {
        return Err(Error::invalid(format!(
            "transformed value must be >= 0, got {y}"
        )));
    }
    Ok(y.exp_m1())
}

/// One observed (transformed) value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsValue {
    /// Strictly positive transformed value.
    Positive(f64),
    /// Recorded as zero.
    Censored,
    Missing,
}

impl ObsValue {
    /// Classifies a transformed reading: `> 0` observed, `0` censored.
    pub fn from_transformed(y: f64) -> Self {
        if y > 0.0 {
            ObsValue::Positive(y)
        } else {
            ObsValue::Censored
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, ObsValue::Missing)
    }
}

/// Radar and gauge data at the observation times, on the transformed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    cells: usize,
    /// `radar[t][i]` for observation time `t` and cell `i`.
    pub radar: Vec<Vec<ObsValue>>,
    pub gauge_ids: Vec<String>,
    /// Lattice cell of each gauge; several gauges may share a cell.
    pub gauge_cells: Vec<usize>,
    /// `gauges[t][g]`.
    pub gauges: Vec<Vec<ObsValue>>,
}

impl ObservationSet {
    pub fn new(
        cells: usize,
        radar: Vec<Vec<ObsValue>>,
        gauge_ids: Vec<String>,
        gauge_cells: Vec<usize>,
        gauges: Vec<Vec<ObsValue>>,
    ) -> Result<Self> {
        if radar.len() != gauges.len() {
            return Err(Error::invalid("radar and gauge series differ in length"));
        }
        if gauge_ids.len() != gauge_cells.len() {
            return Err(Error::invalid("gauge ids and cells differ in length"));
        }
        if let Some(&c) = gauge_cells.iter().find(|&&c| c >= cells) {
            return Err(Error::Bounds(format!("gauge cell {c} outside lattice of {cells}")));
        }
        for row in &radar {
            if row.len() != cells {
                return Err(Error::invalid("radar slice length differs from cell count"));
            }
        }
        for row in &gauges {
            if row.len() != gauge_cells.len() {
                return Err(Error::invalid("gauge slice length differs from gauge count"));
            }
        }
        for v in radar.iter().chain(gauges.iter()).flatten() {
            if let ObsValue::Positive(y) = v {
                if !(y.is_finite() && *y > 0.0) {
                    return Err(Error::invalid(format!(
                        "positive observation must be finite and > 0, got {y}"
                    )));
                }
            }
        }
        Ok(Self {
            cells,
            radar,
            gauge_ids,
            gauge_cells,
            gauges,
        })
    }

    pub fn times(&self) -> usize {
        self.radar.len()
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn gauge_count(&self) -> usize {
        self.gauge_cells.len()
    }

    /// Length of the stacked observation vector, `N + N^g`.
    pub fn obs_dim(&self) -> usize {
        self.cells + self.gauge_count()
    }

    /// Stacked radar-then-gauge values at observation time `t`.
    pub fn stacked(&self, t: usize) -> impl Iterator<Item = ObsValue> + '_ {
        self.radar[t].iter().chain(self.gauges[t].iter()).copied()
    }
}

/// Mapping between observation indices and the augmented time axis.
///
/// Augmented index 0 carries the initial condition; observation `k`
/// (0-based) sits at augmented index `1 + k (t̃ + 1)`, so the last
/// observation lands on `T̃ = t̃ (T − 1) + T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    obs_times: usize,
    t_tilde: usize,
}

impl TimeGrid {
    pub fn augmented_len(&self) -> usize {
        if self.obs_times == 0 {
            0
        } else {
            self.t_tilde * (self.obs_times - 1) + self.obs_times
        }
    }

    pub fn obs_times(&self) -> usize {
        self.obs_times
    }

    pub fn t_tilde(&self) -> usize {
        self.t_tilde
    }

    /// Number of state slices, `T̃ + 1`.
    pub fn path_len(&self) -> usize {
        self.augmented_len() + 1
    }

    pub fn augmented_index(&self, obs: usize) -> usize {
        1 + obs * (self.t_tilde + 1)
    }

    /// Observation index at augmented step `t`, if any.
    pub fn obs_index(&self, t: usize) -> Option<usize> {
        if t == 0 {
            return None;
        }
        let k = t - 1;
        let stride = self.t_tilde + 1;
        (k % stride == 0 && k / stride < self.obs_times).then_some(k / stride)
    }
}

/// Builds the time grid for `obs_times` observations and `t_tilde` imputed
/// steps per gap.
pub fn time_map(obs_times: usize, t_tilde: usize) -> TimeGrid {
    TimeGrid {
        obs_times,
        t_tilde,
    }
}

/// Stacked state `x = (θ, S)` of length `2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn zeros(cells: usize) -> Self {
        Self(vec![0.0; 2 * cells])
    }

    pub fn cells(&self) -> usize {
        self.0.len() / 2
    }

    pub fn theta(&self) -> &[f64] {
        &self.0[..self.cells()]
    }

    pub fn source(&self) -> &[f64] {
        &self.0[self.cells()..]
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        let n = self.cells();
        &mut self.0[..n]
    }

    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let n = self.cells();
        self.0.split_at_mut(n)
    }
}

/// Observation row of the stacked observation vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsRow {
    /// Lattice cell whose θ the row observes.
    pub cell: usize,
    /// Radar rows carry the μ_r bias; gauge rows do not.
    pub radar: bool,
    /// Observation variance.
    pub var: f64,
}

/// Complete-data DLM components for fixed ρ.
#[derive(Debug, Clone)]
pub struct Dlm {
    pub params: StaticParams,
    pub hyper: Hyperparams,
    cells: usize,
    rows: Vec<ObsRow>,
    source: StencilWeights,
}

/// Assembles `F`, `V`, `W` and the `G̃_t` builder.
pub fn assemble_dlm(
    params: StaticParams,
    hyper: Hyperparams,
    lattice: &Lattice,
    gauge_cells: &[usize],
) -> Result<Dlm> {
    params.validate()?;
    hyper.validate()?;
    let cells = lattice.cells();
    let mut rows: Vec<ObsRow> = (0..cells)
        .map(|cell| ObsRow {
            cell,
            radar: true,
            var: 1.0 / hyper.phi_r,
        })
        .collect();
    for &cell in gauge_cells {
        if cell >= cells {
            return Err(Error::Bounds(format!("gauge cell {cell} outside lattice")));
        }
        rows.push(ObsRow {
            cell,
            radar: false,
            var: 1.0 / hyper.phi_g,
        });
    }
    Ok(Dlm {
        params,
        hyper,
        cells,
        rows,
        source: hyper.source_stencil(),
    })
}

impl Dlm {
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn state_dim(&self) -> usize {
        2 * self.cells
    }

    pub fn obs_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[ObsRow] {
        &self.rows
    }

    pub fn theta_stencil(&self, nu: Velocity) -> StencilWeights {
        StencilWeights::theta(self.params.alpha, self.params.beta, nu)
    }

    pub fn source_stencil(&self) -> StencilWeights {
        self.source
    }

    /// Diagonal of `W`: θ block then S block.
    pub fn w_diag(&self) -> (f64, f64) {
        (
            self.hyper.theta_innovation_var(),
            self.hyper.source_innovation_var(),
        )
    }

    /// Deterministic transition `μL + G̃(x_prev − μL)` using `G(nu_prev)`.
    pub fn propagate(&self, lattice: &Lattice, nu_prev: Velocity, x_prev: &[f64], out: &mut [f64]) {
        let n = self.cells;
        let mu = self.params.mu;
        let (theta_prev, s_prev) = x_prev.split_at(n);
        let (theta_out, s_out) = out.split_at_mut(n);
        let centred: Vec<f64> = theta_prev.iter().map(|v| v - mu).collect();
        lattice.apply(&self.theta_stencil(nu_prev), &centred, theta_out);
        for (o, s) in theta_out.iter_mut().zip(s_prev) {
            *o += mu + s;
        }
        lattice.apply(&self.source, s_prev, s_out);
    }

    /// Mean of the stacked observation given state `x`.
    pub fn observe_mean(&self, x: &[f64], row: &ObsRow) -> f64 {
        x[row.cell] + if row.radar { self.params.mu_r } else { 0.0 }
    }

    pub fn f_dense(&self) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.obs_dim(), self.state_dim());
        for (r, row) in self.rows.iter().enumerate() {
            f[(r, row.cell)] = 1.0;
        }
        f
    }

    pub fn v_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.obs_dim(),
            self.rows.iter().map(|r| r.var),
        ))
    }

    pub fn w_dense(&self) -> DMatrix<f64> {
        let (wt, ws) = self.w_diag();
        let n = self.cells;
        DMatrix::from_diagonal(&DVector::from_fn(2 * n, |i, _| if i < n { wt } else { ws }))
    }

    /// Dense `G̃_t` built from `G(nu_prev)`.
    pub fn g_tilde_dense(&self, lattice: &Lattice, nu_prev: Velocity) -> DMatrix<f64> {
        let n = self.cells;
        let g = lattice.to_sparse(&self.theta_stencil(nu_prev)).to_dense();
        let gs = lattice.to_sparse(&self.source).to_dense();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&g);
        out.view_mut((n, n), (n, n)).copy_from(&gs);
        for i in 0..n {
            out[(i, n + i)] = 1.0;
        }
        out
    }

    /// `L = (1_N, 0_N)`.
    pub fn mean_indicator(&self) -> DVector<f64> {
        let n = self.cells;
        DVector::from_fn(2 * n, |i, _| if i < n { 1.0 } else { 0.0 })
    }
}

/// Complete data: observed positives plus latent values for censored
/// entries, stacked radar-then-gauge per observation time. `None` marks a
/// missing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteData {
    pub values: Vec<Vec<Option<f64>>>,
}

impl CompleteData {
    /// Starts the chain with censored entries set to `−1/√φ`, one
    /// observation-noise SD below zero.
    pub fn initial(data: &ObservationSet, hyper: &Hyperparams) -> Self {
        let radar_fill = -1.0 / hyper.phi_r.sqrt();
        let gauge_fill = -1.0 / hyper.phi_g.sqrt();
        let n = data.cells();
        let values = (0..data.times())
            .map(|t| {
                data.stacked(t)
                    .enumerate()
                    .map(|(r, v)| match v {
                        ObsValue::Positive(y) => Some(y),
                        ObsValue::Censored => Some(if r < n { radar_fill } else { gauge_fill }),
                        ObsValue::Missing => None,
                    })
                    .collect()
            })
            .collect();
        Self { values }
    }

    /// Fully observed complete data (no missing entries).
    pub fn from_values(values: Vec<Vec<f64>>) -> Self {
        Self {
            values: values
                .into_iter()
                .map(|row| row.into_iter().map(Some).collect())
                .collect(),
        }
    }

    pub fn times(&self) -> usize {
        self.values.len()
    }
}
