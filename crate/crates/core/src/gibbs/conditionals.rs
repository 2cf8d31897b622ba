//! Full conditionals of ρ, the velocities and the censored observations.
//!
//! With `φ' = φ_θ (t̃ + 1)`, `d_t = θ_t − μ1` and `z_t = d_t − S_{t−1}`,
//! the θ transition reads
//!
//! ```text
//! z_t = α [d + ν_x (d_W − d_E) + ν_y (d_S − d_N) + β L d]_{t−1} + ε_t
//! ```
//!
//! where `d_E` is `d` read at each cell's east neighbour and `L` the
//! discrete Laplacian. Every quantity below enters this line linearly.

use rand::Rng;

use super::truncated::sample_truncated_normal;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, StencilWeights, Velocity};
use crate::model::{CompleteData, Hyperparams, ObsValue, ObservationSet, Priors, StateVector, StaticParams, TimeGrid};
use crate::rng::SeedStream;

/// Univariate Gaussian full conditional in moment form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianConditional {
    pub mean: f64,
    pub precision: f64,
}

impl GaussianConditional {
    fn from_canonical(linear: f64, precision: f64, what: &str) -> Result<Self> {
        if !(precision > 0.0 && precision.is_finite()) || !linear.is_finite() {
            return Err(Error::NumericalGeneral(format!(
                "{what} conditional has precision {precision}"
            )));
        }
        Ok(Self {
            mean: linear / precision,
            precision,
        })
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }
}

/// Bivariate Gaussian full conditional of one `ν_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityConditional {
    pub mean: [f64; 2],
    pub precision: [[f64; 2]; 2],
}

impl VelocityConditional {
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, d]] = self.precision;
        let det = a * d - b * b;
        [[d / det, -b / det], [-b / det, a / det]]
    }
}

/// Everything the ρ and ν conditionals condition on.
#[derive(Clone, Copy)]
pub struct Conditioning<'a> {
    pub lattice: &'a Lattice,
    pub hyper: &'a Hyperparams,
    pub priors: &'a Priors,
    pub grid: &'a TimeGrid,
    /// `x_{0:T̃}`.
    pub states: &'a [StateVector],
    pub data: &'a CompleteData,
}

impl Conditioning<'_> {
    fn phi_prime(&self) -> f64 {
        1.0 / self.hyper.theta_innovation_var()
    }

    fn cells(&self) -> usize {
        self.lattice.cells()
    }

    fn check(&self, velocities: &[Velocity]) -> Result<()> {
        let len = self.grid.path_len();
        if self.states.len() != len || velocities.len() != len {
            return Err(Error::invalid(format!(
                "paths need {len} slices, got {} states and {} velocities",
                self.states.len(),
                velocities.len()
            )));
        }
        Ok(())
    }

    /// Calls `f(t, d_{t−1}, z_t)` for `t = 1..=T̃`.
    fn for_each_transition(&self, mu: f64, mut f: impl FnMut(usize, &[f64], &[f64])) {
        let n = self.cells();
        let mut d = vec![0.0; n];
        let mut z = vec![0.0; n];
        for t in 1..self.states.len() {
            let prev = &self.states[t - 1];
            let cur = &self.states[t];
            for i in 0..n {
                d[i] = prev.theta()[i] - mu;
                z[i] = cur.theta()[i] - mu - prev.source()[i];
            }
            f(t, &d, &z);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `μ | ·`: μ shifts both sides of the θ transition and the θ₀ prior mean.
pub fn mu_conditional(
    c: &Conditioning<'_>,
    params: &StaticParams,
    velocities: &[Velocity],
) -> Result<GaussianConditional> {
    c.check(velocities)?;
    let n = c.cells();
    let phi = c.phi_prime();
    let one_minus = 1.0 - params.alpha;
    let mut resid_sum = 0.0;
    let mut g_theta = vec![0.0; n];
    for t in 1..c.states.len() {
        let prev = &c.states[t - 1];
        let cur = &c.states[t];
        let stencil = StencilWeights::theta(params.alpha, params.beta, velocities[t - 1]);
        c.lattice.apply(&stencil, prev.theta(), &mut g_theta);
        for i in 0..n {
            resid_sum += cur.theta()[i] - g_theta[i] - prev.source()[i];
        }
    }
    let steps = (c.states.len() - 1) as f64;
    let p0 = c.priors.theta0;
    let theta0_sum: f64 = c.states[0].theta().iter().map(|v| v - p0.mean).sum();
    let precision = phi * steps * n as f64 * one_minus * one_minus
        + n as f64 / p0.var
        + c.priors.mu.precision();
    let linear = phi * one_minus * resid_sum + theta0_sum / p0.var + c.priors.mu.mean / c.priors.mu.var;
    GaussianConditional::from_canonical(linear, precision, "mu")
}

/// `μ_r | ·` from the non-missing radar rows of the complete data.
pub fn mu_r_conditional(c: &Conditioning<'_>, _params: &StaticParams) -> Result<GaussianConditional> {
    let n = c.cells();
    let phi_r = c.hyper.phi_r;
    let mut count = 0usize;
    let mut resid = 0.0;
    for k in 0..c.grid.obs_times() {
        let theta = c.states[c.grid.augmented_index(k)].theta();
        for (i, y) in c.data.values[k][..n].iter().enumerate() {
            if let Some(y) = y {
                count += 1;
                resid += y - theta[i];
            }
        }
    }
    let precision = phi_r * count as f64 + c.priors.mu_r.precision();
    let linear = phi_r * resid + c.priors.mu_r.mean / c.priors.mu_r.var;
    GaussianConditional::from_canonical(linear, precision, "mu_r")
}

/// Untruncated Gaussian kernel of `α | ·`; the conditional itself is this
/// restricted to (0, 1).
pub fn alpha_conditional(
    c: &Conditioning<'_>,
    params: &StaticParams,
    velocities: &[Velocity],
) -> Result<GaussianConditional> {
    c.check(velocities)?;
    let n = c.cells();
    let phi = c.phi_prime();
    let mut u = vec![0.0; n];
    let (mut uu, mut zu) = (0.0, 0.0);
    c.for_each_transition(params.mu, |t, d, z| {
        let h = StencilWeights::theta(1.0, params.beta, velocities[t - 1]);
        c.lattice.apply(&h, d, &mut u);
        uu += dot(&u, &u);
        zu += dot(z, &u);
    });
    let p = c.priors.alpha;
    GaussianConditional::from_canonical(phi * zu + p.mean / p.var, phi * uu + p.precision(), "alpha")
}

/// `β | ·`: β multiplies `α L d` in the transition.
pub fn beta_conditional(
    c: &Conditioning<'_>,
    params: &StaticParams,
    velocities: &[Velocity],
) -> Result<GaussianConditional> {
    c.check(velocities)?;
    let n = c.cells();
    let phi = c.phi_prime();
    let alpha = params.alpha;
    let mut lap = vec![0.0; n];
    let mut a = vec![0.0; n];
    let (mut ll, mut rl) = (0.0, 0.0);
    c.for_each_transition(params.mu, |t, d, z| {
        c.lattice.laplacian(d, &mut lap);
        let without_beta = StencilWeights::theta(alpha, 0.0, velocities[t - 1]);
        c.lattice.apply(&without_beta, d, &mut a);
        ll += dot(&lap, &lap);
        rl += z.iter().zip(&a).zip(&lap).map(|((z, a), l)| (z - a) * l).sum::<f64>();
    });
    let p = c.priors.beta;
    GaussianConditional::from_canonical(
        phi * alpha * rl + p.mean / p.var,
        phi * alpha * alpha * ll + p.precision(),
        "beta",
    )
}

/// Bivariate conditional of `ν_t` given the rest of the velocity path.
pub fn velocity_conditional(
    c: &Conditioning<'_>,
    params: &StaticParams,
    velocities: &[Velocity],
    t: usize,
) -> Result<VelocityConditional> {
    c.check(velocities)?;
    let last = c.states.len() - 1;
    if t > last {
        return Err(Error::Bounds(format!("velocity index {t} beyond {last}")));
    }
    let h = c.hyper;
    let mut diag = 0.0;
    let mut lin = [0.0; 2];
    if t == 0 {
        let p = c.priors.nu0;
        diag += p.precision();
        lin[0] += p.mean / p.var;
        lin[1] += p.mean / p.var;
    } else {
        let prev = velocities[t - 1];
        diag += h.phi_nu;
        lin[0] += h.phi_nu * h.alpha_nu * prev.x;
        lin[1] += h.phi_nu * h.alpha_nu * prev.y;
    }
    let mut prec = [[diag, 0.0], [0.0, diag]];
    if t < last {
        let next = velocities[t + 1];
        let ar = h.phi_nu * h.alpha_nu * h.alpha_nu;
        prec[0][0] += ar;
        prec[1][1] += ar;
        lin[0] += h.phi_nu * h.alpha_nu * next.x;
        lin[1] += h.phi_nu * h.alpha_nu * next.y;

        let n = c.cells();
        let mu = params.mu;
        let alpha = params.alpha;
        let phi = c.phi_prime();
        let cur = &c.states[t];
        let nxt = &c.states[t + 1];
        let d: Vec<f64> = cur.theta().iter().map(|v| v - mu).collect();
        let mut cx = vec![0.0; n];
        let mut cy = vec![0.0; n];
        c.lattice.advection_differences(&d, &mut cx, &mut cy);
        let mut base = vec![0.0; n];
        let still = StencilWeights::theta(alpha, params.beta, Velocity::ZERO);
        c.lattice.apply(&still, &d, &mut base);
        let (mut xx, mut xy, mut yy, mut xb, mut yb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let b = nxt.theta()[i] - mu - cur.source()[i] - base[i];
            let (ax, ay) = (alpha * cx[i], alpha * cy[i]);
            xx += ax * ax;
            xy += ax * ay;
            yy += ay * ay;
            xb += ax * b;
            yb += ay * b;
        }
        prec[0][0] += phi * xx;
        prec[0][1] += phi * xy;
        prec[1][0] += phi * xy;
        prec[1][1] += phi * yy;
        lin[0] += phi * xb;
        lin[1] += phi * yb;
    }
    let det = prec[0][0] * prec[1][1] - prec[0][1] * prec[1][0];
    if !(prec[0][0] > 0.0 && det > 0.0 && det.is_finite()) {
        return Err(Error::NumericalGeneral(format!(
            "velocity conditional at step {t} is not positive definite"
        )));
    }
    let mean = [
        (prec[1][1] * lin[0] - prec[0][1] * lin[1]) / det,
        (prec[0][0] * lin[1] - prec[1][0] * lin[0]) / det,
    ];
    Ok(VelocityConditional {
        mean,
        precision: prec,
    })
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Draws μ, μ_r, α and β in turn, each from its conditional given the
/// values already updated.
pub fn update_static<R: Rng + ?Sized>(
    c: &Conditioning<'_>,
    params: &StaticParams,
    velocities: &[Velocity],
    rng: &mut R,
) -> Result<StaticParams> {
    let mut p = *params;
    let g = mu_conditional(c, &p, velocities)?;
    p.mu = g.mean + g.variance().sqrt() * normal(rng);
    let g = mu_r_conditional(c, &p)?;
    p.mu_r = g.mean + g.variance().sqrt() * normal(rng);
    let g = alpha_conditional(c, &p, velocities)?;
    p.alpha = sample_truncated_normal(g.mean, g.precision, 0.0, 1.0, rng)?;
    // Guard against a draw rounding onto the boundary.
    p.alpha = p.alpha.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    let g = beta_conditional(c, &p, velocities)?;
    p.beta = g.mean + g.variance().sqrt() * normal(rng);
    Ok(p)
}

/// Sweeps `ν_0, …, ν_T̃` in increasing order.
pub fn update_velocities<R: Rng + ?Sized>(
    c: &Conditioning<'_>,
    params: &StaticParams,
    velocities: &mut [Velocity],
    rng: &mut R,
) -> Result<()> {
    for t in 0..velocities.len() {
        let g = velocity_conditional(c, params, velocities, t)?;
        let [[a, b], [_, d]] = g.covariance();
        // Cholesky of the 2×2 covariance.
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        let (e1, e2) = (normal(rng), normal(rng));
        velocities[t] = Velocity::new(g.mean[0] + l11 * e1, g.mean[1] + l21 * e1 + l22 * e2);
    }
    Ok(())
}

/// Redraws every censored entry from its truncated Gaussian given the
/// current states; observed positives are copied and missing entries stay
/// empty.
pub fn update_latent_obs(
    states: &[StateVector],
    params: &StaticParams,
    hyper: &Hyperparams,
    grid: &TimeGrid,
    data: &ObservationSet,
    seed: SeedStream,
) -> Result<CompleteData> {
    if states.len() < grid.path_len() {
        return Err(Error::invalid("state path shorter than the time grid"));
    }
    let n = data.cells();
    let mut values = Vec::with_capacity(data.times());
    for k in 0..data.times() {
        let theta = states[grid.augmented_index(k)].theta();
        let mut rng = seed.derive(k as u64).rng();
        let mut row = Vec::with_capacity(data.obs_dim());
        for (r, v) in data.stacked(k).enumerate() {
            row.push(match v {
                ObsValue::Positive(y) => Some(y),
                ObsValue::Missing => None,
                ObsValue::Censored => {
                    let (mean, phi) = if r < n {
                        (theta[r] + params.mu_r, hyper.phi_r)
                    } else {
                        (theta[data.gauge_cells[r - n]], hyper.phi_g)
                    };
                    Some(sample_truncated_normal(mean, phi, f64::NEG_INFINITY, 0.0, &mut rng)?)
                }
            });
        }
        values.push(row);
    }
    Ok(CompleteData { values })
}
