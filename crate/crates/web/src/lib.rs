//! Browser bindings for the lattice model demo page in `www/`.
//!
//! Three operations are exposed: simulating a storm under a chosen wind,
//! inspecting the five-point stencil for given parameters, and converting
//! radar reflectivity to rain rate.

use wasm_bindgen::prelude::*;

use stormfield::io::z_to_rate;
use stormfield::model::{time_map, ObsValue};
use stormfield::simulator::{simulate_observations, simulate_system_with_velocity};
use stormfield::{GridSpec, Hyperparams, Lattice, Priors, StaticParams, StencilWeights, Velocity};

fn js_err(e: stormfield::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rate_of(theta: f64) -> f64 {
    if theta > 0.0 {
        theta.exp_m1()
    } else {
        0.0
    }
}

/// A simulated storm: latent rain rates and the radar's view of them at
/// each observation time.
#[wasm_bindgen]
pub struct Storm {
    n: usize,
    rates: Vec<Vec<f64>>,
    radar: Vec<Vec<f64>>,
}

#[wasm_bindgen]
impl Storm {
    /// Simulates `steps` observation times on an `n × n` lattice with the
    /// velocity fixed at `(nu_x, nu_y)` cells per step.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        steps: usize,
        mu: f64,
        alpha: f64,
        beta: f64,
        nu_x: f64,
        nu_y: f64,
        seed: u64,
    ) -> Result<Storm, JsError> {
        let params = StaticParams {
            mu,
            mu_r: -0.2,
            alpha,
            beta,
        };
        params.validate().map_err(js_err)?;
        let lattice = Lattice::new(GridSpec::new(n, 500.0).map_err(js_err)?);
        let hyper = Hyperparams::default();
        let priors = Priors::default();
        let grid = time_map(steps, 0);
        let nu = Velocity::new(nu_x, nu_y);
        let path = simulate_system_with_velocity(&params, &hyper, &priors, &lattice, &grid, nu, seed)
            .map_err(js_err)?;
        let (_, observed) =
            simulate_observations(&path, &params, &hyper, &grid, &[], Vec::new(), seed).map_err(js_err)?;
        let rates = (0..steps)
            .map(|k| path.states[grid.augmented_index(k)].theta().iter().map(|&t| rate_of(t)).collect())
            .collect();
        let radar = observed
            .radar
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| match v {
                        ObsValue::Positive(y) => y.exp_m1(),
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        Ok(Storm { n, rates, radar })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.rates.len()
    }

    /// Rain rate (mm/h) per cell at step `k`, row by row from the south.
    pub fn rates(&self, k: usize) -> Vec<f64> {
        self.rates.get(k).cloned().unwrap_or_default()
    }

    /// Radar-reported rate per cell at step `k`.
    pub fn radar(&self, k: usize) -> Vec<f64> {
        self.radar.get(k).cloned().unwrap_or_default()
    }

    /// Largest rate over all steps, for a fixed colour scale.
    pub fn max_rate(&self) -> f64 {
        self.rates.iter().chain(&self.radar).flatten().fold(0.0, |a, &b| a.max(b))
    }
}

/// `[centre, east, west, north, south, sum]` weights of the θ stencil.
#[wasm_bindgen]
pub fn stencil_weights(alpha: f64, beta: f64, nu_x: f64, nu_y: f64) -> Vec<f64> {
    let w = StencilWeights::theta(alpha, beta, Velocity::new(nu_x, nu_y));
    vec![w.center, w.east, w.west, w.north, w.south, w.sum()]
}

/// Rain rate (mm/h) and transformed value `log(1 + R)` for a reflectivity.
#[wasm_bindgen]
pub fn reflectivity_to_rate(z_dbz: f64) -> Vec<f64> {
    let r = z_to_rate(z_dbz);
    vec![r, r.ln_1p()]
}
