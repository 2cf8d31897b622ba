//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::enks::SmootherConfig;
use crate::error::{Error, Result};
use crate::gibbs::{GibbsConfig, ModelSpec, StateSampler};
use crate::lattice::GridSpec;
use crate::model::{GaussianPrior, Hyperparams, Priors, StaticParams};

/// Where input files live and how they were sampled in time.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Input directory; relative paths resolve against the config file.
    pub dir: PathBuf,
    /// Minutes between observation times.
    pub obs_interval_min: f64,
    /// Minutes covered by one gauge accumulation record.
    pub gauge_interval_min: f64,
    /// Number of observation times; inferred from the files when absent.
    pub obs_times: Option<usize>,
    /// Radar position relative to the grid centre, metres east and north.
    pub radar_offset_m: (f64, f64),
    /// Length of one range bin along a beam.
    pub range_bin_m: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            obs_interval_min: 10.0,
            gauge_interval_min: 10.0,
            obs_times: None,
            radar_offset_m: (0.0, 0.0),
            range_bin_m: 150.0,
        }
    }
}

/// Synthetic-data settings for the `simulate` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateConfig {
    pub obs_times: usize,
    pub gauges: usize,
    pub params: StaticParams,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let p = Priors::default();
        Self {
            obs_times: 24,
            gauges: 5,
            params: StaticParams {
                mu: p.mu.mean,
                mu_r: p.mu_r.mean,
                alpha: p.alpha.mean,
                beta: p.beta.mean,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecastConfig {
    /// Observation steps ahead.
    pub horizon: usize,
    /// Write every simulated path, not just the summaries.
    pub keep_paths: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: 6,
            keep_paths: false,
        }
    }
}

/// Everything a command needs from the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub hyper: Hyperparams,
    pub priors: Priors,
    pub gibbs: GibbsConfig,
    pub seed: u64,
    pub data: DataConfig,
    pub simulate: SimulateConfig,
    pub forecast: ForecastConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::new(16, 500.0).expect("valid default grid"),
            hyper: Hyperparams::default(),
            priors: Priors::default(),
            gibbs: GibbsConfig::default(),
            seed: 0,
            data: DataConfig::default(),
            simulate: SimulateConfig::default(),
            forecast: ForecastConfig::default(),
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn config_error(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {message}"))
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| config_error(e.line, format!("cannot parse {key} = {:?}", e.value)))
}

fn parse_bool(key: &str, e: &Entry) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_error(e.line, format!("{key} must be true or false"))),
    }
}

impl RunConfig {
    /// Parses config text. Unknown or repeated keys are errors; keys not
    /// given keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_error(line, format!("expected key = value, got {content:?}")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(config_error(line, "empty key"));
            }
            let value = value.trim().to_string();
            if let Some(prev) = entries.insert(key.clone(), Entry { line, value }) {
                return Err(config_error(line, format!("{key} already set on line {}", prev.line)));
            }
        }

        let mut cfg = RunConfig::default();
        let mut n = cfg.grid.n();
        let mut cell = cfg.grid.cell_size();
        let mut sampler = "enks".to_string();
        let mut smoother = SmootherConfig::default();

        for (key, e) in &entries {
            let key = key.as_str();
            match key {
                "grid.n" => n = parse_value(key, e)?,
                "grid.cell_size_m" => cell = parse_value(key, e)?,
                "time.t_tilde" => cfg.hyper.t_tilde = parse_value(key, e)?,
                "hyper.phi_g" => cfg.hyper.phi_g = parse_value(key, e)?,
                "hyper.phi_r" => cfg.hyper.phi_r = parse_value(key, e)?,
                "hyper.phi_theta" => cfg.hyper.phi_theta = parse_value(key, e)?,
                "hyper.phi_s" => cfg.hyper.phi_s = parse_value(key, e)?,
                "hyper.phi_nu" => cfg.hyper.phi_nu = parse_value(key, e)?,
                "hyper.alpha_nu" => cfg.hyper.alpha_nu = parse_value(key, e)?,
                "hyper.alpha_star" => cfg.hyper.alpha_star = parse_value(key, e)?,
                "hyper.beta_star" => cfg.hyper.beta_star = parse_value(key, e)?,
                "mcmc.iters" => cfg.gibbs.iters = parse_value(key, e)?,
                "mcmc.burnin" => cfg.gibbs.burnin = parse_value(key, e)?,
                "mcmc.thin" => cfg.gibbs.thin = parse_value(key, e)?,
                "mcmc.state_thin" => cfg.gibbs.state_thin = parse_value(key, e)?,
                "mcmc.sampler" => sampler = e.value.to_ascii_lowercase(),
                "enks.ensemble_size" => smoother.ensemble_size = parse_value(key, e)?,
                "enks.lag" => smoother.lag = parse_value(key, e)?,
                "rng.seed" => cfg.seed = parse_value(key, e)?,
                "data.dir" => cfg.data.dir = PathBuf::from(&e.value),
                "data.obs_interval_min" => cfg.data.obs_interval_min = parse_value(key, e)?,
                "data.gauge_interval_min" => cfg.data.gauge_interval_min = parse_value(key, e)?,
                "data.obs_times" => cfg.data.obs_times = Some(parse_value(key, e)?),
                "data.radar_offset_x_m" => cfg.data.radar_offset_m.0 = parse_value(key, e)?,
                "data.radar_offset_y_m" => cfg.data.radar_offset_m.1 = parse_value(key, e)?,
                "data.range_bin_m" => cfg.data.range_bin_m = parse_value(key, e)?,
                "simulate.obs_times" => cfg.simulate.obs_times = parse_value(key, e)?,
                "simulate.gauges" => cfg.simulate.gauges = parse_value(key, e)?,
                "simulate.mu" => cfg.simulate.params.mu = parse_value(key, e)?,
                "simulate.mu_r" => cfg.simulate.params.mu_r = parse_value(key, e)?,
                "simulate.alpha" => cfg.simulate.params.alpha = parse_value(key, e)?,
                "simulate.beta" => cfg.simulate.params.beta = parse_value(key, e)?,
                "forecast.horizon" => cfg.forecast.horizon = parse_value(key, e)?,
                "forecast.keep_paths" => cfg.forecast.keep_paths = parse_bool(key, e)?,
                _ => match key.strip_prefix("priors.").and_then(|k| k.rsplit_once('.')) {
                    Some((name, field)) => {
                        let prior = prior_mut(&mut cfg.priors, name)
                            .ok_or_else(|| config_error(e.line, format!("unknown prior {name:?}")))?;
                        match field {
                            "mean" => prior.mean = parse_value(key, e)?,
                            "var" => prior.var = parse_value(key, e)?,
                            _ => return Err(config_error(e.line, format!("unknown key {key}"))),
                        }
                    }
                    None => return Err(config_error(e.line, format!("unknown key {key}"))),
                },
            }
        }

        cfg.grid = GridSpec::new(n, cell).map_err(|err| Error::Config(err.to_string()))?;
        cfg.gibbs.sampler = match sampler.as_str() {
            "enks" => StateSampler::Enks(smoother),
            "exact" => StateSampler::Exact,
            other => {
                let line = entries.get("mcmc.sampler").map_or(0, |e| e.line);
                return Err(config_error(line, format!("mcmc.sampler must be enks or exact, got {other:?}")));
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file; `data.dir` is resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.data.dir.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.data.dir = base.join(&cfg.data.dir);
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.hyper.validate().map_err(wrap)?;
        self.priors.validate().map_err(wrap)?;
        self.gibbs.validate().map_err(wrap)?;
        if !(self.data.obs_interval_min > 0.0 && self.data.gauge_interval_min > 0.0) {
            return Err(Error::Config("time intervals must be positive".into()));
        }
        if !(self.data.range_bin_m > 0.0) {
            return Err(Error::Config("data.range_bin_m must be positive".into()));
        }
        if self.simulate.obs_times == 0 {
            return Err(Error::Config("simulate.obs_times must be at least 1".into()));
        }
        self.simulate.params.validate().map_err(wrap)?;
        if self.forecast.horizon == 0 {
            return Err(Error::Config("forecast.horizon must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.grid, self.hyper, self.priors)
    }
}

fn prior_mut<'a>(p: &'a mut Priors, name: &str) -> Option<&'a mut GaussianPrior> {
    Some(match name {
        "mu" => &mut p.mu,
        "mu_r" => &mut p.mu_r,
        "alpha" => &mut p.alpha,
        "beta" => &mut p.beta,
        "theta0" => &mut p.theta0,
        "source0" => &mut p.source0,
        "nu0" => &mut p.nu0,
        _ => return None,
    })
}
