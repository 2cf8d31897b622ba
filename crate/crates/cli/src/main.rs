//! `stormfield` command-line front end.
//!
//! Inputs are read from the config's `data.dir`; everything a subcommand
//! writes goes to `--out` (default: the current directory). `dic` and
//! `forecast` read the `fit` outputs found in `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use stormfield::analysis::{dic, forecast, summarize_states};
use stormfield::gibbs::run_genks;
use stormfield::io::files;
use stormfield::io::{
    ingest_gauges, ingest_radar_polar, observation_set, GaugeSeries, GriddedRates, RadarGeometry,
    RunConfig,
};
use stormfield::model::{time_map, ObsValue};
use stormfield::simulator::simulate;
use stormfield::{Error, Lattice, Result};

#[derive(Parser)]
#[command(name = "stormfield", version, about = "Bayesian lattice model for radar and rain-gauge precipitation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate synthetic radar and gauge data with ground truth.
    Simulate(Common),
    /// Grid polar radar sweeps and convert gauge accumulations to rates.
    Ingest(Common),
    /// Run the Gibbs sampler on gridded data.
    Fit(Common),
    /// Compute DIC from the traces of a fit.
    Dic(Common),
    /// Forecast forward from the terminal draws of a fit.
    Forecast(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Overrides `rng.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

struct Run {
    name: &'static str,
    cfg: RunConfig,
    config_text: String,
    out: PathBuf,
    written: Vec<PathBuf>,
}

impl Run {
    fn new(name: &'static str, args: &Common) -> Result<Self> {
        let config_text = fs::read_to_string(&args.config)
            .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
        let mut cfg = RunConfig::from_file(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        Ok(Self {
            name,
            cfg,
            config_text,
            out: args.out.clone(),
            written: Vec::new(),
        })
    }

    fn input(&self, file: &str) -> PathBuf {
        self.cfg.data.dir.join(file)
    }

    fn output(&mut self, file: &str) -> PathBuf {
        let path = self.out.join(file);
        self.written.push(path.clone());
        path
    }

    /// Config hash, seed and a digest of every file written.
    fn finish(self) -> Result<()> {
        let mut text = format!(
            "command {}\nversion {}\nconfig_sha256 {}\nseed {}\n",
            self.name,
            env!("CARGO_PKG_VERSION"),
            hex(&Sha256::digest(self.config_text.as_bytes())),
            self.cfg.seed
        );
        for path in &self.written {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            text.push_str(&format!("output {name} {}\n", hex(&Sha256::digest(&bytes))));
        }
        let path = self.out.join(format!("manifest_{}.txt", self.name));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => Run::new("simulate", a).and_then(run_simulate),
        Command::Ingest(a) => Run::new("ingest", a).and_then(run_ingest),
        Command::Fit(a) => Run::new("fit", a).and_then(run_fit),
        Command::Dic(a) => Run::new("dic", a).and_then(run_dic),
        Command::Forecast(a) => Run::new("forecast", a).and_then(run_forecast),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stormfield: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Back to mm/h from the transformed scale; censored readings become 0.
fn to_rate(v: &ObsValue) -> Option<f64> {
    match v {
        ObsValue::Positive(y) => Some(y.exp_m1()),
        ObsValue::Censored => Some(0.0),
        ObsValue::Missing => None,
    }
}

fn run_simulate(mut run: Run) -> Result<()> {
    let cfg = &run.cfg;
    let lattice = Lattice::new(cfg.grid);
    let grid = time_map(cfg.simulate.obs_times, cfg.hyper.t_tilde);
    let sim = simulate(
        &cfg.simulate.params,
        &cfg.hyper,
        &cfg.priors,
        &lattice,
        &grid,
        cfg.simulate.gauges,
        cfg.seed,
    )?;
    let obs = &sim.observed;
    let radar = GriddedRates {
        rates: obs.radar.iter().map(|r| r.iter().map(to_rate).collect()).collect(),
    };
    let gauges = GaugeSeries {
        ids: obs.gauge_ids.clone(),
        cells: obs.gauge_cells.clone(),
        rates: obs.gauges.iter().map(|r| r.iter().map(to_rate).collect()).collect(),
    };
    let slices: Vec<_> = (0..grid.obs_times())
        .map(|k| &sim.path.states[grid.augmented_index(k)])
        .collect();
    let params = cfg.simulate.params;
    let g = cfg.grid;

    files::write_radar_grid(&run.output("radar_grid.csv"), &g, &radar)?;
    files::write_gauge_meta(&run.output("gauge_meta.csv"), &files::gauge_meta_of(&g, &gauges))?;
    files::write_gauge_rates(&run.output("gauge_rates.csv"), &gauges)?;
    files::write_truth_params(&run.output("truth_params.csv"), &params)?;
    files::write_truth_states(&run.output("truth_state.csv"), &g, &slices)?;
    files::write_velocity_path(&run.output("truth_velocity.csv"), &sim.path.velocities)?;
    run.finish()
}

fn run_ingest(mut run: Run) -> Result<()> {
    let cfg = &run.cfg;
    let geometry = RadarGeometry {
        range_bin_m: cfg.data.range_bin_m,
        offset_m: cfg.data.radar_offset_m,
    };
    let polar = files::read_radar_polar(&run.input("radar_polar.csv"))?;
    let radar = ingest_radar_polar(&polar, &cfg.grid, &geometry, cfg.data.obs_times)?;
    let meta_path = run.input("gauge_meta.csv");
    let (meta, gauges) = if meta_path.exists() {
        let meta = files::read_gauge_meta(&meta_path)?;
        let records = files::read_gauges(&run.input("gauges.csv"))?;
        let series = ingest_gauges(
            &records,
            &meta,
            &cfg.grid,
            cfg.data.gauge_interval_min,
            cfg.data.obs_interval_min,
            Some(radar.times()),
        )?;
        (meta, series)
    } else {
        (Vec::new(), GaugeSeries::empty(radar.times()))
    };
    let g = cfg.grid;
    files::write_radar_grid(&run.output("radar_grid.csv"), &g, &radar)?;
    files::write_gauge_meta(&run.output("gauge_meta.csv"), &meta)?;
    files::write_gauge_rates(&run.output("gauge_rates.csv"), &gauges)?;
    run.finish()
}

/// Reads gridded radar and, when present, gauge files from `dir`.
fn read_observations(cfg: &RunConfig, dir: &Path) -> Result<stormfield::ObservationSet> {
    let radar = files::read_radar_grid(&dir.join("radar_grid.csv"), &cfg.grid, cfg.data.obs_times)?;
    let meta_path = dir.join("gauge_meta.csv");
    let gauges = if meta_path.exists() {
        let meta = files::read_gauge_meta(&meta_path)?;
        files::read_gauge_rates(&dir.join("gauge_rates.csv"), &cfg.grid, &meta, radar.times())?
    } else {
        GaugeSeries::empty(radar.times())
    };
    observation_set(&cfg.grid, &radar, &gauges)
}

fn run_fit(mut run: Run) -> Result<()> {
    let cfg = &run.cfg;
    let data = read_observations(cfg, &cfg.data.dir)?;
    let store = run_genks(&cfg.model_spec(), &data, &cfg.gibbs, cfg.seed)?;
    let summary = summarize_states(&store)?;
    let result = dic(&store.loglik_obs)?;
    let (g, n) = (cfg.grid, store.len());

    files::write_traces(&run.output("traces.csv"), &store)?;
    files::write_state_summary(&run.output("state_summary.csv"), &g, &summary)?;
    files::write_velocity_summary(&run.output("velocity_summary.csv"), &summary)?;
    files::write_terminal_draws(&run.output("terminal_draws.csv"), &store.terminal)?;
    files::write_dic(&run.output("dic.csv"), &result, n)?;
    run.finish()
}

fn run_dic(mut run: Run) -> Result<()> {
    let loglik = files::read_trace(&run.out.join("traces.csv"), "loglik_obs")?;
    if loglik.is_empty() {
        return Err(Error::DataGeneral("traces.csv has no loglik_obs entries".into()));
    }
    let result = dic(&loglik)?;
    files::write_dic(&run.output("dic.csv"), &result, loglik.len())?;
    println!("DIC {:.6} p_D {:.6} mean deviance {:.6}", result.dic, result.p_d, result.mean_deviance);
    run.finish()
}

fn run_forecast(mut run: Run) -> Result<()> {
    let cfg = &run.cfg;
    let draws = files::read_terminal_draws(&run.out.join("terminal_draws.csv"), cfg.grid.cells())?;
    let lattice = Lattice::new(cfg.grid);
    let set = forecast(
        &draws,
        cfg.forecast.horizon,
        &cfg.hyper,
        &lattice,
        cfg.seed,
        cfg.forecast.keep_paths,
    )?;
    let g = cfg.grid;
    files::write_forecast(&run.output("forecast.csv"), &g, &set)?;
    run.finish()
}
