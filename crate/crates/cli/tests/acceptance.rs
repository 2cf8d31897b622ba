//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 5 and 6 run the desk-scale sampler 30 times (about 45 min on an idle
//! core) and only run with `STORMFIELD_ACCEPTANCE_FULL=1`; otherwise they
//! print SKIP. Exit status is non-zero if any criterion that ran failed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use stormfield::analysis::{dic, percentile, tobit_log_density};
use stormfield::enks::{enks_draw, exact_ffbs, EnksDraw, ExactSmoother, SmootherConfig, StateProblem};
use stormfield::gibbs::{
    alpha_conditional, beta_conditional, mu_conditional, mu_r_conditional, run_genks,
    velocity_conditional, Conditioning, DrawStore, GibbsConfig, ModelSpec,
    StateSampler,
};
use stormfield::io::{ingest_gauges, ingest_radar_polar, z_to_rate, GaugeMeta, GaugeRecord, PolarRadarRecord, RadarGeometry};
use stormfield::lattice::{build_source_evolution, build_theta_evolution};
use stormfield::model::{assemble_dlm, CompleteData, ObsValue, StateVector};
use stormfield::rng::SeedStream;
use stormfield::simulator::simulate;
use stormfield::{GridSpec, Hyperparams, Lattice, Priors, StaticParams, StencilWeights, TimeGrid, Velocity};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {id}. {name}: {detail} ({:.1} s)", started.elapsed().as_secs_f64());
    }

    fn skip(&self, id: u32, name: &str, why: &str) {
        println!("[SKIP] {id}. {name}: {why}");
    }
}

fn main() {
    let full = std::env::var("STORMFIELD_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let mut r = Report { failed: 0 };
    stencil_algebra(&mut r);
    enks_vs_exact(&mut r);
    fcd_quadrature(&mut r);
    tobit_oracle(&mut r);
    if full {
        recovery_and_dic(&mut r);
    } else {
        let why = "set STORMFIELD_ACCEPTANCE_FULL=1 (about 45 min on an idle core)";
        r.skip(5, "parameter recovery", why);
        r.skip(6, "DIC selection", why);
    }
    ingestion(&mut r);
    determinism(&mut r);
    if r.failed > 0 {
        println!("{} criteria failed", r.failed);
        std::process::exit(1);
    }
}

// 1 ------------------------------------------------------------------------

fn stencil_algebra(r: &mut Report) {
    let t0 = Instant::now();
    let (alpha, beta, nu) = (0.85, 0.12, Velocity::new(0.031, -0.047));
    let h = Hyperparams::default();
    let mut worst: f64 = 0.0;
    for n in 3..=8 {
        let lattice = Lattice::new(GridSpec::new(n, 500.0).unwrap());
        let g = build_theta_evolution(alpha, beta, nu, &lattice).unwrap().to_dense();
        let gs = build_source_evolution(h.alpha_star, h.beta_star, &lattice).unwrap().to_dense();
        for i in 0..n * n {
            worst = worst.max((g.row(i).sum() - alpha).abs());
            worst = worst.max((gs.row(i).sum() - h.alpha_star).abs());
        }
        // Constant field: θ = μ + c, S = 0 stays at μ + αc.
        let p = StaticParams { mu: 0.3, mu_r: 0.0, alpha, beta };
        let dlm = assemble_dlm(p, h, &lattice, &[]).unwrap();
        let c = 1.5;
        let mut x = vec![0.3 + c; n * n];
        x.extend(vec![0.0; n * n]);
        let mut out = vec![0.0; 2 * n * n];
        dlm.propagate(&lattice, nu, &x, &mut out);
        for i in 0..n * n {
            worst = worst.max((out[i] - (0.3 + alpha * c)).abs());
            worst = worst.max(out[n * n + i].abs());
        }
        // Matrix-free application agrees with the dense operator.
        let v: Vec<f64> = (0..n * n).map(|k| ((k * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let mut applied = vec![0.0; n * n];
        lattice.apply(&StencilWeights::theta(alpha, beta, nu), &v, &mut applied);
        let dense = &g * nalgebra::DVector::from_column_slice(&v);
        for i in 0..n * n {
            worst = worst.max((applied[i] - dense[i]).abs());
        }
    }
    r.line(1, "stencil algebra", worst < 1e-12, format!("max deviation {worst:.2e} (tol 1e-12)"), t0);
}

// 2 ------------------------------------------------------------------------

struct StateFixture {
    lattice: Lattice,
    dlm: stormfield::Dlm,
    priors: Priors,
    grid: TimeGrid,
    velocities: Vec<Velocity>,
    data: CompleteData,
}

impl StateFixture {
    fn problem(&self) -> StateProblem<'_> {
        StateProblem {
            lattice: &self.lattice,
            dlm: &self.dlm,
            priors: &self.priors,
            grid: &self.grid,
            velocities: &self.velocities,
            data: &self.data,
        }
    }
}

fn rms_in_sd_units(exact: &ExactSmoother, draw: &EnksDraw) -> f64 {
    let (mut ss, mut count) = (0.0, 0.0);
    for (t, m) in draw.means.iter().enumerate() {
        let sd = exact.smoothed_covs[t].diagonal().map(f64::sqrt);
        let e = (m - &exact.smoothed_means[t]).component_div(&sd);
        ss += e.norm_squared();
        count += e.len() as f64;
    }
    (ss / count).sqrt()
}

fn enks_vs_exact(r: &mut Report) {
    let t0 = Instant::now();
    let lattice = Lattice::new(GridSpec::new(6, 500.0).unwrap());
    let params = StaticParams { mu: 0.3, mu_r: -0.4, alpha: 0.85, beta: 0.12 };
    let hyper = Hyperparams::default();
    let priors = Priors::default();
    let grid = stormfield::time_map(10, 0);
    let sim = simulate(&params, &hyper, &priors, &lattice, &grid, 3, 2024).unwrap();
    let f = StateFixture {
        dlm: assemble_dlm(params, hyper, &lattice, &sim.observed.gauge_cells).unwrap(),
        lattice,
        priors,
        grid,
        velocities: sim.path.velocities.clone(),
        data: CompleteData::from_values(sim.complete),
    };
    let exact = exact_ffbs(f.problem(), 0).unwrap();
    let sizes = [50, 200, 1000, 4000];
    let errs: Vec<f64> = sizes
        .iter()
        .map(|&ne| {
            let c = SmootherConfig { ensemble_size: ne, lag: 10 };
            rms_in_sd_units(&exact, &enks_draw(f.problem(), &c, 7).unwrap())
        })
        .collect();
    let inversions = errs.windows(2).filter(|w| w[1] >= w[0]).count();
    let pass = errs[3] < 0.15 && inversions <= 1;
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.4}")).collect();
    r.line(
        2,
        "EnKS vs exact smoother",
        pass,
        format!("RMS over Ne {sizes:?} = [{}], {inversions} inversion(s); need last < 0.15, <= 1 inversion", shown.join(", ")),
        t0,
    );
}

// 3 ------------------------------------------------------------------------

struct Instance {
    lattice: Lattice,
    hyper: Hyperparams,
    priors: Priors,
    grid: TimeGrid,
    states: Vec<StateVector>,
    velocities: Vec<Velocity>,
    complete: CompleteData,
    gauge_cells: Vec<usize>,
    params: StaticParams,
}

impl Instance {
    fn new(seed: u64, t_tilde: usize) -> Self {
        let lattice = Lattice::new(GridSpec::new(3, 500.0).unwrap());
        let hyper = Hyperparams { t_tilde, ..Hyperparams::default() };
        let priors = Priors::default();
        let grid = stormfield::time_map(2, t_tilde);
        let truth = StaticParams { mu: 0.3, mu_r: -0.4, alpha: 0.85, beta: 0.12 };
        let sim = simulate(&truth, &hyper, &priors, &lattice, &grid, 2, seed).unwrap();
        Self {
            lattice,
            hyper,
            priors,
            grid,
            states: sim.path.states,
            velocities: sim.path.velocities,
            complete: CompleteData::from_values(sim.complete),
            gauge_cells: sim.observed.gauge_cells,
            params: StaticParams { mu: 0.25, mu_r: -0.3, alpha: 0.8, beta: 0.1 },
        }
    }

    fn cond(&self) -> Conditioning<'_> {
        Conditioning {
            lattice: &self.lattice,
            hyper: &self.hyper,
            priors: &self.priors,
            grid: &self.grid,
            states: &self.states,
            data: &self.complete,
        }
    }

    /// Unnormalised log joint, written out cell by cell from the model
    /// equations.
    fn log_joint(&self, p: &StaticParams, vel: &[Velocity]) -> f64 {
        let (h, pr) = (&self.hyper, &self.priors);
        let grid = self.lattice.grid();
        let n = grid.cells();
        let phi = h.phi_theta * (h.t_tilde as f64 + 1.0);
        let phis = h.phi_s * (h.t_tilde as f64 + 1.0);
        let gauss = |x: f64, m: f64, v: f64| -0.5 * (x - m) * (x - m) / v;
        let mut lp = gauss(p.mu, pr.mu.mean, pr.mu.var)
            + gauss(p.mu_r, pr.mu_r.mean, pr.mu_r.var)
            + gauss(p.alpha, pr.alpha.mean, pr.alpha.var)
            + gauss(p.beta, pr.beta.mean, pr.beta.var);
        let x0 = &self.states[0].0;
        for i in 0..n {
            lp += gauss(x0[i], pr.theta0.mean + p.mu, pr.theta0.var);
            lp += gauss(x0[n + i], pr.source0.mean, pr.source0.var);
        }
        lp += gauss(vel[0].x, pr.nu0.mean, pr.nu0.var) + gauss(vel[0].y, pr.nu0.mean, pr.nu0.var);
        for t in 1..self.states.len() {
            let (prev, cur, nu) = (&self.states[t - 1].0, &self.states[t].0, vel[t - 1]);
            for idx in 0..n {
                let [e, w, no, so] = grid.periodic_neighbors(idx).unwrap();
                let d = |c: usize| prev[c] - p.mu;
                let pred = p.mu
                    + p.alpha
                        * ((1.0 - 4.0 * p.beta) * d(idx)
                            + (p.beta - nu.x) * d(e)
                            + (p.beta + nu.x) * d(w)
                            + (p.beta - nu.y) * d(no)
                            + (p.beta + nu.y) * d(so))
                    + prev[n + idx];
                lp += -0.5 * phi * (cur[idx] - pred).powi(2);
                let (a, b) = (h.alpha_star, h.beta_star);
                let spred = a * (1.0 - 4.0 * b) * prev[n + idx]
                    + a * b * (prev[n + e] + prev[n + w] + prev[n + no] + prev[n + so]);
                lp += -0.5 * phis * (cur[n + idx] - spred).powi(2);
            }
            lp += -0.5 * h.phi_nu * (vel[t].x - h.alpha_nu * vel[t - 1].x).powi(2);
            lp += -0.5 * h.phi_nu * (vel[t].y - h.alpha_nu * vel[t - 1].y).powi(2);
        }
        for (k, row) in self.complete.values.iter().enumerate() {
            let theta = self.states[self.grid.augmented_index(k)].theta();
            for (r, y) in row.iter().enumerate() {
                let Some(y) = y else { continue };
                lp += if r < n {
                    -0.5 * h.phi_r * (y - theta[r] - p.mu_r).powi(2)
                } else {
                    -0.5 * h.phi_g * (y - theta[self.gauge_cells[r - n]]).powi(2)
                };
            }
        }
        lp
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

/// Trapezoid mean and variance of an unnormalised log density on a grid.
fn grid_moments(xs: &[f64], logf: &[f64]) -> (f64, f64) {
    let max = logf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tw = |i: usize| if i == 0 || i == xs.len() - 1 { 0.5 } else { 1.0 };
    let w: Vec<f64> = (0..xs.len()).map(|i| tw(i) * (logf[i] - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let m = (0..xs.len()).map(|i| w[i] * xs[i]).sum::<f64>() / z;
    let v = (0..xs.len()).map(|i| w[i] * (xs[i] - m).powi(2)).sum::<f64>() / z;
    (m, v)
}

fn fcd_quadrature(r: &mut Report) {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut track = |a: (f64, f64), b: (f64, f64)| worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
    for (seed, t_tilde) in [(1, 0), (2, 1)] {
        let inst = Instance::new(seed, t_tilde);
        let c = inst.cond();
        let p = inst.params;
        let v = &inst.velocities;
        type Setter = fn(&mut StaticParams, f64);
        let gaussian: [(_, Setter); 3] = [
            (mu_conditional(&c, &p, v).unwrap(), |p, x| p.mu = x),
            (mu_r_conditional(&c, &p).unwrap(), |p, x| p.mu_r = x),
            (beta_conditional(&c, &p, v).unwrap(), |p, x| p.beta = x),
        ];
        for (g, set) in gaussian {
            let sd = g.variance().sqrt();
            let xs = linspace(g.mean - 12.0 * sd, g.mean + 12.0 * sd, 4001);
            let logf: Vec<f64> = xs
                .iter()
                .map(|&x| {
                    let mut q = p;
                    set(&mut q, x);
                    inst.log_joint(&q, v)
                })
                .collect();
            track((g.mean, g.variance()), grid_moments(&xs, &logf));
        }

        // α lives on (0, 1): compare truncated-Gaussian moments.
        let g = alpha_conditional(&c, &p, v).unwrap();
        let sd = g.variance().sqrt();
        let std = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        use statrs::distribution::{Continuous, ContinuousCDF};
        let (a, b) = (-g.mean / sd, (1.0 - g.mean) / sd);
        let z = std.cdf(b) - std.cdf(a);
        let (pa, pb) = (std.pdf(a), std.pdf(b));
        let mean = g.mean + sd * (pa - pb) / z;
        let var = sd * sd * (1.0 + (a * pa - b * pb) / z - ((pa - pb) / z).powi(2));
        let xs = linspace((g.mean - 12.0 * sd).max(0.0), (g.mean + 12.0 * sd).min(1.0), 8001);
        let logf: Vec<f64> = xs.iter().map(|&x| inst.log_joint(&StaticParams { alpha: x, ..p }, v)).collect();
        track((mean, var), grid_moments(&xs, &logf));

        // One velocity on a 2-D grid.
        let t = 1;
        let g = velocity_conditional(&c, &p, v, t).unwrap();
        let cov = g.covariance();
        let k = 601;
        let xs = linspace(g.mean[0] - 10.0 * cov[0][0].sqrt(), g.mean[0] + 10.0 * cov[0][0].sqrt(), k);
        let ys = linspace(g.mean[1] - 10.0 * cov[1][1].sqrt(), g.mean[1] + 10.0 * cov[1][1].sqrt(), k);
        let mut vel = v.clone();
        let mut logf = vec![0.0; k * k];
        for (ia, &x) in xs.iter().enumerate() {
            for (ib, &y) in ys.iter().enumerate() {
                vel[t] = Velocity::new(x, y);
                logf[ia * k + ib] = inst.log_joint(&p, &vel);
            }
        }
        let max = logf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tw = |i: usize| if i == 0 || i == k - 1 { 0.5 } else { 1.0 };
        let w = |ia: usize, ib: usize| tw(ia) * tw(ib) * (logf[ia * k + ib] - max).exp();
        let (mut zs, mut mx, mut my) = (0.0, 0.0, 0.0);
        for ia in 0..k {
            for ib in 0..k {
                zs += w(ia, ib);
                mx += w(ia, ib) * xs[ia];
                my += w(ia, ib) * ys[ib];
            }
        }
        mx /= zs;
        my /= zs;
        let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
        for ia in 0..k {
            for ib in 0..k {
                let wt = w(ia, ib) / zs;
                cxx += wt * (xs[ia] - mx).powi(2);
                cxy += wt * (xs[ia] - mx) * (ys[ib] - my);
                cyy += wt * (ys[ib] - my).powi(2);
            }
        }
        track((g.mean[0], cov[0][0]), (mx, cxx));
        track((g.mean[1], cov[1][1]), (my, cyy));
        track((cov[0][1], 0.0), (cxy, 0.0));
    }
    r.line(
        3,
        "FCD quadrature",
        worst < 1e-6,
        format!("max |moment difference| {worst:.2e} over mu, mu_r, alpha, beta, nu_t (tol 1e-6)"),
        t0,
    );
}

// 4 ------------------------------------------------------------------------

/// log P(Y ≤ 0) for Y ~ N(mean, 1/precision) by composite Simpson in the
/// standardised variable.
fn censored_by_quadrature(mean: f64, precision: f64) -> f64 {
    let upper = -mean * precision.sqrt();
    let lower = upper.min(0.0) - 15.0;
    let steps = 40_000;
    let h = (upper - lower) / steps as f64;
    let log_peak = -0.5 * upper * upper;
    let f = |u: f64| (-0.5 * u * u - log_peak).exp();
    let mut s = f(lower) + f(upper);
    for k in 1..steps {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lower + k as f64 * h);
    }
    (s * h / 3.0).ln() + log_peak - 0.5 * LN_2PI
}

fn tobit_oracle(r: &mut Report) {
    let t0 = Instant::now();
    let mut rng = SeedStream::new(4).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mean = rng.gen_range(-4.0..4.0);
        let precision = rng.gen_range(0.1..50.0);
        let got = tobit_log_density(ObsValue::Censored, mean, precision);
        worst = worst.max((got - censored_by_quadrature(mean, precision)).abs());
    }
    r.line(4, "Tobit censored likelihood", worst < 1e-8, format!("max |log difference| {worst:.2e} over 100 pairs (tol 1e-8)"), t0);
}

// 5, 6 ---------------------------------------------------------------------

/// Truth for one seed: ρ drawn from its prior, redrawn until it is a valid
/// parameter set with β > 0.
fn prior_truth(priors: &Priors, seed: u64) -> StaticParams {
    let mut rng = SeedStream::new(seed).derive(0xACCE).rng();
    loop {
        let mut draw = |g: stormfield::GaussianPrior| g.mean + g.var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let p = StaticParams {
            mu: draw(priors.mu),
            mu_r: draw(priors.mu_r),
            alpha: draw(priors.alpha),
            beta: draw(priors.beta),
        };
        if p.validate().is_ok() && p.beta > 0.0 {
            return p;
        }
    }
}

fn interval(store: &DrawStore, pick: fn(&StaticParams) -> f64, level: f64) -> (f64, f64) {
    let mut v: Vec<f64> = store.params.iter().map(pick).collect();
    v.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (percentile(&v, tail), percentile(&v, 1.0 - tail))
}

fn recovery_and_dic(r: &mut Report) {
    let seeds = 1..=10u64;
    let lattice = Lattice::new(GridSpec::new(16, 500.0).unwrap());
    let grid = stormfield::time_map(24, 0);
    let priors = Priors::default();
    let config = GibbsConfig {
        iters: 2000,
        burnin: 1000,
        thin: 1,
        state_thin: 10,
        sampler: StateSampler::Enks(SmootherConfig { ensemble_size: 100, lag: 3 }),
    };
    let hyper_at = |phi_theta: f64| Hyperparams { phi_theta, ..Hyperparams::default() };

    let t0 = Instant::now();
    let mut datasets = Vec::new();
    let mut fits40 = Vec::new();
    let (mut loc_hits, mut ab_hits) = (0, 0);
    for seed in seeds.clone() {
        let truth = prior_truth(&priors, seed);
        let sim = simulate(&truth, &hyper_at(40.0), &priors, &lattice, &grid, 5, seed).unwrap();
        let model = ModelSpec::new(*lattice.grid(), hyper_at(40.0), priors);
        let store = run_genks(&model, &sim.observed, &config, seed).unwrap();
        let inside = |pick: fn(&StaticParams) -> f64, level: f64| {
            let (lo, hi) = interval(&store, pick, level);
            (lo..=hi).contains(&pick(&truth))
        };
        let loc = inside(|p| p.mu, 0.95) && inside(|p| p.mu_r, 0.95);
        let ab = inside(|p| p.alpha, 0.99) && inside(|p| p.beta, 0.99);
        println!(
            "    seed {seed}: truth mu {:.3} mu_r {:.3} alpha {:.3} beta {:.3}; mu/mu_r in 95%: {loc}; alpha/beta in 99%: {ab}",
            truth.mu, truth.mu_r, truth.alpha, truth.beta
        );
        loc_hits += usize::from(loc);
        ab_hits += usize::from(ab);
        datasets.push(sim.observed);
        fits40.push(dic(&store.loglik_obs).unwrap().dic);
    }
    let secs = t0.elapsed().as_secs_f64();
    r.line(
        5,
        "parameter recovery",
        loc_hits >= 8 && ab_hits >= 7 && secs < 1800.0,
        format!("mu and mu_r covered in {loc_hits}/10 (need 8), alpha and beta in {ab_hits}/10 (need 7), runtime {secs:.0} s (limit 1800)"),
        t0,
    );

    // The φ_θ = 40 fits above are reused; only 20 and 60 are new.
    let t1 = Instant::now();
    let mut wins = 0;
    for (k, seed) in seeds.enumerate() {
        let mut scores = [0.0; 3];
        scores[1] = fits40[k];
        for (slot, phi) in [(0, 20.0), (2, 60.0)] {
            let model = ModelSpec::new(*lattice.grid(), hyper_at(phi), priors);
            let store = run_genks(&model, &datasets[k], &config, seed).unwrap();
            scores[slot] = dic(&store.loglik_obs).unwrap().dic;
        }
        let best = scores.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        println!("    seed {seed}: DIC at phi_theta 20/40/60 = {:.1} / {:.1} / {:.1}", scores[0], scores[1], scores[2]);
        wins += usize::from(best == 1);
    }
    let secs = secs + t1.elapsed().as_secs_f64();
    r.line(
        6,
        "DIC selection",
        wins >= 7 && secs < 5400.0,
        format!("minimum at phi_theta = 40 in {wins}/10 (need 7), runtime {secs:.0} s including the reused fits (limit 5400)"),
        t0,
    );
}

// 7 ------------------------------------------------------------------------

fn ingestion(r: &mut Report) {
    let t0 = Instant::now();
    let mut notes = Vec::new();
    // (1/200)^0.625 = exp(−0.625 ln 200) = 0.036463…
    let threshold = z_to_rate(1e-12);
    let ok_threshold = format!("{threshold:.4}") == "0.0365";
    notes.push(format!("threshold {threshold:.6}"));

    let grid = GridSpec::new(4, 500.0).unwrap();
    let meta = vec![GaugeMeta { gauge_id: "a".into(), row: 2, col: 3 }];
    let recs: Vec<GaugeRecord> = [0.1, 0.25, 0.0]
        .iter()
        .enumerate()
        .map(|(t, &mm)| GaugeRecord { time_index: t + 1, gauge_id: "a".into(), accum_mm: mm })
        .collect();
    let series = ingest_gauges(&recs, &meta, &grid, 10.0, 10.0, None).unwrap();
    let want = [0.6, 1.5, 0.0];
    let ok_gauge = series.rates.iter().zip(want).all(|(row, w)| (row[0].unwrap() - w).abs() < 1e-12)
        && series.cells == vec![grid.linear_index(3, 2).unwrap()];
    notes.push(format!("gauge rates {:?}", series.rates.iter().map(|r| r[0].unwrap()).collect::<Vec<_>>()));

    // Two returns 150 m and 300 m east of a centred radar share one cell;
    // one 600 m north lands alone.
    let geometry = RadarGeometry::default();
    let z_for = |rate: f64| 10.0 * (200.0 * rate.powf(1.6)).log10();
    let polar = [
        PolarRadarRecord { time_index: 1, azimuth_deg: 90.0, range_bin: 1, z_dbz: z_for(2.0) },
        PolarRadarRecord { time_index: 1, azimuth_deg: 90.0, range_bin: 2, z_dbz: z_for(4.0) },
        PolarRadarRecord { time_index: 1, azimuth_deg: 0.0, range_bin: 4, z_dbz: z_for(1.0) },
    ];
    let gridded = ingest_radar_polar(&polar, &grid, &geometry, None).unwrap();
    let row = &gridded.rates[0];
    let east = row[grid.linear_index(3, 3).unwrap()];
    let north = row[grid.linear_index(3, 4).unwrap()];
    let ok_polar = east.is_some_and(|v| (v - 3.0).abs() < 1e-9)
        && north.is_some_and(|v| (v - 1.0).abs() < 1e-9)
        && row.iter().filter(|c| c.is_some()).count() == 2;
    notes.push(format!("polar cells east {east:?} north {north:?}"));

    r.line(7, "ingestion", ok_threshold && ok_gauge && ok_polar, notes.join("; "), t0);
}

// 8 ------------------------------------------------------------------------

fn run_cli(args: &[&str], config: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_stormfield"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Runs every subcommand into a fresh directory with the given thread count.
fn pipeline(root: &Path, threads: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let work = root.join(format!("run-{threads}"));
    let sim = work.join("sim");
    let fit = work.join("fit");
    let ingested = work.join("ingested");
    let cfg = root.join("run.cfg");
    let ingest_cfg = root.join("ingest.cfg");
    run_cli(&["simulate"], &cfg, &sim, threads)?;
    let fit_cfg = work.join("fit.cfg");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("data.dir = raw", "data.dir = sim");
    std::fs::write(&fit_cfg, text).unwrap();
    run_cli(&["fit"], &fit_cfg, &fit, threads)?;
    run_cli(&["dic"], &fit_cfg, &fit, threads)?;
    run_cli(&["forecast"], &fit_cfg, &fit, threads)?;
    run_cli(&["ingest"], &ingest_cfg, &ingested, threads)?;
    let mut all = Vec::new();
    for (tag, dir) in [("sim", &sim), ("fit", &fit), ("ingested", &ingested)] {
        all.extend(snapshot(dir).into_iter().map(|(n, b)| (format!("{tag}/{n}"), b)));
    }
    Ok(all)
}

fn determinism(r: &mut Report) {
    let t0 = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let base = root.path();
    std::fs::write(
        base.join("run.cfg"),
        "grid.n = 8\nsimulate.obs_times = 6\nsimulate.gauges = 3\nmcmc.iters = 60\nmcmc.burnin = 20\n\
         mcmc.state_thin = 2\nenks.ensemble_size = 30\nenks.lag = 2\nrng.seed = 31\ndata.dir = raw\n\
         forecast.horizon = 2\nforecast.keep_paths = true\n",
    )
    .unwrap();
    let raw = base.join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    let mut polar = String::from("time_index,azimuth_deg,range_bin,z_dbz\n");
    for t in 1..=3 {
        for az in (0..360).step_by(15) {
            for bin in 1..=12 {
                polar.push_str(&format!("{t},{az},{bin},{:.2}\n", ((t * 7 + az / 15 + bin * 3) % 40) as f64 - 5.0));
            }
        }
    }
    std::fs::write(raw.join("radar_polar.csv"), polar).unwrap();
    std::fs::write(raw.join("gauge_meta.csv"), "gauge_id,row,col\nn1,2,2\nn2,7,5\n").unwrap();
    let mut gauges = String::from("time_index,gauge_id,accum_mm\n");
    for t in 1..=3 {
        gauges.push_str(&format!("{t},n1,0.{t}\n{t},n2,0.0{t}\n"));
    }
    std::fs::write(raw.join("gauges.csv"), gauges).unwrap();
    std::fs::write(base.join("ingest.cfg"), "grid.n = 8\ndata.dir = raw\ndata.obs_times = 3\n").unwrap();

    let outcome = (|| {
        let one = pipeline(base, 1)?;
        let many = pipeline(base, 4)?;
        std::fs::remove_dir_all(base.join("run-1")).map_err(|e| e.to_string())?;
        let again = pipeline(base, 1)?;
        Ok::<_, String>((one, many, again))
    })();
    let (pass, detail) = match outcome {
        Ok((one, many, again)) => {
            let names: Vec<&str> = one.iter().map(|(n, _)| n.as_str()).collect();
            let differing: Vec<&str> = one
                .iter()
                .zip(&many)
                .zip(&again)
                .filter(|((a, b), c)| a != b || a != c)
                .map(|((a, _), _)| a.0.as_str())
                .collect();
            let same_names = one.len() == many.len() && one.len() == again.len();
            (
                same_names && differing.is_empty(),
                format!("{} files from simulate, fit, dic, forecast and ingest compared across 1/4/1 threads; differing: {differing:?}", names.len()),
            )
        }
        Err(e) => (false, e),
    };
    r.line(8, "determinism", pass, detail, t0);
}
