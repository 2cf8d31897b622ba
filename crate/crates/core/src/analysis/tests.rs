use super::*;
use crate::enks::SmootherConfig;
use crate::gibbs::{run_genks, GibbsConfig, ModelSpec, StateDraw, StateSampler, TerminalDraw};
use crate::lattice::{GridSpec, Lattice, Velocity};
use crate::model::{time_map, Priors, StateVector, StaticParams};
use crate::simulator::simulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, Normal};

/// `log ∫_{−∞}^0 N(y; mean, 1/precision) dy` by composite Simpson in the
/// standardised variable.
fn censored_by_quadrature(mean: f64, precision: f64) -> f64 {
    let upper = -mean * precision.sqrt();
    let lower = upper.min(0.0) - 15.0;
    let steps = 40_000;
    let h = (upper - lower) / steps as f64;
    // Factor out the density at the upper end so far-tail integrals keep
    // their relative precision.
    let log_peak = -0.5 * upper * upper;
    let f = |u: f64| (-0.5 * u * u - log_peak).exp();
    let mut s = f(lower) + f(upper);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lower + k as f64 * h);
    }
    (s * h / 3.0).ln() + log_peak - 0.5 * LN_2PI
}

#[test]
fn censored_contribution_matches_integrated_latent_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..100 {
        let mean = rng.gen_range(-3.0..3.0);
        let precision = rng.gen_range(0.2..10.0);
        let got = tobit_log_density(ObsValue::Censored, mean, precision);
        let want = censored_by_quadrature(mean, precision);
        assert!((got - want).abs() < 1e-8, "({mean}, {precision}): {got} vs {want}");
    }
}

#[test]
fn censored_at_zero_mean_is_log_half() {
    for p in [0.1, 1.0, 50.0] {
        let v = tobit_log_density(ObsValue::Censored, 0.0, p);
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
    }
}

#[test]
fn positive_reading_is_gaussian_log_density() {
    for &(y, m, p) in &[(0.4, 0.1, 2.0), (2.5, -1.0, 100.0), (1e-3, 3.0, 0.5)] {
        let n = Normal::new(m, 1.0 / f64::sqrt(p)).unwrap();
        let got = tobit_log_density(ObsValue::Positive(y), m, p);
        assert!((got - n.ln_pdf(y)).abs() < 1e-12, "{got} vs {}", n.ln_pdf(y));
    }
    assert_eq!(tobit_log_density(ObsValue::Missing, 1.0, 1.0), 0.0);
}

#[test]
fn upper_tail_branches_join_smoothly() {
    let below = log_normal_sf(26.0 - 1e-9);
    let above = log_normal_sf(26.0);
    assert!((below - above).abs() < 1e-6, "{below} vs {above}");
    // Far beyond erfc's range the series still decays like −x²/2.
    let x = 60.0;
    let v = log_normal_sf(x);
    assert!(v.is_finite());
    assert!((v + 0.5 * x * x + (x * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-3);
    assert_eq!(log_normal_sf(-40.0), 0.0);
}

#[test]
fn observed_loglik_sums_radar_and_gauge_terms() {
    let data = ObservationSet::new(
        2,
        vec![vec![ObsValue::Positive(0.5), ObsValue::Censored]],
        vec!["g".into()],
        vec![1],
        vec![vec![ObsValue::Positive(0.2)]],
    )
    .unwrap();
    let hyper = Hyperparams::default();
    let theta = [0.3, -0.1];
    let mu_r = 0.05;
    let got = observed_data_loglik(&[&theta], mu_r, &hyper, &data).unwrap();

    let r0 = Normal::new(0.35, 1.0 / hyper.phi_r.sqrt()).unwrap().ln_pdf(0.5);
    let r1 = censored_by_quadrature(-0.05, hyper.phi_r);
    let g = Normal::new(-0.1, 1.0 / hyper.phi_g.sqrt()).unwrap().ln_pdf(0.2);
    assert!((got - (r0 + r1 + g)).abs() < 1e-9, "{got} vs {}", r0 + r1 + g);

    assert!(observed_data_loglik(&[&theta[..1]], mu_r, &hyper, &data).is_err());
    assert!(observed_data_loglik(&[], mu_r, &hyper, &data).is_err());
}

#[test]
fn complete_loglik_skips_missing_entries() {
    let hyper = Hyperparams::default();
    let complete = CompleteData {
        values: vec![vec![Some(-0.2), None, Some(0.1)]],
    };
    let theta = [0.0, 1.0];
    let got = complete_data_loglik(&[&theta], 0.1, &hyper, &[0], &complete).unwrap();
    let want = Normal::new(0.1, 1.0 / hyper.phi_r.sqrt()).unwrap().ln_pdf(-0.2)
        + Normal::new(0.0, 1.0 / hyper.phi_g.sqrt()).unwrap().ln_pdf(0.1);
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn dic_by_hand() {
    let r = dic(&[-10.0, -12.0]).unwrap();
    assert!((r.p_d - 4.0).abs() < 1e-12);
    assert!((r.mean_deviance - 22.0).abs() < 1e-12);
    assert!((r.dic - 26.0).abs() < 1e-12);

    let c = dic(&[-7.5; 5]).unwrap();
    assert_eq!(c.p_d, 0.0);
    assert_eq!(c.dic, 15.0);

    assert!(dic(&[1.0]).is_err());
    assert!(dic(&[]).is_err());
}

#[test]
fn dic_penalty_ignores_a_constant_shift() {
    let trace: Vec<f64> = (0..50).map(|k| -100.0 + (k as f64 * 0.7).sin()).collect();
    let shifted: Vec<f64> = trace.iter().map(|v| v - 3.0).collect();
    let (a, b) = (dic(&trace).unwrap(), dic(&shifted).unwrap());
    assert!((a.p_d - b.p_d).abs() < 1e-10);
    assert!((b.dic - a.dic - 6.0).abs() < 1e-10);
}

#[test]
fn percentile_interpolates_between_order_statistics() {
    assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    assert_eq!(percentile(&[5.0], 0.9), 5.0);
    let xs: Vec<f64> = (0..=100).map(f64::from).collect();
    assert!((percentile(&xs, 0.025) - 2.5).abs() < 1e-12);
    assert!((percentile(&xs, 0.975) - 97.5).abs() < 1e-12);
    assert_eq!(percentile(&xs, 0.0), 0.0);
    assert_eq!(percentile(&xs, 1.0), 100.0);
}

#[test]
fn identical_draws_summarise_to_zero_spread() {
    let slice = StateVector(vec![0.5, -1.0, 0.0, 0.0]);
    let draws: Vec<StateDraw> = (0..5)
        .map(|iteration| StateDraw {
            iteration,
            slices: vec![slice.clone(); 3],
        })
        .collect();
    let s = summarize_draws(&draws).unwrap();
    assert_eq!(s.len(), 3 * 2);
    assert_eq!(s[0].mean, 0.5);
    assert_eq!(s[0].sd, 0.0);
    assert_eq!(s[0].pr_positive, 1.0);
    assert_eq!(s[1].pr_positive, 0.0);
    assert!(summarize_draws(&draws[..1]).is_err());
}

fn small_run(state_thin: usize, thin: usize) -> crate::gibbs::DrawStore {
    let lattice = Lattice::new(GridSpec::new(3, 500.0).unwrap());
    let hyper = Hyperparams::default();
    let params = StaticParams {
        mu: 0.3,
        mu_r: -0.2,
        alpha: 0.8,
        beta: 0.1,
    };
    let sim = simulate(&params, &hyper, &Priors::default(), &lattice, &time_map(4, 0), 2, 8).unwrap();
    let model = ModelSpec::new(*lattice.grid(), hyper, Priors::default());
    let config = GibbsConfig {
        iters: 60,
        burnin: 20,
        thin,
        state_thin,
        sampler: StateSampler::Enks(SmootherConfig { ensemble_size: 20, lag: 2 }),
    };
    run_genks(&model, &sim.observed, &config, 31).unwrap()
}

#[test]
fn streaming_summaries_match_batch_recomputation() {
    let store = small_run(1, 1);
    assert_eq!(store.states.len(), store.accumulator.count);
    let stream = summarize_states(&store).unwrap();
    let batch = summarize_draws(&store.states).unwrap();
    assert_eq!(stream.theta.len(), batch.len());
    for (a, b) in stream.theta.iter().zip(&batch) {
        assert!((a.mean - b.mean).abs() < 1e-10);
        assert!((a.sd - b.sd).abs() < 1e-10);
        assert_eq!(a.pr_positive, b.pr_positive);
    }
    assert_eq!(stream.velocity.len(), store.velocities[0].len());
    for v in &stream.velocity {
        for c in 0..2 {
            assert!(v.lower[c] <= v.mean[c] && v.mean[c] <= v.upper[c]);
        }
    }
}

#[test]
fn accumulator_sees_thinned_out_iterations() {
    let store = small_run(2, 4);
    assert_eq!(store.accumulator.count, 40);
    assert_eq!(store.len(), 10);
    assert_eq!(store.states.len(), 5);
}

fn terminal(cells: usize, params: StaticParams, theta: &[f64], source: &[f64], nu: Velocity) -> TerminalDraw {
    let mut x = theta.to_vec();
    x.extend_from_slice(source);
    assert_eq!(x.len(), 2 * cells);
    TerminalDraw {
        params,
        state: StateVector(x),
        velocity: nu,
    }
}

fn forecast_params() -> StaticParams {
    StaticParams {
        mu: 0.4,
        mu_r: 0.0,
        alpha: 0.85,
        beta: 0.1,
    }
}

#[test]
fn noise_free_forecast_from_the_mean_level_stays_there() {
    let lattice = Lattice::new(GridSpec::new(4, 500.0).unwrap());
    let hyper = Hyperparams {
        phi_theta: f64::INFINITY,
        phi_s: f64::INFINITY,
        phi_nu: f64::INFINITY,
        ..Hyperparams::default()
    };
    let p = forecast_params();
    let d = terminal(16, p, &[p.mu; 16], &[0.0; 16], Velocity::new(0.05, -0.02));
    let f = forecast(&vec![d; 10], 5, &hyper, &lattice, 1, false).unwrap();
    assert_eq!(f.summaries.len(), 5);
    for s in &f.summaries {
        for i in 0..16 {
            assert!((s.mean[i] - p.mu).abs() < 1e-12);
            assert!(s.sd[i].abs() < 1e-12);
            assert_eq!(s.pr_positive[i], 1.0);
            assert!((s.rate_mean[i] - p.mu.exp_m1()).abs() < 1e-12);
        }
    }
}

#[test]
fn one_step_forecast_matches_the_stencil_by_hand() {
    let n = 4;
    let cells = n * n;
    let lattice = Lattice::new(GridSpec::new(n, 500.0).unwrap());
    let hyper = Hyperparams::default();
    let p = forecast_params();
    let nu = Velocity::new(0.06, -0.03);
    let theta: Vec<f64> = (0..cells).map(|k| ((k * 7) % 5) as f64 * 0.3 - 0.5).collect();
    let source: Vec<f64> = (0..cells).map(|k| ((k * 3) % 4) as f64 * 0.05 - 0.07).collect();
    let draws = 4000;
    let d = terminal(cells, p, &theta, &source, nu);
    let f = forecast(&vec![d; draws], 1, &hyper, &lattice, 9, false).unwrap();
    let s = &f.summaries[0];

    let sd = hyper.theta_innovation_var().sqrt();
    let at = |i: usize, j: usize| theta[(j % n) * n + (i % n)] - p.mu;
    for j in 0..n {
        for i in 0..n {
            let c = at(i, j);
            let e = at(i + 1, j);
            let w = at(i + n - 1, j);
            let no = at(i, j + 1);
            let so = at(i, j + n - 1);
            let expect = p.mu
                + p.alpha * (1.0 - 4.0 * p.beta) * c
                + p.alpha * (p.beta - nu.x) * e
                + p.alpha * (p.beta + nu.x) * w
                + p.alpha * (p.beta - nu.y) * no
                + p.alpha * (p.beta + nu.y) * so
                + source[j * n + i];
            let idx = j * n + i;
            let se = sd / (draws as f64).sqrt();
            assert!((s.mean[idx] - expect).abs() < 4.5 * se, "cell {idx}: {} vs {expect}", s.mean[idx]);
            assert!((s.sd[idx] - sd).abs() < 0.1 * sd, "cell {idx}: sd {}", s.sd[idx]);
        }
    }
}

#[test]
fn forecast_spread_grows_with_horizon() {
    let lattice = Lattice::new(GridSpec::new(4, 500.0).unwrap());
    let hyper = Hyperparams::default();
    let p = forecast_params();
    let d = terminal(16, p, &[0.2; 16], &[0.0; 16], Velocity::ZERO);
    let f = forecast(&vec![d; 2000], 6, &hyper, &lattice, 3, false).unwrap();
    let avg: Vec<f64> = f.summaries.iter().map(|s| s.sd.iter().sum::<f64>() / 16.0).collect();
    for k in 1..avg.len() {
        assert!(avg[k] > avg[k - 1], "step {}: {} then {}", k + 1, avg[k - 1], avg[k]);
    }
}

#[test]
fn forecast_covers_every_augmented_step_and_keeps_paths() {
    let lattice = Lattice::new(GridSpec::new(3, 500.0).unwrap());
    let hyper = Hyperparams {
        t_tilde: 2,
        ..Hyperparams::default()
    };
    let p = forecast_params();
    let draws: Vec<TerminalDraw> = (0..150)
        .map(|k| terminal(9, p, &[0.1 * (k % 3) as f64; 9], &[0.0; 9], Velocity::ZERO))
        .collect();
    let f = forecast(&draws, 2, &hyper, &lattice, 5, true).unwrap();
    assert_eq!(f.summaries.len(), 6);
    assert_eq!(f.summaries.last().unwrap().step, 6);
    let paths = f.paths.as_ref().unwrap();
    assert_eq!(paths.len(), 150);
    for (s, summary) in f.summaries.iter().enumerate() {
        for i in 0..9 {
            let m = paths.iter().map(|path| path[s][i]).sum::<f64>() / 150.0;
            assert!((m - summary.mean[i]).abs() < 1e-12);
            let rate = paths.iter().map(|path| path[s][i].max(0.0).exp_m1()).sum::<f64>() / 150.0;
            assert!((rate - summary.rate_mean[i]).abs() < 1e-12);
        }
    }
    let again = forecast(&draws, 2, &hyper, &lattice, 5, false).unwrap();
    assert_eq!(again.summaries, f.summaries);
    assert!(again.paths.is_none());
}

#[test]
fn forecast_rejects_bad_requests() {
    let lattice = Lattice::new(GridSpec::new(3, 500.0).unwrap());
    let hyper = Hyperparams::default();
    let p = forecast_params();
    let d = terminal(9, p, &[0.0; 9], &[0.0; 9], Velocity::ZERO);
    assert!(forecast(&vec![d.clone(); 4], 0, &hyper, &lattice, 0, false).is_err());
    assert!(forecast(std::slice::from_ref(&d), 1, &hyper, &lattice, 0, false).is_err());
    let wrong = terminal(4, p, &[0.0; 4], &[0.0; 4], Velocity::ZERO);
    assert!(forecast(&[wrong.clone(), wrong], 1, &hyper, &lattice, 0, false).is_err());
}
