use mgp_core::data::{Observations, ResponseValue};
use mgp_core::dgp::{SetupKind, SyntheticSetup};
use mgp_core::diagnostics::{
    acid_cumsum, concentration_sweep, l1_trace, quarter_slopes, write_trace_csv, SweepConfig,
};
use mgp_core::engine::{checkpoint_grid, run_mgp, EngineConfig};
use mgp_core::exec::Execution;
use mgp_core::functionals::LossSpec;
use mgp_core::rng::RngStream;
use mgp_core::rules::mock::{MockBehavior, MockConfig, MockServer};
use mgp_core::rules::{PluginModel, RuleConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn binary_obs(seed: u64, n: usize) -> Observations {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut obs = Observations::new(2, Some(2));
    for _ in 0..n {
        let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        obs.push(&x, ResponseValue::Class(usize::from(rng.random::<f64>() < 0.4)));
    }
    obs
}

fn intercept_only(width: usize) -> LossSpec {
    let mut mask = vec![false; width + 1];
    mask[0] = true;
    LossSpec::squared_error(width + 1).with_mask(mask)
}

fn mock_rule(behavior: MockBehavior) -> (MockServer, RuleConfig) {
    let server = MockServer::spawn(MockConfig::new(behavior)).unwrap();
    let rule = RuleConfig::External { endpoint: server.endpoint() };
    (server, rule)
}

#[test]
fn constant_rule_has_no_drift() {
    let (_server, rule) = mock_rule(MockBehavior::Constant { probs: vec![0.7, 0.3] });
    let obs = binary_obs(1, 10);
    let series = acid_cumsum(&rule, &obs, &[0.0, 0.0], 60, 200, 3).unwrap();
    assert_eq!(series.steps.first(), Some(&10));
    assert_eq!(series.steps.last(), Some(&60));
    assert!(series.cumulative.iter().all(|&c| c == 0.0));
}

#[test]
fn drifting_rule_telescopes() {
    let (_server, rule) = mock_rule(MockBehavior::Drifting);
    let obs = binary_obs(2, 15);
    let (n, horizon) = (15usize, 115usize);
    let series = acid_cumsum(&rule, &obs, &[0.5, -0.5], horizon, 50, 4).unwrap();
    let expected = 2.0 * (1.0 / (n as f64 + 2.0) - 1.0 / (horizon as f64 + 3.0));
    let total = *series.cumulative.last().unwrap();
    assert!((total - expected).abs() < 1e-9, "{total} vs {expected}");
    for (i, term) in series.steps.iter().zip(&series.terms) {
        let step = 2.0 * (1.0 / (*i as f64 + 2.0) - 1.0 / (*i as f64 + 3.0));
        assert!((term - step).abs() < 1e-12);
    }
}

#[test]
fn beta_bernoulli_is_a_martingale() {
    let obs = binary_obs(3, 20);
    let series = acid_cumsum(&RuleConfig::BetaBernoulli { a: 1.0, b: 1.0 }, &obs, &[0.0, 0.0], 120, 2000, 5).unwrap();
    for (term, se) in series.terms.iter().zip(&series.standard_errors) {
        assert!(*term <= 3.0 * se, "{term} vs {se}");
    }
}

fn gaussian_obs(seed: u64, n: usize) -> Observations {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut obs = Observations::new(1, None);
    for _ in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        obs.push(&[x], ResponseValue::Continuous(0.5 * x + rng.sample::<f64, _>(StandardNormal)));
    }
    obs
}

#[test]
fn bootstrap_trace_starts_at_zero_and_settles() {
    let obs = gaussian_obs(4, 20);
    let loss = intercept_only(1);
    let config = EngineConfig::new(20 + 2000, 40, 8).with_checkpoints(checkpoint_grid(20, 2020, 25));
    let run = run_mgp(&obs, &RuleConfig::BayesianBootstrap, &loss, &config).unwrap();
    let theta_n = loss.fit_rows(obs.features(), 1, obs.responses(), None).unwrap().theta;
    let trace = l1_trace(&run.trajectories, Some(&theta_n)).unwrap();
    assert_eq!(trace.steps[0], 20);
    assert_eq!(trace.mean[0], 0.0);
    assert_eq!(*trace.steps.last().unwrap(), 2020);
    let (first, last) = quarter_slopes(&trace.steps, &trace.mean).unwrap();
    assert!(last.abs() < 0.1 * first.abs(), "{first} {last}");

    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &trace, false).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("step,value,trajectory\n20,0,mean\n"));
    assert_eq!(text.lines().count(), trace.steps.len() + 1);
}

fn sweep(kind: SetupKind, rule: RuleConfig, loss: LossSpec, n_grid: Vec<usize>, draws: usize, steps: usize) -> Vec<mgp_core::diagnostics::SweepPoint> {
    let setup = SyntheticSetup::with_beta(kind, vec![1.0, -0.5], 50).unwrap();
    let config = SweepConfig { n_grid, steps, draws, seed: 21, execution: Execution::default() };
    concentration_sweep(&setup, &rule, &loss, &config).unwrap()
}

#[test]
fn plugin_posterior_concentrates() {
    let points = sweep(
        SetupKind::Gaussian { noise_sd: 0.1 },
        RuleConfig::Plugin { model: PluginModel::GaussianLinear },
        LossSpec::squared_error(3),
        vec![50, 500],
        60,
        1000,
    );
    let (small, large) = (points[0].sd.as_ref().unwrap(), points[1].sd.as_ref().unwrap());
    for j in 0..3 {
        assert!(large[j] < small[j], "coordinate {j}: {} vs {}", large[j], small[j]);
    }
}

#[test]
fn conjugate_sd_follows_the_closed_form() {
    let (prior_var, noise_var, steps) = (100.0, 1.0, 4000usize);
    let points = sweep(
        SetupKind::Gaussian { noise_sd: 1.0 },
        RuleConfig::ConjugateNormal { prior_mean: 0.0, prior_var, noise_var },
        intercept_only(2),
        vec![25, 100, 400],
        200,
        steps,
    );
    // sd of the augmented mean: posterior uncertainty of the mean plus noise
    // of the generated responses, both diluted by the observed rows
    let analytic = |n: usize| {
        let big_n = (n + steps) as f64;
        let future = steps as f64;
        let post_var = 1.0 / (1.0 / prior_var + n as f64 / noise_var);
        ((future / big_n).powi(2) * post_var + future * noise_var / big_n.powi(2)).sqrt()
    };
    let sds: Vec<f64> = points.iter().map(|p| p.sd.as_ref().unwrap()[0]).collect();
    for (p, sd) in points.iter().zip(&sds) {
        let a = analytic(p.n);
        assert!((sd / a - 1.0).abs() < 0.25, "n = {}: {sd} vs {a}", p.n);
    }
    assert!(sds.windows(2).all(|w| w[1] < w[0]));
    for w in sds.windows(2) {
        assert!((w[1] / w[0] - 0.5).abs() < 0.1, "{sds:?}");
    }
}

#[test]
fn single_draw_has_no_sd() {
    let points = sweep(
        SetupKind::Gaussian { noise_sd: 1.0 },
        RuleConfig::BayesianBootstrap,
        LossSpec::squared_error(3),
        vec![30],
        1,
        50,
    );
    assert!(points[0].sd.is_none());
    assert_eq!(points[0].draws.len(), 1);
}
